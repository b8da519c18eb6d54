mod common;

use std::fs;
use std::path::Path;

use common::*;
use negkit::contrastive::AdapterParams;
use negkit::eval::MetricReport;
use serde_json::Value;

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn edit(config: &Path, from: &str, to: &str) {
    let text = fs::read_to_string(config).unwrap();
    assert!(text.contains(from), "config lacks `{from}`");
    fs::write(config, text.replacen(from, to, 1)).unwrap();
}

fn cfg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn distill_over_replay_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 10, 21);
    let r = negkit(&["distill", "--config", cfg(&config)], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let variants = dir.path().join("out/variants.jsonl");
    assert_eq!(lines(&variants).len(), 60);
    assert!(r.stdout.contains("variants"));
    let failures: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/variants.failures.json")).unwrap()).unwrap();
    assert_eq!(failures["failed_anchors"], 0);

    // every stderr line is a JSON log record
    for l in r.stderr.lines() {
        let v: Value = serde_json::from_str(l).unwrap_or_else(|e| panic!("{e}: {l}"));
        assert!(v.get("level").is_some());
    }

    let first = sha256_file(&variants);
    let again = negkit(&["distill", "--config", cfg(&config), "--workers", "1"], &[]);
    assert_eq!(again.code, 0);
    assert_eq!(sha256_file(&variants), first);
}

#[test]
fn distill_missing_anchors_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 2, 0);
    fs::remove_file(dir.path().join("anchors.jsonl")).unwrap();
    let r = negkit(&["distill", "--config", cfg(&config)], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("anchors.jsonl"), "{}", r.stderr);
}

#[test]
fn distill_failure_ceiling() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 6, 4);
    // a different seed draws different cues, so every hedging prompt misses the replay
    let r = negkit(&["distill", "--config", cfg(&config), "--seed", "5"], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("failure rate"), "{}", r.stderr);
    assert!(r.stdout.contains("hedging-request"));
    assert_eq!(lines(&dir.path().join("out/variants.jsonl")).len(), 24);

    let custom_out = dir.path().join("elsewhere/v.jsonl");
    let ok = negkit(&["distill", "--config", cfg(&config), "--out", cfg(&custom_out)], &[]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    assert_eq!(lines(&custom_out).len(), 36);
}

#[test]
fn build_counts_and_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 5, 1);
    assert_eq!(negkit(&["distill", "--config", cfg(&config)], &[]).code, 0);
    let r = negkit(&["build", "--config", cfg(&config)], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let triples = lines(&dir.path().join("out/triples.jsonl"));
    assert_eq!(triples.len(), 40);
    assert!(r.stdout.lines().any(|l| l.starts_with("sum n*h") && l.trim_end().ends_with("40")), "{}", r.stdout);
    assert_eq!(triples[0]["anchor_id"], "a000");

    // threshold 0 keeps nothing
    let zero = dir.path().join("zero.toml");
    fs::write(&zero, fs::read_to_string(&config).unwrap().replace("[train]", "[filter]\nmax_edit_distance = 0\n\n[train]")).unwrap();
    let z = negkit(&["build", "--config", cfg(&zero), "--out", cfg(&dir.path().join("out/zero.jsonl"))], &[]);
    assert_eq!(z.code, 0, "{}", z.stderr);
    assert!(lines(&dir.path().join("out/zero.jsonl")).is_empty());
    assert_eq!(lines(&dir.path().join("out/dropped.jsonl")).len(), 30);

    // empty variants file
    fs::write(dir.path().join("out/variants.jsonl"), "").unwrap();
    let e = negkit(&["build", "--config", cfg(&config)], &[]);
    assert_eq!(e.code, 0, "{}", e.stderr);
    assert_eq!(fs::read_to_string(dir.path().join("out/triples.jsonl")).unwrap(), "");
}

#[test]
fn build_reports_schema_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 2, 1);
    assert_eq!(negkit(&["distill", "--config", cfg(&config)], &[]).code, 0);
    let path = dir.path().join("out/variants.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("{\"anchor_id\": \"a000\"}\n");
    fs::write(&path, text).unwrap();
    let r = negkit(&["build", "--config", cfg(&config)], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains(":13"), "{}", r.stderr);
}

#[test]
fn train_is_deterministic_and_lr_zero_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 6, 2);
    for cmd in ["distill", "build", "train"] {
        let r = negkit(&[cmd, "--config", cfg(&config)], &[]);
        assert_eq!(r.code, 0, "{cmd}: {}", r.stderr);
    }
    let adapter = dir.path().join("out/adapter.hadp");
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/adapter.hadp.json")).unwrap()).unwrap();
    assert_eq!(sidecar["dim"], 16);
    assert_eq!(sidecar["triples"], 48);
    assert_eq!(sidecar["epoch_losses"].as_array().unwrap().len(), 5);
    let first = sha256_file(&adapter);
    assert_eq!(negkit(&["train", "--config", cfg(&config), "--workers", "1"], &[]).code, 0);
    assert_eq!(sha256_file(&adapter), first);

    edit(&config, "learning_rate = 0.05", "learning_rate = 0.0");
    let ident = dir.path().join("out/ident.hadp");
    assert_eq!(negkit(&["train", "--config", cfg(&config), "--out", cfg(&ident)], &[]).code, 0);
    assert_eq!(AdapterParams::load(&ident).unwrap(), AdapterParams::identity(16));
}

#[test]
fn eval_reports_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 3, 2);
    let r = negkit(&["eval", "--config", cfg(&config)], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report_path = dir.path().join("out/report.json");
    let reports: Vec<MetricReport> = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|m| m.timestamp == FIXTURE_TIMESTAMP && m.sample_count == 12));
    assert!(r.stdout.contains("right_rank_pairwise"));
    let first = sha256_file(&report_path);
    assert_eq!(negkit(&["eval", "--config", cfg(&config)], &[]).code, 0);
    assert_eq!(sha256_file(&report_path), first);

    let one = negkit(&["eval", "--config", cfg(&config), "--benchmark", "m3"], &[]);
    assert_eq!(one.code, 0);
    let reports: Vec<MetricReport> = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);

    AdapterParams::identity(16).save(&dir.path().join("out/adapter.hadp")).unwrap();
    let c = negkit(&["eval", "--config", cfg(&config), "--compare"], &[]);
    assert_eq!(c.code, 0, "{}", c.stderr);
    let reports: Vec<MetricReport> = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(reports.len(), 8);
    let (base, adapted) = reports.split_at(4);
    for (b, a) in base.iter().zip(adapted) {
        assert_eq!(b.benchmark, a.benchmark);
        assert!((a.value - b.value).abs() <= 1e-9, "{b:?} vs {a:?}");
        assert!(a.backend.contains("+adapter:"));
    }
    assert!(c.stdout.contains("delta"));
}

#[test]
fn eval_unknown_benchmark_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 1, 0);
    let r = negkit(&["eval", "--config", cfg(&config), "--benchmark", "mteb"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("nevir, excluir, cannot, m3"), "{}", r.stderr);
}

#[test]
fn eval_timestamp_from_source_date_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 1, 0);
    edit(&config, &format!("timestamp = \"{FIXTURE_TIMESTAMP}\""), "");
    let r = negkit(&["eval", "--config", cfg(&config), "--benchmark", "nevir"], &[("SOURCE_DATE_EPOCH", "86400")]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let reports: Vec<MetricReport> = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(reports[0].timestamp, "1970-01-02T00:00:00Z");
}

fn judge_answer(prompt: &str) -> String {
    let field = |name: &str| {
        prompt
            .lines()
            .find_map(|l| l.strip_prefix(name))
            .unwrap_or_default()
            .to_string()
    };
    if prompt.contains("Which document is more relevant") {
        let q: Vec<String> = field("Query: ").split(' ').map(String::from).collect();
        let overlap = |d: &str| d.split(' ').filter(|w| q.iter().any(|x| x == w)).count();
        if overlap(&field("Document 1: ")) >= overlap(&field("Document 2: ")) {
            "Answer: 1".into()
        } else {
            "2".into()
        }
    } else {
        let s2 = field("S2: ");
        if s2.starts_with("not ") {
            "-1.0".into()
        } else if s2.starts_with("There is no evidence") {
            "Score: 0".into()
        } else if s2.contains("might") {
            "1".into()
        } else {
            "I am not sure".into()
        }
    }
}

#[test]
fn eval_with_llm_judge() {
    let server = MockServer::start(|_, req| {
        let prompt = req.json()["messages"][0]["content"].as_str().unwrap().to_string();
        chat_reply(&judge_answer(&prompt))
    });
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 1, 0);
    edit(
        &config,
        "mode = \"replay\"",
        &format!("mode = \"http\"\nendpoint_url = \"{}\"\napi_key_env = \"NEGKIT_JUDGE_KEY\"", server.url),
    );
    let r = negkit(
        &["eval", "--config", cfg(&config), "--judge", "--benchmark", "nevir,excluir,m3"],
        &[("NEGKIT_JUDGE_KEY", "k")],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let reports: Vec<MetricReport> = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let values: Vec<f64> = reports.iter().map(|m| m.value).collect();
    assert_eq!(values[0], 100.0);
    assert_eq!(values[1], 100.0);
    assert!((values[2] - 1.0).abs() < 1e-12);
    assert_eq!(server.hits(), 12 * 2 + 12 + 12);

    // without the key the run stops before any request
    let before = server.hits();
    let r = negkit(&["eval", "--config", cfg(&config), "--judge"], &[]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert_eq!(server.hits(), before);
}

#[test]
fn embed_cache_and_cache_first_training() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 4, 3);
    for cmd in ["distill", "build"] {
        assert_eq!(negkit(&[cmd, "--config", cfg(&config)], &[]).code, 0);
    }
    edit(&config, "pairs = ", "cache_index = \"out/cache.index.jsonl\"\ncache_vectors = \"out/cache.hedv\"\npairs = ");
    let r = negkit(&["embed-cache", "--config", cfg(&config), "--include-benchmarks"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let index = lines(&dir.path().join("out/cache.index.jsonl"));
    // 4 anchors x 7 texts + 4 benchmarks x 12 samples (4 + 3 + 2 + 2 texts)
    assert_eq!(index.len(), 4 * 7 + 12 * 11);

    // the cache serves every text, so even a backend that cannot run works
    edit(&config, "kind = \"hash_stub\"\ndim = 16\nseed = 3", "kind = \"remote\"\nurl = \"http://127.0.0.1:9\"\nmodel_name = \"none\"\nmax_retries = 0");
    let t = negkit(&["train", "--config", cfg(&config)], &[]);
    assert_eq!(t.code, 0, "{}", t.stderr);
}

#[test]
fn export_pairs_doubles_triples() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 2, 3);
    for cmd in ["distill", "build", "export-pairs"] {
        assert_eq!(negkit(&[cmd, "--config", cfg(&config)], &[]).code, 0);
    }
    let pairs = lines(&dir.path().join("out/pairs.jsonl"));
    assert_eq!(pairs.len(), 2 * 16);
    assert_eq!(pairs[0]["answer"], "Yes");
    assert_eq!(pairs[1]["answer"], "No");
    assert!(pairs[0]["prompt"].as_str().unwrap().ends_with("Do the two sentences have opposite meaning? Yes or No.\nAnswer:"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 1, 0);
    let text = fs::read_to_string(&config).unwrap();
    let cases = [
        text.replace("pairs = \"out/pairs.jsonl\"", "pairs = \"out/triples.jsonl\""),
        text.replace("worker_count = 3", "worker_count = 0"),
        text.replace("worker_count = 3", "worker_count = 3\nmystery = 1"),
        text.replace("replay_dir = \"replay\"", "replay_dir = \"${NEGKIT_UNSET_DIR}\""),
        text.replace("dim = 16", "dim = 1"),
        text.replace("max_failure_rate = 0.5", "max_failure_rate = 0.0"),
    ];
    for (i, bad) in cases.iter().enumerate() {
        let p = dir.path().join(format!("bad{i}.toml"));
        fs::write(&p, bad).unwrap();
        for cmd in ["distill", "eval"] {
            let r = negkit(&[cmd, "--config", cfg(&p)], &[]);
            assert_eq!(r.code, 2, "case {i} {cmd}: {}", r.stderr);
        }
    }
    assert_eq!(negkit(&["distill"], &[]).code, 2);
    assert_eq!(negkit(&["frobnicate"], &[]).code, 2);
    assert_eq!(negkit(&["distill", "--config", "/nonexistent/run.toml"], &[]).code, 2);
}

#[test]
fn env_interpolation_in_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_pipeline_fixture(dir.path(), 2, 0);
    edit(&config, "replay_dir = \"replay\"", "replay_dir = \"${NEGKIT_REPLAY}\"");
    let r = negkit(
        &["distill", "--config", cfg(&config)],
        &[("NEGKIT_REPLAY", dir.path().join("replay").to_str().unwrap())],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
}
