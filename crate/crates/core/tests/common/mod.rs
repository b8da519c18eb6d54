//! Shared fixtures: a scripted HTTP server on a local port, synthetic LLM
//! completions and replay-directory builders.
#![allow(dead_code)]

pub mod oracles;

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use negkit::distill::{Anchor, ProviderConfig, ProviderMode, ResponseRecord};
use negkit::taxonomy::{render_hedging_prompt, render_negation_prompt, sample_cues, CueInventory};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub headers: HashMap<String, String>,
    pub body: String,
}

impl Request {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).expect("request body is JSON")
    }
}

pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn json(status: u16, body: Value) -> Self {
        Reply {
            status,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Reply::json(status, json!({ "error": format!("status {status}") }))
    }

    pub fn delayed(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }
}

type Handler = dyn Fn(usize, &Request) -> Reply + Send + Sync;

pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<Request>>>,
}

impl MockServer {
    /// `handler` receives the 0-based hit number and the parsed request.
    pub fn start(handler: impl Fn(usize, &Request) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        {
            let hits = hits.clone();
            let requests = requests.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let hits = hits.clone();
                    let requests = requests.clone();
                    let handler = handler.clone();
                    std::thread::spawn(move || serve(stream, &hits, &requests, handler.as_ref()));
                }
            });
        }
        MockServer { url, hits, requests }
    }

    /// Replies from `script` in order, repeating the last entry once it runs out.
    pub fn scripted(script: Vec<Reply>) -> Self {
        let script: Vec<(u16, String)> = script.into_iter().map(|r| (r.status, r.body)).collect();
        MockServer::start(move |n, _| {
            let (status, body) = &script[n.min(script.len() - 1)];
            Reply {
                status: *status,
                body: body.clone(),
                delay: Duration::ZERO,
            }
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<Request> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, hits: &AtomicUsize, requests: &Mutex<Vec<Request>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = HashMap::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut body = vec![0u8; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let req = Request {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let n = hits.fetch_add(1, Ordering::SeqCst);
    requests.lock().unwrap().push(req.clone());
    let reply = handler(n, &req);
    if !reply.delay.is_zero() {
        std::thread::sleep(reply.delay);
    }
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
    let _ = stream.flush();
}

pub fn chat_reply(content: &str) -> Reply {
    Reply::json(200, json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }))
}

/// The anchor sentence inside a rendered distillation prompt.
pub fn prompt_text(prompt: &str) -> &str {
    let rest = prompt.strip_prefix("Text: ").expect("prompt starts with the text slot");
    &rest[..rest.find("\n\n").expect("text is followed by a blank line")]
}

pub fn negation_completion(text: &str) -> String {
    format!(
        "1. \"verbal\": It is not true that {text}\n2. \"absolute\": Never: {text}\n3. \"affixal\": Un-{text}\n4. \"lexical\": Opposite of {text}"
    )
}

pub fn hedging_completion(text: &str) -> String {
    format!("1. \"word\": Probably {text}\n2. \"phrase\": It is unclear whether {text}")
}

/// A plausible completion for either distillation prompt.
pub fn fake_completion(prompt: &str) -> String {
    let text = prompt_text(prompt);
    if prompt.contains("Negate the text") {
        negation_completion(text)
    } else {
        hedging_completion(text)
    }
}

pub fn anchors(n: usize) -> Vec<Anchor> {
    (0..n)
        .map(|i| Anchor {
            id: format!("a{i:03}"),
            text: format!("The dog number {i} runs across the park"),
            source: "fixture".into(),
        })
        .collect()
}

pub fn write_anchors(path: &Path, anchors: &[Anchor]) {
    negkit::jsonl::write_jsonl(path, anchors).unwrap();
}

pub fn replay_config(dir: &Path) -> ProviderConfig {
    ProviderConfig {
        mode: ProviderMode::Replay,
        replay_dir: Some(dir.to_path_buf()),
        ..ProviderConfig::default()
    }
}

/// Records both distillation prompts of every anchor (by ordinal) into `dir`.
pub fn record_replay(dir: &Path, config: &ProviderConfig, anchors: &[Anchor], inventory: &CueInventory, seed: u64) {
    for (i, a) in anchors.iter().enumerate() {
        let (word, phrase) = sample_cues(inventory, seed, i as u64).unwrap();
        for prompt in [
            render_negation_prompt(&a.text).unwrap(),
            render_hedging_prompt(&a.text, &word, &phrase).unwrap(),
        ] {
            ResponseRecord {
                id: config.request_key(&prompt),
                model: config.model_name.clone(),
                response: fake_completion(&prompt),
                prompt,
            }
            .write_to(dir)
            .unwrap();
        }
    }
}

pub fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

pub const FIXTURE_TIMESTAMP: &str = "2024-01-01T00:00:00Z";

fn write_lines(path: &Path, rows: &[Value]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// Small benchmarks in which the relevant document shares the query's key word.
pub fn write_benchmarks(dir: &Path, n: usize) {
    let nevir: Vec<Value> = (0..n)
        .map(|i| {
            json!({ "id": format!("n{i:03}"), "q1": format!("is topic{i} open"), "d1": format!("topic{i} is open today"),
                    "q2": format!("is topic{i} closed"), "d2": format!("topic{i} is closed today") })
        })
        .collect();
    let excluir: Vec<Value> = (0..n)
        .map(|i| {
            json!({ "id": format!("e{i:03}"), "query": format!("find topic{i} open"),
                    "relevant": format!("topic{i} open now"), "distractor": format!("topic{i} closed now") })
        })
        .collect();
    let cannot: Vec<Value> = (0..n)
        .map(|i| {
            json!({ "id": format!("c{i:03}"), "s1": format!("the cat {i} sleeps"), "s2": format!("the cat {i} does not sleep"),
                    "gold": (i % 5) as f64 / 4.0, "pair_kind": null })
        })
        .collect();
    let m3: Vec<Value> = (0..n)
        .map(|i| {
            let s1 = format!("drug {i} reduces pain");
            let (kind, s2, gold) = match i % 3 {
                0 => ("negation", format!("not {s1}"), -1.0),
                1 => ("no_evidence", format!("There is no evidence that {s1}"), 0.0),
                _ => ("hedged", format!("{s1} might"), 1.0),
            };
            json!({ "id": format!("m{i:03}"), "s1": s1, "s2": s2, "gold": gold, "pair_kind": kind })
        })
        .collect();
    write_lines(&dir.join("bench/nevir.jsonl"), &nevir);
    write_lines(&dir.join("bench/excluir.jsonl"), &excluir);
    write_lines(&dir.join("bench/cannot.jsonl"), &cannot);
    write_lines(&dir.join("bench/m3.jsonl"), &m3);
}

/// Lays out anchors, a replay directory, benchmarks and a run config that
/// points at them with relative paths. Returns the config path.
pub fn write_pipeline_fixture(dir: &Path, n_anchors: usize, seed: u64) -> std::path::PathBuf {
    let list = anchors(n_anchors);
    write_anchors(&dir.join("anchors.jsonl"), &list);
    let replay = dir.join("replay");
    record_replay(&replay, &replay_config(&replay), &list, &CueInventory::default(), seed);
    write_benchmarks(dir, 12);
    let config = format!(
        r#"seed = {seed}
worker_count = 3
max_failure_rate = 0.5

[provider]
mode = "replay"
replay_dir = "replay"

[train]
learning_rate = 0.05
batch_size = 8
epochs = 5

[backend]
kind = "hash_stub"
dim = 16
seed = 3

[paths]
anchors = "anchors.jsonl"
variants = "out/variants.jsonl"
triples = "out/triples.jsonl"
dropped = "out/dropped.jsonl"
adapter = "out/adapter.hadp"
report = "out/report.json"
pairs = "out/pairs.jsonl"

[benchmarks]
nevir = "bench/nevir.jsonl"
excluir = "bench/excluir.jsonl"
cannot = "bench/cannot.jsonl"
m3 = "bench/m3.jsonl"

[eval]
timestamp = "{FIXTURE_TIMESTAMP}"
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn negkit(args: &[&str], envs: &[(&str, &str)]) -> Run {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_negkit"));
    cmd.args(args).env_remove("SOURCE_DATE_EPOCH");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("spawn negkit");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// distill, build, train and eval in sequence; panics on any nonzero exit.
pub fn run_pipeline(config: &Path) {
    let c = config.to_str().unwrap();
    for cmd in ["distill", "build", "train", "eval"] {
        let r = negkit(&[cmd, "--config", c], &[]);
        assert_eq!(r.code, 0, "{cmd} failed:\n{}\n{}", r.stdout, r.stderr);
    }
}
