//! Minimal-pair filtering by character edit distance and assembly of the
//! surviving variants into training triples.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::{Anchor, GeneratedVariant};
use crate::jsonl::{read_jsonl_with, write_jsonl, JsonlError};
use crate::taxonomy::{HedgeType, NegationType, VariantKind, PAIR_PROMPT};

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance if it is at most `max`, else `None`.
///
/// Strips the common prefix and suffix, then fills only the diagonal band
/// `|i - j| <= max` and stops as soon as a whole row exceeds `max`.
pub fn levenshtein_within(a: &str, b: &str, max: usize) -> Option<usize> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > max {
        return None;
    }
    if n == 0 || m == 0 {
        return Some(n.max(m));
    }
    let inf = max + 1;
    let mut prev: Vec<usize> = (0..=m).map(|j| if j <= max { j } else { inf }).collect();
    let mut cur = vec![inf; m + 1];
    for i in 1..=n {
        let lo = i.saturating_sub(max).max(1);
        let hi = m.min(i + max);
        cur[0] = if i <= max { i } else { inf };
        cur[lo - 1] = if lo == 1 { cur[0] } else { inf };
        if hi < m {
            cur[hi + 1] = inf;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1).min(inf);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= max).then_some(prev[m])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub max_edit_distance: usize,
    /// Compare lowercased text. Off by default: the threshold is in raw characters.
    pub case_fold: bool,
    /// Collapse whitespace runs to one space before comparing. Off by default.
    pub normalize_whitespace: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_edit_distance: 60,
            case_fold: false,
            normalize_whitespace: false,
        }
    }
}

impl FilterConfig {
    fn prepare(&self, s: &str) -> String {
        let s = if self.normalize_whitespace {
            s.split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            s.to_string()
        };
        if self.case_fold {
            s.to_lowercase()
        } else {
            s
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("variant references anchor `{found}` but was filtered against `{expected}`")]
    AnchorMismatch { expected: String, found: String },
}

/// Optional second-stage filter deciding whether a variant keeps the intended
/// relation to its anchor (for example an NLI model or an LLM judge).
pub trait VariantJudge: Sync {
    fn keep(&self, anchor: &Anchor, variant: &GeneratedVariant) -> Result<bool, String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    EditDistance { distance: usize },
    Judge { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub variant: GeneratedVariant,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterOutcome {
    pub kept: Vec<GeneratedVariant>,
    pub dropped: Vec<Dropped>,
}

/// Keeps variants within `max_edit_distance` characters of the anchor.
pub fn filter_variants(
    anchor: &Anchor,
    variants: &[GeneratedVariant],
    config: &FilterConfig,
) -> Result<FilterOutcome, FilterError> {
    filter_variants_with_judge(anchor, variants, config, None)
}

pub fn filter_variants_with_judge(
    anchor: &Anchor,
    variants: &[GeneratedVariant],
    config: &FilterConfig,
    judge: Option<&dyn VariantJudge>,
) -> Result<FilterOutcome, FilterError> {
    let anchor_text = config.prepare(&anchor.text);
    let mut out = FilterOutcome::default();
    for v in variants {
        if v.anchor_id != anchor.id {
            return Err(FilterError::AnchorMismatch {
                expected: anchor.id.clone(),
                found: v.anchor_id.clone(),
            });
        }
        let text = config.prepare(&v.text);
        if levenshtein_within(&anchor_text, &text, config.max_edit_distance).is_none() {
            out.dropped.push(Dropped {
                variant: v.clone(),
                reason: DropReason::EditDistance {
                    distance: levenshtein(&anchor_text, &text),
                },
            });
            continue;
        }
        if let Some(judge) = judge {
            match judge.keep(anchor, v) {
                Ok(true) => {}
                Ok(false) => {
                    out.dropped.push(Dropped {
                        variant: v.clone(),
                        reason: DropReason::Judge {
                            message: "rejected".into(),
                        },
                    });
                    continue;
                }
                Err(message) => {
                    out.dropped.push(Dropped {
                        variant: v.clone(),
                        reason: DropReason::Judge { message },
                    });
                    continue;
                }
            }
        }
        out.kept.push(v.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triple {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub neg_kind: NegationType,
    pub hedge_kind: HedgeType,
    pub anchor_id: String,
}

impl Triple {
    pub fn texts(&self) -> TripleTexts {
        TripleTexts {
            anchor: self.anchor.clone(),
            positive: self.positive.clone(),
            negative: self.negative.clone(),
        }
    }
}

/// The three sentences of a triple, without provenance. This is what the
/// trainer consumes; it also reads the published dataset layout, whose rows
/// carry `anchor`, `positive` and `negative` plus fields that are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleTexts {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BuildOutput {
    pub triples: Vec<Triple>,
    /// Combinations skipped because two of the three texts were identical.
    pub skipped_degenerate: usize,
}

/// Cartesian product of each anchor's kept negations and kept hedges.
///
/// Anchors are visited in id order and each product in kind order, so the
/// output is canonical. Variants whose anchor id is unknown are ignored.
pub fn build_triples(anchors: &[Anchor], kept: &[GeneratedVariant]) -> BuildOutput {
    let mut by_anchor: BTreeMap<&str, Vec<&GeneratedVariant>> = BTreeMap::new();
    for v in kept {
        by_anchor.entry(v.anchor_id.as_str()).or_default().push(v);
    }
    let mut sorted: Vec<&Anchor> = anchors.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut out = BuildOutput::default();
    for anchor in sorted {
        let Some(vs) = by_anchor.get(anchor.id.as_str()) else {
            continue;
        };
        let mut negs: Vec<(NegationType, &str)> = Vec::new();
        let mut hedges: Vec<(HedgeType, &str)> = Vec::new();
        for v in vs {
            match v.kind {
                VariantKind::Negation(k) => negs.push((k, &v.text)),
                VariantKind::Hedge(k) => hedges.push((k, &v.text)),
            }
        }
        negs.sort();
        hedges.sort();
        for &(neg_kind, negative) in &negs {
            for &(hedge_kind, positive) in &hedges {
                let a = anchor.text.as_str();
                if a == negative || a == positive || negative == positive {
                    out.skipped_degenerate += 1;
                    continue;
                }
                out.triples.push(Triple {
                    anchor: anchor.text.clone(),
                    positive: positive.to_string(),
                    negative: negative.to_string(),
                    neg_kind,
                    hedge_kind,
                    anchor_id: anchor.id.clone(),
                });
            }
        }
    }
    out
}

pub fn write_triples(path: &Path, triples: &[Triple]) -> Result<(), JsonlError> {
    write_jsonl(path, triples)
}

pub fn read_triples(path: &Path) -> Result<Vec<Triple>, JsonlError> {
    read_jsonl_with(path, |t: Triple, _| Ok(t))
}

/// Reads either this crate's triple rows or the published dataset rows.
pub fn read_triple_texts(path: &Path) -> Result<Vec<TripleTexts>, JsonlError> {
    read_jsonl_with(path, |t: TripleTexts, _| {
        if t.anchor.is_empty() || t.positive.is_empty() || t.negative.is_empty() {
            Err("triple has an empty text".to_string())
        } else {
            Ok(t)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairAnswer {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub prompt: String,
    pub answer: PairAnswer,
}

pub fn render_pair_prompt(s1: &str, s2: &str) -> String {
    PAIR_PROMPT
        .render(&[("s1", s1), ("s2", s2)])
        .expect("pair template slots are fixed")
}

/// Each triple becomes an opposite-meaning pair (anchor, negative) answered
/// `Yes` followed by (anchor, positive) answered `No`.
pub fn triples_to_pairs(triples: &[Triple]) -> Vec<PairExample> {
    triples
        .iter()
        .flat_map(|t| {
            [
                PairExample {
                    prompt: render_pair_prompt(&t.anchor, &t.negative),
                    answer: PairAnswer::Yes,
                },
                PairExample {
                    prompt: render_pair_prompt(&t.anchor, &t.positive),
                    answer: PairAnswer::No,
                },
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor(id: &str, text: &str) -> Anchor {
        Anchor {
            id: id.into(),
            text: text.into(),
            source: "snli".into(),
        }
    }

    fn variant(anchor_id: &str, kind: VariantKind, text: &str) -> GeneratedVariant {
        GeneratedVariant {
            anchor_id: anchor_id.into(),
            kind,
            cue: kind.is_hedge().then(|| "may".to_string()),
            text: text.into(),
            raw_response_id: "r".into(),
        }
    }

    #[test]
    fn known_distances() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
        assert_eq!(levenshtein("héllo", "hello"), 1);
        assert_eq!(levenshtein_within("kitten", "sitting", 3), Some(3));
        assert_eq!(levenshtein_within("kitten", "sitting", 2), None);
        assert_eq!(levenshtein_within("", "", 0), Some(0));
        assert_eq!(levenshtein_within("ab", "abcd", 1), None);
    }

    #[test]
    fn small_edit_is_kept() {
        let a = anchor("a1", "The plane is flying.");
        let v = variant("a1", VariantKind::Negation(NegationType::Verbal), "The plane is not flying.");
        let out = filter_variants(&a, &[v], &FilterConfig::default()).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(levenshtein(&a.text, &out.kept[0].text), 4);
    }

    #[test]
    fn rewrite_is_dropped_with_distance() {
        let a = anchor("a1", &"a".repeat(120));
        let v = variant("a1", VariantKind::Hedge(HedgeType::Word), &"b".repeat(120));
        let out = filter_variants(&a, &[v], &FilterConfig::default()).unwrap();
        assert!(out.kept.is_empty());
        assert_eq!(out.dropped[0].reason, DropReason::EditDistance { distance: 120 });
    }

    #[test]
    fn zero_threshold_keeps_only_identical() {
        let a = anchor("a1", "Same text.");
        let vs = [
            variant("a1", VariantKind::Negation(NegationType::Verbal), "Same text."),
            variant("a1", VariantKind::Negation(NegationType::Lexical), "Same text!"),
        ];
        let cfg = FilterConfig {
            max_edit_distance: 0,
            ..Default::default()
        };
        let out = filter_variants(&a, &vs, &cfg).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].text, "Same text.");
    }

    #[test]
    fn anchor_mismatch() {
        let a = anchor("a1", "x");
        let v = variant("a2", VariantKind::Negation(NegationType::Verbal), "y");
        assert_eq!(
            filter_variants(&a, &[v], &FilterConfig::default()),
            Err(FilterError::AnchorMismatch {
                expected: "a1".into(),
                found: "a2".into()
            })
        );
    }

    #[test]
    fn normalization_toggles() {
        let a = anchor("a1", "The  Plane flies");
        let v = variant("a1", VariantKind::Negation(NegationType::Verbal), "the plane flies");
        let strict = FilterConfig {
            max_edit_distance: 1,
            ..Default::default()
        };
        assert!(filter_variants(&a, std::slice::from_ref(&v), &strict).unwrap().kept.is_empty());
        let loose = FilterConfig {
            max_edit_distance: 0,
            case_fold: true,
            normalize_whitespace: true,
        };
        assert_eq!(filter_variants(&a, &[v], &loose).unwrap().kept.len(), 1);
    }

    struct RejectLexical;
    impl VariantJudge for RejectLexical {
        fn keep(&self, _: &Anchor, v: &GeneratedVariant) -> Result<bool, String> {
            Ok(v.kind != VariantKind::Negation(NegationType::Lexical))
        }
    }

    #[test]
    fn judge_hook_drops() {
        let a = anchor("a1", "The plane flies.");
        let vs = [
            variant("a1", VariantKind::Negation(NegationType::Verbal), "The plane never flies."),
            variant("a1", VariantKind::Negation(NegationType::Lexical), "The plane lands."),
        ];
        let out = filter_variants_with_judge(&a, &vs, &FilterConfig::default(), Some(&RejectLexical)).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert!(matches!(out.dropped[0].reason, DropReason::Judge { .. }));
    }

    #[test]
    fn empty_hedge_factor_gives_no_triples() {
        let a = anchor("a1", "The plane flies.");
        let vs = [variant("a1", VariantKind::Negation(NegationType::Verbal), "The plane does not fly.")];
        assert!(build_triples(&[a], &vs).triples.is_empty());
    }

    #[test]
    fn degenerate_combinations_skipped() {
        let a = anchor("a1", "The plane flies.");
        let vs = [
            variant("a1", VariantKind::Negation(NegationType::Verbal), "The plane flies."),
            variant("a1", VariantKind::Hedge(HedgeType::Word), "The plane may fly."),
        ];
        let out = build_triples(&[a], &vs);
        assert!(out.triples.is_empty());
        assert_eq!(out.skipped_degenerate, 1);
    }

    #[test]
    fn skateboard_pairs() {
        let t = Triple {
            anchor: "A boy holding his skateboard behind him and covering his behind.".into(),
            positive: "The boy, it seems, held his skateboard behind him and covered his behind.".into(),
            negative: "The boy is sitting comfortably without his skateboard and with his behind exposed.".into(),
            neg_kind: NegationType::Lexical,
            hedge_kind: HedgeType::Phrase,
            anchor_id: "coco-1".into(),
        };
        let pairs = triples_to_pairs(&[t]);
        assert_eq!(pairs.len(), 2);
        assert_eq!(
            pairs[0].prompt,
            "Sentence 1: A boy holding his skateboard behind him and covering his behind.\n\
Sentence 2: The boy is sitting comfortably without his skateboard and with his behind exposed.\n\
Do the two sentences have opposite meaning? Yes or No.\nAnswer:"
        );
        assert_eq!(pairs[0].answer, PairAnswer::Yes);
        assert!(pairs[1].prompt.contains("Sentence 2: The boy, it seems, held"));
        assert_eq!(pairs[1].answer, PairAnswer::No);
        assert_eq!(serde_json::to_string(&pairs[1]).unwrap().matches("\"answer\":\"No\"").count(), 1);
        assert!(triples_to_pairs(&[]).is_empty());
    }
}
