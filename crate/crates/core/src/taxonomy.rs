//! Negation and hedging taxonomies, hedge cue inventories and prompt templates.
//!
//! Prompt templates live under `assets/prompts/` as versioned text files with
//! `{slot}` placeholders. Rendering is a single pass over the template, so a
//! slot value that itself contains `{slot}` text is never expanded again.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const NEGATION_TEMPLATE: &str = include_str!("../assets/prompts/negation.v1.txt");
const HEDGING_TEMPLATE: &str = include_str!("../assets/prompts/hedging.v1.txt");
const JUDGE_RANK_TEMPLATE: &str = include_str!("../assets/prompts/judge_rank.v1.txt");
const JUDGE_SCORE_TEMPLATE: &str = include_str!("../assets/prompts/judge_score.v1.txt");
const PAIR_TEMPLATE: &str = include_str!("../assets/prompts/pair.v1.txt");

const SINGLE_WORD_CUES: &str = include_str!("../assets/cues_single_word.txt");
const MULTI_WORD_CUES: &str = include_str!("../assets/cues_multi_word.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("empty input for `{0}`")]
    EmptyInput(&'static str),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("cue inventory list `{0}` is empty")]
    EmptyInventory(&'static str),
    #[error("duplicate cue `{cue}` in `{list}` list")]
    DuplicateCue { list: &'static str, cue: String },
    #[error("blank cue at line {line} of `{list}` list")]
    BlankCue { list: &'static str, line: usize },
    #[error("template slot `{0}` has no value")]
    MissingSlot(String),
    #[error("failed to read cue file {path}: {message}")]
    Io { path: String, message: String },
}

/// The four negation categories used by the negation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegationType {
    Verbal,
    Absolute,
    Affixal,
    Lexical,
}

impl NegationType {
    pub const ALL: [NegationType; 4] = [
        NegationType::Verbal,
        NegationType::Absolute,
        NegationType::Affixal,
        NegationType::Lexical,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NegationType::Verbal => "verbal",
            NegationType::Absolute => "absolute",
            NegationType::Affixal => "affixal",
            NegationType::Lexical => "lexical",
        }
    }

    /// Definition text exactly as it appears in the negation prompt.
    pub fn definition(self) -> &'static str {
        match self {
            NegationType::Verbal => "verbal negation: when the negation is grammatically associated with the verb, the head of the clause.",
            NegationType::Absolute => "Absolute negator: no (including compounds nobody, nothing, etc., and the independent form none), neither, nor, never.",
            NegationType::Affixal => "Affixal negators: un-, in-, non-, -less, etc.",
            NegationType::Lexical => "Lexical negation: when the negation is added by substituting the main predicate of the sentence with its antonym or word carrying negative meaning.",
        }
    }
}

impl fmt::Display for NegationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for NegationType {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NegationType::ALL
            .into_iter()
            .find(|t| t.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TaxonomyError::UnknownLabel(s.to_string()))
    }
}

/// Hedging categories: a single-word cue or a multi-word cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HedgeType {
    Word,
    Phrase,
}

impl HedgeType {
    pub const ALL: [HedgeType; 2] = [HedgeType::Word, HedgeType::Phrase];

    pub fn label(self) -> &'static str {
        match self {
            HedgeType::Word => "word",
            HedgeType::Phrase => "phrase",
        }
    }
}

impl fmt::Display for HedgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for HedgeType {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HedgeType::ALL
            .into_iter()
            .find(|t| t.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TaxonomyError::UnknownLabel(s.to_string()))
    }
}

/// Either kind of generated variant. Serialized as its bare label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    Negation(NegationType),
    Hedge(HedgeType),
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::Negation(NegationType::Verbal),
        VariantKind::Negation(NegationType::Absolute),
        VariantKind::Negation(NegationType::Affixal),
        VariantKind::Negation(NegationType::Lexical),
        VariantKind::Hedge(HedgeType::Word),
        VariantKind::Hedge(HedgeType::Phrase),
    ];

    pub fn label(self) -> &'static str {
        match self {
            VariantKind::Negation(n) => n.label(),
            VariantKind::Hedge(h) => h.label(),
        }
    }

    pub fn is_hedge(self) -> bool {
        matches!(self, VariantKind::Hedge(_))
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for VariantKind {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(n) = s.parse::<NegationType>() {
            return Ok(VariantKind::Negation(n));
        }
        s.parse::<HedgeType>().map(VariantKind::Hedge)
    }
}

impl Serialize for VariantKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for VariantKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Single-word and multi-word hedge cues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueInventory {
    single_word: Vec<String>,
    multi_word: Vec<String>,
}

impl Default for CueInventory {
    fn default() -> Self {
        CueInventory::parse(SINGLE_WORD_CUES, MULTI_WORD_CUES)
            .expect("bundled cue inventory is valid")
    }
}

impl CueInventory {
    pub fn new(single_word: Vec<String>, multi_word: Vec<String>) -> Result<Self, TaxonomyError> {
        validate_list("single_word", &single_word)?;
        validate_list("multi_word", &multi_word)?;
        Ok(CueInventory {
            single_word,
            multi_word,
        })
    }

    /// Parses two one-cue-per-line texts. Trailing newline is optional.
    pub fn parse(single_word: &str, multi_word: &str) -> Result<Self, TaxonomyError> {
        CueInventory::new(split_lines("single_word", single_word)?, split_lines("multi_word", multi_word)?)
    }

    pub fn load(single_word: &Path, multi_word: &Path) -> Result<Self, TaxonomyError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| TaxonomyError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        CueInventory::parse(&read(single_word)?, &read(multi_word)?)
    }

    pub fn single_word(&self) -> &[String] {
        &self.single_word
    }

    pub fn multi_word(&self) -> &[String] {
        &self.multi_word
    }
}

fn split_lines(list: &'static str, text: &str) -> Result<Vec<String>, TaxonomyError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                Err(TaxonomyError::BlankCue { list, line: i + 1 })
            } else {
                Ok(line.to_string())
            }
        })
        .collect()
}

fn validate_list(list: &'static str, cues: &[String]) -> Result<(), TaxonomyError> {
    if cues.is_empty() {
        return Err(TaxonomyError::EmptyInventory(list));
    }
    let mut seen = HashSet::new();
    for (i, cue) in cues.iter().enumerate() {
        if cue.trim().is_empty() {
            return Err(TaxonomyError::BlankCue { list, line: i + 1 });
        }
        if !seen.insert(cue.as_str()) {
            return Err(TaxonomyError::DuplicateCue {
                list,
                cue: cue.clone(),
            });
        }
    }
    Ok(())
}

/// A prompt template with `{name}` slots.
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub version: u32,
    pub body: &'static str,
}

pub const NEGATION_PROMPT: PromptTemplate = PromptTemplate {
    name: "negation",
    version: 1,
    body: NEGATION_TEMPLATE,
};
pub const HEDGING_PROMPT: PromptTemplate = PromptTemplate {
    name: "hedging",
    version: 1,
    body: HEDGING_TEMPLATE,
};
pub const JUDGE_RANK_PROMPT: PromptTemplate = PromptTemplate {
    name: "judge_rank",
    version: 1,
    body: JUDGE_RANK_TEMPLATE,
};
pub const JUDGE_SCORE_PROMPT: PromptTemplate = PromptTemplate {
    name: "judge_score",
    version: 1,
    body: JUDGE_SCORE_TEMPLATE,
};
pub const PAIR_PROMPT: PromptTemplate = PromptTemplate {
    name: "pair",
    version: 1,
    body: PAIR_TEMPLATE,
};

impl PromptTemplate {
    /// Substitutes every `{slot}` in one left-to-right pass. Braces that do
    /// not enclose a plain identifier are copied through.
    pub fn render(&self, slots: &[(&str, &str)]) -> Result<String, TaxonomyError> {
        let body = self.body;
        let mut out = String::with_capacity(body.len() + 64);
        let mut rest = body;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_slot_name(&after[..close]) => {
                    let name = &after[..close];
                    let value = slots
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TaxonomyError::MissingSlot(name.to_string()))?;
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn require(name: &'static str, value: &str) -> Result<(), TaxonomyError> {
    if value.trim().is_empty() {
        Err(TaxonomyError::EmptyInput(name))
    } else {
        Ok(())
    }
}

pub fn render_negation_prompt(text: &str) -> Result<String, TaxonomyError> {
    require("text", text)?;
    NEGATION_PROMPT.render(&[("text", text)])
}

pub fn render_hedging_prompt(text: &str, word_cue: &str, phrase_cue: &str) -> Result<String, TaxonomyError> {
    require("text", text)?;
    require("word_cue", word_cue)?;
    require("phrase_cue", phrase_cue)?;
    HEDGING_PROMPT.render(&[("text", text), ("word_cue", word_cue), ("phrase_cue", phrase_cue)])
}

/// splitmix64 finalizer, used to mix the run seed with an anchor ordinal.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Draws one single-word and one multi-word cue for the anchor at `index`.
///
/// The generator is seeded from `(seed, index)` alone so the draw does not
/// depend on the order in which anchors are processed.
pub fn sample_cues(inventory: &CueInventory, seed: u64, index: u64) -> Result<(String, String), TaxonomyError> {
    if inventory.single_word.is_empty() {
        return Err(TaxonomyError::EmptyInventory("single_word"));
    }
    if inventory.multi_word.is_empty() {
        return Err(TaxonomyError::EmptyInventory("multi_word"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)));
    let w = rng.random_range(0..inventory.single_word.len());
    let p = rng.random_range(0..inventory.multi_word.len());
    Ok((inventory.single_word[w].clone(), inventory.multi_word[p].clone()))
}
