//! Toolkit for negation- and hedging-aware sentence embeddings.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`distill`]: prompt a chat model for four negated and two hedged
//!    rewrites of every anchor sentence ([`taxonomy`] holds the prompts and cues).
//! 2. [`filter`]: keep minimal pairs by edit distance and form
//!    (anchor, hedged, negated) triples.
//! 3. [`contrastive`]: train a linear adapter over frozen embeddings with
//!    the multiple negatives ranking loss.
//! 4. [`eval`]: score any [`embed`] backend, with or without an adapter, on
//!    pairwise-retrieval, exclusion-retrieval and scored-pair benchmarks.

pub mod cli;
pub mod contrastive;
pub mod distill;
pub mod embed;
pub mod eval;
pub mod filter;
pub mod http;
pub mod jsonl;
pub mod taxonomy;
