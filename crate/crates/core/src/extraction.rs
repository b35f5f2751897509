//! Extractor half of the cascade.
//!
//! The query is the bare sentence; the model answers with the same sentence
//! where every entity is wrapped in `##`. Several sampling rounds are fused
//! by union, resolving overlaps length-first.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, GenerationParams};
use crate::markup::{parse_marked_with, AlignmentConfig, AlignmentPath, MarkedText, DELIMITER};
use crate::types::{EntitySpan, Sentence};

/// Fixed system line. The user turn carries nothing but the sentence.
pub const EXTRACTION_SYSTEM_PROMPT: &str = "Surround every named entity with ##.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractionError {
    #[error("{given} demonstrations exceed the maximum of {max}")]
    TooManyDemos { given: usize, max: usize },
    #[error("demonstration {0} does not mark its own sentence")]
    DemoMismatch(String),
    #[error("rounds must be at least 1")]
    ZeroRounds,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Number of sampling rounds fused per sentence.
    pub rounds: usize,
    /// Temperature of rounds after the first (the first is greedy).
    pub diversity_temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    pub max_demos: usize,
    pub alignment: AlignmentConfig,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            diversity_temperature: 0.7,
            seed: 0,
            max_tokens: 512,
            max_demos: 3,
            alignment: AlignmentConfig::default(),
        }
    }
}

impl ExtractionConfig {
    /// Sampling parameters of round `index` (1-based).
    pub fn round_params(&self, index: usize) -> GenerationParams {
        if index <= 1 {
            GenerationParams::greedy(self.seed, self.max_tokens)
        } else {
            GenerationParams {
                temperature: self.diversity_temperature,
                seed: self.seed + index as u64,
                max_tokens: self.max_tokens,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Recovered,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRound {
    pub index: usize,
    pub spans: Vec<EntitySpan>,
    pub raw_generation: String,
    pub parse_status: ParseStatus,
}

/// System line, one user/assistant pair per demonstration, then the bare
/// sentence.
pub fn build_extraction_prompt(
    s: &Sentence,
    demos: &[(Sentence, MarkedText)],
    max_demos: usize,
) -> Result<Vec<ChatMessage>, ExtractionError> {
    if demos.len() > max_demos {
        return Err(ExtractionError::TooManyDemos {
            given: demos.len(),
            max: max_demos,
        });
    }
    let mut messages = Vec::with_capacity(2 + 2 * demos.len());
    messages.push(ChatMessage::system(EXTRACTION_SYSTEM_PROMPT));
    for (demo, marked) in demos {
        if marked.text().replace(DELIMITER, "") != demo.text {
            return Err(ExtractionError::DemoMismatch(demo.id.clone()));
        }
        messages.push(ChatMessage::user(demo.text.clone()));
        messages.push(ChatMessage::assistant(marked.text()));
    }
    messages.push(ChatMessage::user(s.text.clone()));
    Ok(messages)
}

/// Run `cfg.rounds` extraction rounds. Unparseable generations become
/// dropped rounds with no spans; backend failures abort.
pub fn extract_rounds(
    backend: &dyn ChatBackend,
    s: &Sentence,
    demos: &[(Sentence, MarkedText)],
    cfg: &ExtractionConfig,
) -> Result<Vec<ExtractionRound>, ExtractionError> {
    if cfg.rounds == 0 {
        return Err(ExtractionError::ZeroRounds);
    }
    let messages = build_extraction_prompt(s, demos, cfg.max_demos)?;
    (1..=cfg.rounds)
        .map(|index| {
            let raw = backend.chat_complete(&messages, &cfg.round_params(index))?;
            let (spans, parse_status) = match parse_marked_with(&raw, s, &cfg.alignment) {
                Ok(p) if p.path == AlignmentPath::Strict => (p.spans, ParseStatus::Ok),
                Ok(p) => (p.spans, ParseStatus::Recovered),
                Err(_) => (Vec::new(), ParseStatus::Dropped),
            };
            Ok(ExtractionRound {
                index,
                spans,
                raw_generation: raw,
                parse_status,
            })
        })
        .collect()
}

/// `e` beats `f` when they overlap and `e` is longer; equal lengths go to
/// the earlier start, then the lexicographically smaller surface.
pub fn dominates(e: &EntitySpan, f: &EntitySpan) -> bool {
    e != f && e.overlaps(f) && rank_key(e) < rank_key(f)
}

fn rank_key(e: &EntitySpan) -> (Reverse<usize>, usize, &str) {
    (Reverse(e.len()), e.start, e.surface.as_str())
}

/// Union of all rounds with length-first overlap resolution.
///
/// Spans are visited from strongest to weakest and kept unless they overlap
/// an already kept span. The result is overlap-free and every discarded span
/// is dominated by a kept one. Output is sorted by offset.
pub fn fuse_results(rounds: &[Vec<EntitySpan>]) -> Vec<EntitySpan> {
    let union: BTreeSet<&EntitySpan> = rounds.iter().flatten().collect();
    let mut ranked: Vec<&EntitySpan> = union.into_iter().collect();
    ranked.sort_by(|a, b| rank_key(a).cmp(&rank_key(b)));

    let mut kept: Vec<&EntitySpan> = Vec::new();
    for span in ranked {
        if kept.iter().all(|k| !k.overlaps(span)) {
            kept.push(span);
        }
    }
    let mut out: Vec<EntitySpan> = kept.into_iter().cloned().collect();
    out.sort();
    out
}

/// Fuse the span sets of completed rounds, in round order.
pub fn fuse_rounds(rounds: &[ExtractionRound]) -> Vec<EntitySpan> {
    let mut sorted: Vec<&ExtractionRound> = rounds.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let sets: Vec<Vec<EntitySpan>> = sorted.into_iter().map(|r| r.spans.clone()).collect();
    fuse_results(&sets)
}
