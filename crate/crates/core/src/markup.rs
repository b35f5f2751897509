//! `##`-delimited rendering of spans and recovery of spans from model
//! generations.
//!
//! A generation is parsed in one of two ways. When the generation with all
//! delimiters removed equals the source sentence up to whitespace runs,
//! offsets map position by position. Otherwise the stripped generation is
//! aligned to the source with a character-level longest common subsequence
//! and every marked region is projected through that alignment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{EntitySpan, Sentence};

/// The entity delimiter.
pub const DELIMITER: &str = "##";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkupError {
    #[error("odd number of `##` delimiters ({0})")]
    OddDelimiters(usize),
    #[error("empty marked region #{0}")]
    EmptyRegion(usize),
    #[error("spans {0}..{1} and {2}..{3} overlap")]
    Overlap(usize, usize, usize, usize),
    #[error("span {start}..{end} does not match the sentence")]
    InvalidSpan { start: usize, end: usize },
    #[error("entity surface {0:?} contains the `##` delimiter")]
    DelimiterInSurface(String),
    #[error("rendering would be ambiguous: `#` characters touch a delimiter")]
    AmbiguousDelimiter,
    #[error("alignment covers {coverage:.2} of the generation, below {required:.2}")]
    AlignmentFailure { coverage: f64, required: f64 },
}

impl MarkupError {
    /// Malformed markup as opposed to an alignment problem.
    pub fn is_malformed(&self) -> bool {
        matches!(self, MarkupError::OddDelimiters(_) | MarkupError::EmptyRegion(_))
    }
}

/// A sentence rendering where selected spans are surrounded by `##`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarkedText {
    text: String,
    source_id: String,
}

impl MarkedText {
    /// Validates delimiter parity and non-empty regions.
    pub fn new(text: impl Into<String>, source_id: impl Into<String>) -> Result<Self, MarkupError> {
        let text = text.into();
        split_regions(&text)?;
        Ok(Self {
            text,
            source_id: source_id.into(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Contents of the marked regions, left to right.
    pub fn regions(&self) -> Vec<&str> {
        split_regions(&self.text)
            .expect("validated at construction")
            .into_iter()
            .filter(|s| s.inside)
            .map(|s| s.text)
            .collect()
    }

    pub fn region_count(&self) -> usize {
        self.regions().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Segment<'a> {
    text: &'a str,
    inside: bool,
}

fn split_regions(text: &str) -> Result<Vec<Segment<'_>>, MarkupError> {
    let pieces: Vec<&str> = text.split(DELIMITER).collect();
    let delimiters = pieces.len() - 1;
    if delimiters % 2 == 1 {
        return Err(MarkupError::OddDelimiters(delimiters));
    }
    let mut out = Vec::with_capacity(pieces.len());
    for (i, piece) in pieces.into_iter().enumerate() {
        let inside = i % 2 == 1;
        if inside && piece.trim().is_empty() {
            return Err(MarkupError::EmptyRegion(i / 2));
        }
        out.push(Segment { text: piece, inside });
    }
    Ok(out)
}

fn check_spans(s: &Sentence, spans: &[EntitySpan]) -> Result<Vec<EntitySpan>, MarkupError> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    for span in &sorted {
        match s.slice(span.start, span.end) {
            Some(slice) if span.start < span.end && slice == span.surface => {}
            _ => {
                return Err(MarkupError::InvalidSpan {
                    start: span.start,
                    end: span.end,
                })
            }
        }
        if span.surface.contains(DELIMITER) {
            return Err(MarkupError::DelimiterInSurface(span.surface.clone()));
        }
    }
    for w in sorted.windows(2) {
        if w[0].overlaps(&w[1]) {
            return Err(MarkupError::Overlap(w[0].start, w[0].end, w[1].start, w[1].end));
        }
    }
    Ok(sorted)
}

/// Insert `##` around each span. Non-span characters are copied verbatim.
pub fn render_marked(s: &Sentence, spans: &[EntitySpan]) -> Result<MarkedText, MarkupError> {
    let sorted = check_spans(s, spans)?;
    let chars: Vec<char> = s.text.chars().collect();
    let mut out = String::with_capacity(s.text.len() + 4 * sorted.len());
    let mut pos = 0;
    for span in &sorted {
        out.extend(&chars[pos..span.start]);
        out.push_str(DELIMITER);
        out.push_str(&span.surface);
        out.push_str(DELIMITER);
        pos = span.end;
    }
    out.extend(&chars[pos..]);

    // `#` next to a delimiter (or `##` already in the text) would be read back
    // differently; refuse rather than emit something unparseable.
    let segments = split_regions(&out).map_err(|_| MarkupError::AmbiguousDelimiter)?;
    let regions: Vec<&str> = segments.iter().filter(|s| s.inside).map(|s| s.text).collect();
    let same_regions = regions.len() == sorted.len() && regions.iter().zip(&sorted).all(|(r, sp)| *r == sp.surface);
    let stripped: String = segments.iter().map(|s| s.text).collect();
    if !same_regions || stripped != s.text {
        return Err(MarkupError::AmbiguousDelimiter);
    }
    Ok(MarkedText {
        text: out,
        source_id: s.id.clone(),
    })
}

/// One marked sentence per span, ordered by start offset.
pub fn reembed_each(s: &Sentence, spans: &[EntitySpan]) -> Result<Vec<MarkedText>, MarkupError> {
    let sorted = check_spans(s, spans)?;
    sorted
        .iter()
        .map(|span| render_marked(s, std::slice::from_ref(span)))
        .collect()
}

/// Which route recovered the offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentPath {
    Strict,
    Recovered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedMarkup {
    pub spans: Vec<EntitySpan>,
    pub path: AlignmentPath,
    /// Regions dropped for insufficient alignment (recovery path only).
    pub dropped_regions: usize,
}

/// Coverage thresholds for the recovery path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// A region survives when at least this share of its characters align.
    pub min_region_coverage: f64,
    /// The whole generation must align at least this well.
    pub min_total_coverage: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            min_region_coverage: 0.8,
            min_total_coverage: 0.5,
        }
    }
}

/// Parse a generation against its source sentence with default thresholds.
pub fn parse_marked(generation: &str, original: &Sentence) -> Result<Vec<EntitySpan>, MarkupError> {
    parse_marked_with(generation, original, &AlignmentConfig::default()).map(|p| p.spans)
}

pub fn parse_marked_with(
    generation: &str,
    original: &Sentence,
    cfg: &AlignmentConfig,
) -> Result<ParsedMarkup, MarkupError> {
    let segments = split_regions(generation)?;

    // stripped generation, each char tagged with its region
    let mut gen_chars: Vec<(char, Option<usize>)> = Vec::new();
    let mut region = 0;
    for seg in &segments {
        let tag = seg.inside.then_some(region);
        gen_chars.extend(seg.text.chars().map(|c| (c, tag)));
        if seg.inside {
            region += 1;
        }
    }
    let region_count = region;
    let src_chars: Vec<char> = original.text.chars().collect();

    let gen_norm = normalize_whitespace(gen_chars.iter().map(|&(c, _)| c));
    let src_norm = normalize_whitespace(src_chars.iter().copied());
    let gen_seq: Vec<char> = gen_norm.iter().map(|&(c, _)| c).collect();
    let src_seq: Vec<char> = src_norm.iter().map(|&(c, _)| c).collect();

    // (normalized gen position, normalized src position) pairs
    let (pairs, path) = if gen_seq == src_seq {
        (
            (0..gen_seq.len()).map(|i| (i, i)).collect::<Vec<_>>(),
            AlignmentPath::Strict,
        )
    } else {
        let pairs = lcs_alignment(&gen_seq, &src_seq);
        let coverage = if gen_seq.is_empty() {
            0.0
        } else {
            pairs.len() as f64 / gen_seq.len() as f64
        };
        if coverage < cfg.min_total_coverage {
            return Err(MarkupError::AlignmentFailure {
                coverage,
                required: cfg.min_total_coverage,
            });
        }
        (pairs, AlignmentPath::Recovered)
    };

    let region_of = |gi: usize| gen_chars[gen_norm[gi].1].1;
    let mut region_len = vec![0usize; region_count];
    for gi in 0..gen_norm.len() {
        if let Some(r) = region_of(gi) {
            region_len[r] += 1;
        }
    }
    let mut aligned: Vec<Vec<usize>> = vec![Vec::new(); region_count];
    for &(gi, si) in &pairs {
        if let Some(r) = region_of(gi) {
            aligned[r].push(src_norm[si].1);
        }
    }

    let mut spans = Vec::with_capacity(region_count);
    let mut dropped = 0;
    for r in 0..region_count {
        let hits = &aligned[r];
        let ok = region_len[r] > 0
            && (path == AlignmentPath::Strict || hits.len() as f64 / region_len[r] as f64 >= cfg.min_region_coverage);
        let trimmed = if ok {
            let lo = *hits.iter().min().expect("coverage > 0");
            let hi = *hits.iter().max().expect("coverage > 0") + 1;
            trim_range(&src_chars, lo, hi)
        } else {
            None
        };
        match trimmed {
            Some((a, b)) => {
                spans.push(EntitySpan::new(&original.text, a, b).expect("range inside the source sentence"))
            }
            None => dropped += 1,
        }
    }
    spans.sort();
    spans.dedup();
    Ok(ParsedMarkup {
        spans,
        path,
        dropped_regions: dropped,
    })
}

/// Collapse whitespace runs to one space and trim the ends. Each output
/// char keeps the index of the input char it came from (first of a run).
fn normalize_whitespace(chars: impl Iterator<Item = char>) -> Vec<(char, usize)> {
    let mut out: Vec<(char, usize)> = Vec::new();
    let mut pending_space: Option<usize> = None;
    for (i, c) in chars.enumerate() {
        if c.is_whitespace() {
            if pending_space.is_none() {
                pending_space = Some(i);
            }
            continue;
        }
        if let Some(sp) = pending_space.take() {
            if !out.is_empty() {
                out.push((' ', sp));
            }
        }
        out.push((c, i));
    }
    out
}

fn trim_range(chars: &[char], mut lo: usize, mut hi: usize) -> Option<(usize, usize)> {
    while lo < hi && chars[lo].is_whitespace() {
        lo += 1;
    }
    while hi > lo && chars[hi - 1].is_whitespace() {
        hi -= 1;
    }
    (lo < hi).then_some((lo, hi))
}

/// Longest common subsequence alignment, returned as increasing index
/// pairs `(i, j)` with `a[i] == b[j]`.
pub fn lcs_alignment<T: PartialEq>(a: &[T], b: &[T]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    let mut table = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i * width + j] = if a[i] == b[j] {
                table[(i + 1) * width + j + 1] + 1
            } else {
                table[(i + 1) * width + j].max(table[i * width + j + 1])
            };
        }
    }
    let mut pairs = Vec::with_capacity(table[0] as usize);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if table[(i + 1) * width + j] >= table[i * width + j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    pairs
}
