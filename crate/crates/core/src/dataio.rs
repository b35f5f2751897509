//! Corpus files (JSONL and CoNLL BIO), stratified sampling, splitting and
//! decontamination.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, EmbeddingBackend};
use crate::metrics::{cosine, MetricError};
use crate::rng;
use crate::types::{AnnotatedSentence, Entity, Label, Level, Sentence, TypeList, UNKNOWN};
use crate::validation::validate_record;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Validation { line: usize, message: String },
    #[error("line {line}: bad tag sequence: {message}")]
    TagSequence { line: usize, message: String },
    #[error("record {id}: {message}")]
    Conversion { id: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String, DataError> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct EntityRecord {
    start: usize,
    end: usize,
    label: String,
    level: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    language: String,
    text: String,
    entities: Vec<EntityRecord>,
    type_list: Vec<String>,
    allow_unknown: bool,
}

impl From<&AnnotatedSentence> for CorpusRecord {
    fn from(r: &AnnotatedSentence) -> Self {
        Self {
            id: r.sentence.id.clone(),
            language: r.sentence.language.as_str().to_string(),
            text: r.sentence.text.clone(),
            entities: r
                .entities
                .iter()
                .map(|e| EntityRecord {
                    start: e.span.start,
                    end: e.span.end,
                    label: e.label.to_string(),
                    level: e.label.level().map_or(UNKNOWN, Level::as_str).to_string(),
                })
                .collect(),
            type_list: r.type_list.names().to_vec(),
            allow_unknown: r.type_list.allow_unknown(),
        }
    }
}

fn to_record(c: CorpusRecord, line: usize) -> Result<AnnotatedSentence, DataError> {
    let invalid = |message: String| DataError::Validation { line, message };
    let sentence = Sentence::new(c.id, c.text, c.language).map_err(|e| invalid(e.to_string()))?;
    let mut entities = Vec::with_capacity(c.entities.len());
    for e in c.entities {
        let span = sentence.span(e.start, e.end).map_err(|e| invalid(e.to_string()))?;
        let label = if e.level == UNKNOWN {
            Label::Unknown
        } else {
            let level: Level = e.level.parse().map_err(invalid)?;
            Label::named(e.label, level)
        };
        entities.push(Entity::new(span, label));
    }
    let type_list = TypeList::new(c.type_list, c.allow_unknown).map_err(|e| invalid(e.to_string()))?;
    Ok(AnnotatedSentence::new(sentence, entities, type_list))
}

/// Parse a JSONL corpus. Blank lines are skipped; every record is
/// validated and errors carry the 1-based line number.
pub fn parse_corpus(text: &str) -> Result<Vec<AnnotatedSentence>, DataError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let c: CorpusRecord = serde_json::from_str(raw).map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        let rec = to_record(c, line)?;
        if let Some(v) = validate_record(out.len(), &rec).into_iter().next() {
            return Err(DataError::Validation {
                line,
                message: format!("{}: {}", v.kind, v.detail),
            });
        }
        if !ids.insert(rec.sentence.id.clone()) {
            return Err(DataError::Validation {
                line,
                message: format!("duplicate id {:?}", rec.sentence.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// One JSON object per line, LF terminated.
pub fn corpus_to_string(ds: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for r in ds {
        out.push_str(&serde_json::to_string(&CorpusRecord::from(r)).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>, DataError> {
    parse_corpus(&read_text(path)?)
}

pub fn write_corpus(ds: &[AnnotatedSentence], path: impl AsRef<Path>) -> Result<(), DataError> {
    write_text(path, &corpus_to_string(ds))
}

/// Read bare sentences: corpus records (entities ignored) or plain
/// `{id, text, language}` objects.
pub fn parse_sentences(text: &str) -> Result<Vec<Sentence>, DataError> {
    #[derive(Deserialize)]
    struct Bare {
        id: String,
        text: String,
        #[serde(default = "default_language")]
        language: String,
    }
    fn default_language() -> String {
        "en".into()
    }
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let b: Bare = serde_json::from_str(raw).map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(
            Sentence::new(b.id, b.text, b.language).map_err(|e| DataError::Validation {
                line,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConllOptions {
    /// Promote a stray `I-X` to `B-X` instead of failing.
    pub lenient: bool,
}

struct ConllSentence {
    id: Option<String>,
    language: Option<String>,
    tokens: Vec<(String, String, usize)>,
}

/// Parse token-per-line BIO text. Columns are tab separated (or whitespace
/// separated when no tab is present); the first is the token and the last
/// the tag. `# id = x` and `# language = xx` comments name the sentence.
/// Every record gets the corpus-wide type list in order of first use.
pub fn parse_conll(
    text: &str,
    default_language: &str,
    opts: ConllOptions,
) -> Result<Vec<AnnotatedSentence>, DataError> {
    let mut sentences: Vec<ConllSentence> = Vec::new();
    let mut cur = ConllSentence {
        id: None,
        language: None,
        tokens: Vec::new(),
    };
    let flush = |cur: &mut ConllSentence, out: &mut Vec<ConllSentence>| {
        if !cur.tokens.is_empty() {
            out.push(std::mem::replace(
                cur,
                ConllSentence {
                    id: None,
                    language: None,
                    tokens: Vec::new(),
                },
            ));
        }
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim_end_matches('\r');
        if l.trim().is_empty() {
            flush(&mut cur, &mut sentences);
            continue;
        }
        if let Some(comment) = l.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                match k.trim() {
                    "id" => cur.id = Some(v.trim().to_string()),
                    "language" => cur.language = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = if l.contains('\t') {
            l.split('\t').collect()
        } else {
            l.split_whitespace().collect()
        };
        if cols.len() < 2 || cols[0].is_empty() {
            return Err(DataError::Parse {
                line,
                message: format!("expected token and tag, got {l:?}"),
            });
        }
        cur.tokens
            .push((cols[0].to_string(), cols[cols.len() - 1].to_string(), line));
    }
    flush(&mut cur, &mut sentences);

    let mut types: Vec<String> = Vec::new();
    let mut parsed = Vec::with_capacity(sentences.len());
    for (n, cs) in sentences.into_iter().enumerate() {
        let id = cs.id.unwrap_or_else(|| format!("conll-{}", n + 1));
        let language = cs.language.unwrap_or_else(|| default_language.to_string());
        let text = cs.tokens.iter().map(|t| t.0.as_str()).collect::<Vec<_>>().join(" ");
        let sentence = Sentence::new(id, text, language).map_err(|e| DataError::Parse {
            line: cs.tokens[0].2,
            message: e.to_string(),
        })?;
        let mut spans: Vec<(usize, usize, String)> = Vec::new();
        let mut open: Option<(usize, usize, String)> = None;
        let mut offset = 0;
        for (token, tag, line) in &cs.tokens {
            let (start, end) = (offset, offset + token.chars().count());
            offset = end + 1;
            let bad = |message: String| DataError::TagSequence { line: *line, message };
            if tag == "O" {
                spans.extend(open.take());
            } else if let Some(t) = tag.strip_prefix("B-") {
                spans.extend(open.take());
                open = Some((start, end, t.to_string()));
            } else if let Some(t) = tag.strip_prefix("I-") {
                match &mut open {
                    Some((_, e, ot)) if ot == t => *e = end,
                    _ if opts.lenient => {
                        spans.extend(open.take());
                        open = Some((start, end, t.to_string()));
                    }
                    _ => return Err(bad(format!("{tag} does not continue an entity of type {t}"))),
                }
            } else {
                return Err(bad(format!("unrecognized tag {tag:?}")));
            }
        }
        spans.extend(open);
        let mut entities = Vec::with_capacity(spans.len());
        for (s, e, t) in spans {
            if !types.contains(&t) {
                types.push(t.clone());
            }
            let label = if t == UNKNOWN { Label::Unknown } else { Label::flat(t) };
            let span = sentence.span(s, e).expect("token offsets lie inside the joined text");
            entities.push(Entity::new(span, label));
        }
        parsed.push((sentence, entities));
    }
    if parsed.is_empty() {
        return Ok(Vec::new());
    }
    let named: Vec<String> = types.iter().filter(|t| *t != UNKNOWN).cloned().collect();
    let type_list = TypeList::new(named, types.iter().any(|t| t == UNKNOWN)).map_err(|_| DataError::Parse {
        line: 0,
        message: "corpus contains no entity tags".into(),
    })?;
    Ok(parsed
        .into_iter()
        .map(|(s, e)| AnnotatedSentence::new(s, e, type_list.clone()))
        .collect())
}

/// Whitespace tokens with character offsets.
fn tokenize(text: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    let mut chars = 0;
    for (byte, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some((cs, bs)) = start.take() {
                out.push((cs, chars, &text[bs..byte]));
            }
        } else if start.is_none() {
            start = Some((chars, byte));
        }
        chars += 1;
    }
    if let Some((cs, bs)) = start {
        out.push((cs, chars, &text[bs..]));
    }
    out
}

/// Render records as BIO. Entity boundaries must fall on whitespace token
/// boundaries; labels are written by name.
pub fn conll_to_string(ds: &[AnnotatedSentence]) -> Result<String, DataError> {
    let mut out = String::new();
    for (n, r) in ds.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# id = {}\n", r.sentence.id));
        out.push_str(&format!("# language = {}\n", r.sentence.language.as_str()));
        let tokens = tokenize(&r.sentence.text);
        let mut tags = vec![String::from("O"); tokens.len()];
        for e in &r.entities {
            let first = tokens.iter().position(|t| t.0 == e.span.start);
            let last = tokens.iter().position(|t| t.1 == e.span.end);
            let (Some(a), Some(b)) = (first, last) else {
                return Err(DataError::Conversion {
                    id: r.sentence.id.clone(),
                    message: format!("span {}..{} is not token aligned", e.span.start, e.span.end),
                });
            };
            let name = e.label.to_string();
            for (i, tag) in tags.iter_mut().enumerate().take(b + 1).skip(a) {
                *tag = format!("{}-{name}", if i == a { "B" } else { "I" });
            }
        }
        for ((_, _, tok), tag) in tokens.iter().zip(&tags) {
            out.push_str(&format!("{tok}\t{tag}\n"));
        }
    }
    Ok(out)
}

pub fn read_conll(
    path: impl AsRef<Path>,
    default_language: &str,
    opts: ConllOptions,
) -> Result<Vec<AnnotatedSentence>, DataError> {
    parse_conll(&read_text(path)?, default_language, opts)
}

pub fn write_conll(ds: &[AnnotatedSentence], path: impl AsRef<Path>) -> Result<(), DataError> {
    write_text(path, &conll_to_string(ds)?)
}

/// Per-category quota `min(floor(S / m), n_i)`.
pub fn sample_sizes(total: usize, counts: &[usize]) -> Vec<usize> {
    if counts.is_empty() {
        return Vec::new();
    }
    let per = total / counts.len();
    counts.iter().map(|&n| n.min(per)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub requested: usize,
    pub seed: u64,
    pub per_category_quota: usize,
    /// Labels available per category.
    pub available: BTreeMap<String, usize>,
    /// Labels drawn per category, exactly the quota formula.
    pub drawn: BTreeMap<String, usize>,
    /// Labels per category in the sampled sentences, co-occurring ones included.
    pub effective: BTreeMap<String, usize>,
    pub sentences: usize,
}

/// Draw labels per category, then keep the sentences that hold them, in
/// corpus order. Unknown labels are not a category.
pub fn stratified_sample(
    ds: &[AnnotatedSentence],
    total: usize,
    seed: u64,
) -> (Vec<AnnotatedSentence>, SampleManifest) {
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (ri, r) in ds.iter().enumerate() {
        for e in &r.entities {
            if let Some(name) = e.label.name() {
                strata.entry(name.to_string()).or_default().push(ri);
            }
        }
    }
    let counts: Vec<usize> = strata.values().map(Vec::len).collect();
    let sizes = sample_sizes(total, &counts);
    let mut chosen = vec![false; ds.len()];
    let mut drawn = BTreeMap::new();
    for ((name, members), &k) in strata.iter().zip(&sizes) {
        let mut r = rng::stream(seed, &["stratified", name]);
        for i in rand::seq::index::sample(&mut r, members.len(), k) {
            chosen[members[i]] = true;
        }
        drawn.insert(name.clone(), k);
    }
    let sample: Vec<AnnotatedSentence> = ds
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c)
        .map(|(r, _)| r.clone())
        .collect();
    let mut effective = BTreeMap::new();
    for e in sample.iter().flat_map(|r| &r.entities) {
        if let Some(name) = e.label.name() {
            *effective.entry(name.to_string()).or_insert(0) += 1;
        }
    }
    let manifest = SampleManifest {
        requested: total,
        seed,
        per_category_quota: if strata.is_empty() { 0 } else { total / strata.len() },
        available: strata.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        drawn,
        effective,
        sentences: sample.len(),
    };
    (sample, manifest)
}

/// Largest-remainder apportionment of `n` by `ratios`; ties in the
/// remainder go to the earlier part.
pub fn apportion(n: usize, ratios: &[f64]) -> Result<Vec<usize>, DataError> {
    if ratios.is_empty() || ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(DataError::InvalidArgument(
            "ratios must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = ratios.iter().sum();
    if sum <= 0.0 {
        return Err(DataError::InvalidArgument("ratios must not all be zero".into()));
    }
    let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r / sum).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).filter(|&i| ratios[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Seeded partition into `ratios.len()` parts. Each part keeps corpus order.
pub fn split_dataset<T: Clone>(ds: &[T], ratios: &[f64], seed: u64) -> Result<Vec<Vec<T>>, DataError> {
    let sizes = apportion(ds.len(), ratios)?;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::stream(seed, &["split"]));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for k in sizes {
        let mut part: Vec<usize> = idx[at..at + k].to_vec();
        part.sort_unstable();
        parts.push(part.into_iter().map(|i| ds[i].clone()).collect());
        at += k;
    }
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub max_cosine: f64,
    pub nearest: String,
}

/// Exclude every candidate whose best cosine against the reference set
/// strictly exceeds `threshold`.
pub fn decontaminate(
    ds: &[AnnotatedSentence],
    reference: &[Sentence],
    emb: &dyn EmbeddingBackend,
    threshold: f64,
) -> Result<(Vec<AnnotatedSentence>, Vec<Exclusion>), DataError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "threshold {threshold} is outside (0, 1]"
        )));
    }
    if ds.is_empty() || reference.is_empty() {
        return Ok((ds.to_vec(), Vec::new()));
    }
    let cand_texts: Vec<String> = ds.iter().map(|r| r.sentence.text.clone()).collect();
    let ref_texts: Vec<String> = reference.iter().map(|s| s.text.clone()).collect();
    let cand = emb.embed_texts(&cand_texts)?;
    let refs = emb.embed_texts(&ref_texts)?;
    let best: Vec<(f64, usize)> = cand
        .par_iter()
        .map(|c| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (j, r) in refs.iter().enumerate() {
                let sim = cosine(&c.values, &r.values)?;
                if sim > best.0 {
                    best = (sim, j);
                }
            }
            Ok(best)
        })
        .collect::<Result<_, MetricError>>()?;
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (r, (sim, j)) in ds.iter().zip(best) {
        if sim > threshold {
            excluded.push(Exclusion {
                id: r.sentence.id.clone(),
                max_cosine: sim,
                nearest: reference[j].id.clone(),
            });
        } else {
            kept.push(r.clone());
        }
    }
    Ok((kept, excluded))
}
