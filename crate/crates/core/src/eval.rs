//! Strict-span scoring, classifier accuracy and grouped reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Taxonomy;
use crate::types::{AnnotatedSentence, Label, Level};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction and gold are not aligned: {0}")]
    Alignment(String),
    #[error("no items to score")]
    EmptyInput,
}

/// Treatment of predictions labeled Unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    #[default]
    Drop,
    CountAsFp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn scores(&self) -> Scores {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        Scores {
            precision,
            recall,
            f1: f1_from(precision, recall),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Pair records by sentence id. Both sides must carry the same id set.
pub fn align<'a>(
    pred: &'a [AnnotatedSentence],
    gold: &'a [AnnotatedSentence],
) -> Result<Vec<(&'a AnnotatedSentence, &'a AnnotatedSentence)>, EvalError> {
    let mut by_id: HashMap<&str, &AnnotatedSentence> = HashMap::with_capacity(gold.len());
    for g in gold {
        if by_id.insert(g.id(), g).is_some() {
            return Err(EvalError::Alignment(format!("duplicate gold id {:?}", g.id())));
        }
    }
    if pred.len() != gold.len() {
        return Err(EvalError::Alignment(format!(
            "{} predictions for {} gold records",
            pred.len(),
            gold.len()
        )));
    }
    let mut out = Vec::with_capacity(pred.len());
    for p in pred {
        let g = by_id
            .remove(p.id())
            .ok_or_else(|| EvalError::Alignment(format!("prediction id {:?} has no gold", p.id())))?;
        out.push((p, g));
    }
    Ok(out)
}

type Key = (usize, usize, Option<String>);

fn match_counts(pred: Vec<Key>, gold: Vec<Key>) -> (Counts, Vec<(Key, bool)>, Vec<Key>) {
    let mut remaining: HashMap<Key, usize> = HashMap::new();
    for g in &gold {
        *remaining.entry(g.clone()).or_insert(0) += 1;
    }
    let mut counts = Counts::default();
    let mut judged = Vec::with_capacity(pred.len());
    for p in pred {
        match remaining.get_mut(&p) {
            Some(n) if *n > 0 => {
                *n -= 1;
                counts.tp += 1;
                judged.push((p, true));
            }
            _ => {
                counts.fp += 1;
                judged.push((p, false));
            }
        }
    }
    let mut missed = Vec::new();
    for g in gold {
        if let Some(n) = remaining.get_mut(&g) {
            if *n > 0 {
                *n -= 1;
                missed.push(g);
            }
        }
    }
    counts.fn_ = missed.len() as u64;
    (counts, judged, missed)
}

fn labeled_keys(r: &AnnotatedSentence, policy: Option<UnknownPolicy>) -> Vec<Key> {
    r.entities
        .iter()
        .filter(|e| !(e.label.is_unknown() && policy == Some(UnknownPolicy::Drop)))
        .map(|e| (e.span.start, e.span.end, Some(e.label.to_string())))
        .collect()
}

fn span_keys(r: &AnnotatedSentence) -> Vec<Key> {
    r.entities.iter().map(|e| (e.span.start, e.span.end, None)).collect()
}

/// Per-category counts of one labeled comparison. A true positive and a
/// miss count toward the gold label, a false positive toward the predicted one.
fn category_counts(pred: Vec<Key>, gold: Vec<Key>, out: &mut BTreeMap<String, Counts>) -> Counts {
    let (counts, judged, missed) = match_counts(pred, gold);
    let name = |k: &Key| k.2.clone().unwrap_or_default();
    for (k, hit) in judged {
        let c = out.entry(name(&k)).or_default();
        if hit {
            c.tp += 1;
        } else {
            c.fp += 1;
        }
    }
    for k in missed {
        out.entry(name(&k)).or_default().fn_ += 1;
    }
    counts
}

/// Micro counts over (start, end, label name) exact matches.
pub fn span_counts(
    pred: &[AnnotatedSentence],
    gold: &[AnnotatedSentence],
    policy: UnknownPolicy,
) -> Result<Counts, EvalError> {
    let mut total = Counts::default();
    for (p, g) in align(pred, gold)? {
        let (c, _, _) = match_counts(labeled_keys(p, Some(policy)), labeled_keys(g, None));
        total.add(c);
    }
    Ok(total)
}

pub fn score_spans(
    pred: &[AnnotatedSentence],
    gold: &[AnnotatedSentence],
    policy: UnknownPolicy,
) -> Result<Scores, EvalError> {
    Ok(span_counts(pred, gold, policy)?.scores())
}

/// Boundary-only scores; labels are ignored.
pub fn extraction_scores(pred: &[AnnotatedSentence], gold: &[AnnotatedSentence]) -> Result<Scores, EvalError> {
    let mut total = Counts::default();
    for (p, g) in align(pred, gold)? {
        total.add(match_counts(span_keys(p), span_keys(g)).0);
    }
    Ok(total.scores())
}

/// Boundary-only counts for bare span lists.
pub fn span_set_counts(pred: &[crate::types::EntitySpan], gold: &[crate::types::EntitySpan]) -> Counts {
    let key = |s: &crate::types::EntitySpan| (s.start, s.end, None);
    match_counts(pred.iter().map(key).collect(), gold.iter().map(key).collect()).0
}

/// Fraction of `(predicted, gold)` pairs with the same label name.
pub fn classifier_accuracy(pairs: &[(Label, Label)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = pairs.iter().filter(|(p, g)| p.same_name(g)).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Relabel every named entity with its ancestor at `level`. Labels not in
/// the taxonomy or shallower than `level` are left as they are.
pub fn project_to_level(ds: &[AnnotatedSentence], tax: &Taxonomy, level: Level) -> Vec<AnnotatedSentence> {
    let lift = |l: &Label| -> Label {
        let Some(id) = tax.resolve(l) else {
            return l.clone();
        };
        if tax.node(id).level == level {
            return l.clone();
        }
        tax.ancestors(id)
            .into_iter()
            .find(|&a| tax.node(a).level == level)
            .map(|a| tax.label(a))
            .unwrap_or_else(|| l.clone())
    };
    ds.iter()
        .map(|r| {
            let mut r = r.clone();
            for e in &mut r.entities {
                e.label = lift(&e.label);
            }
            r
        })
        .collect()
}

/// Counts grouped by language and granularity, with a per-category breakdown.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub groups: BTreeMap<(String, String), BTreeMap<String, Counts>>,
}

impl CountTable {
    /// Add one labeled comparison under the given granularity tag. The
    /// language is taken from the gold record.
    pub fn add(
        &mut self,
        pred: &[AnnotatedSentence],
        gold: &[AnnotatedSentence],
        granularity: &str,
        policy: UnknownPolicy,
    ) -> Result<(), EvalError> {
        for (p, g) in align(pred, gold)? {
            let key = (g.sentence.language.as_str().to_string(), granularity.to_string());
            let cats = self.groups.entry(key).or_default();
            category_counts(labeled_keys(p, Some(policy)), labeled_keys(g, None), cats);
        }
        Ok(())
    }
}

pub fn count_table(
    pred: &[AnnotatedSentence],
    gold: &[AnnotatedSentence],
    granularity: &str,
    policy: UnknownPolicy,
) -> Result<CountTable, EvalError> {
    let mut t = CountTable::default();
    t.add(pred, gold, granularity, policy)?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub counts: Counts,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub language: String,
    pub granularity: String,
    pub counts: Counts,
    /// Pooled over all entities of the group.
    pub micro: Scores,
    /// Unweighted mean of per-category precision and recall; F1 is their
    /// harmonic mean.
    pub macro_avg: Scores,
    pub categories: Vec<CategoryRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Language tag of the row pooling all languages.
pub const OVERALL: &str = "overall";

fn make_row(language: &str, granularity: &str, cats: &BTreeMap<String, Counts>) -> Option<EvalRow> {
    let mut counts = Counts::default();
    for c in cats.values() {
        counts.add(*c);
    }
    if counts.is_empty() {
        return None;
    }
    let categories: Vec<CategoryRow> = cats
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(name, c)| CategoryRow {
            category: name.clone(),
            counts: *c,
            scores: c.scores(),
        })
        .collect();
    let n = categories.len() as f64;
    let mp = categories.iter().map(|c| c.scores.precision).sum::<f64>() / n;
    let mr = categories.iter().map(|c| c.scores.recall).sum::<f64>() / n;
    Some(EvalRow {
        language: language.to_string(),
        granularity: granularity.to_string(),
        counts,
        micro: counts.scores(),
        macro_avg: Scores {
            precision: mp,
            recall: mr,
            f1: f1_from(mp, mr),
        },
        categories,
    })
}

/// One row per (language, granularity) group with data, plus an overall row
/// per granularity when more than one language is present.
pub fn aggregate_report(table: &CountTable) -> EvalReport {
    let mut rows = Vec::new();
    let mut pooled: BTreeMap<String, BTreeMap<String, Counts>> = BTreeMap::new();
    let mut languages: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
    for ((lang, gran), cats) in &table.groups {
        if let Some(row) = make_row(lang, gran, cats) {
            rows.push(row);
            languages.entry(gran.clone()).or_default().insert(lang.clone());
            let p = pooled.entry(gran.clone()).or_default();
            for (name, c) in cats {
                p.entry(name.clone()).or_default().add(*c);
            }
        }
    }
    for (gran, cats) in &pooled {
        if languages[gran].len() > 1 {
            rows.extend(make_row(OVERALL, gran, cats));
        }
    }
    EvalReport { rows }
}

impl EvalReport {
    /// Aligned plain-text table, one line per row; scores in percent.
    pub fn to_text(&self) -> String {
        let header = [
            "language",
            "granularity",
            "tp",
            "fp",
            "fn",
            "micro_p",
            "micro_r",
            "micro_f1",
            "macro_p",
            "macro_r",
            "macro_f1",
        ];
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            lines.push(vec![
                r.language.clone(),
                r.granularity.clone(),
                r.counts.tp.to_string(),
                r.counts.fp.to_string(),
                r.counts.fn_.to_string(),
                pct(r.micro.precision),
                pct(r.micro.recall),
                pct(r.micro.f1),
                pct(r.macro_avg.precision),
                pct(r.macro_avg.recall),
                pct(r.macro_avg.f1),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
