//! Four-round dynamic re-categorization of a labeled corpus: mix
//! granularities, substitute synonyms, remove distractor types, merge rare
//! types into Miscellaneous. Each round is gated by its metrics and every
//! edit is logged so the output can be replayed from the input.
//!
//! Probabilities move multiplicatively: `damp` for each flag that argues
//! against an operation, `boost` for each flag that argues for it, clamped
//! to `[0, 1]`. All draws come from per-record streams keyed by seed,
//! round, pass and record id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::EmbeddingBackend;
use crate::metrics::{category_cohesion, CategoryDistribution, Flags, MetricError, MetricReport, Thresholds};
use crate::rng;
use crate::taxonomy::Taxonomy;
use crate::types::{AnnotatedSentence, Label, Level};
use crate::validation::validate_dataset;

/// Name every merged rare type is rewritten to.
pub const MISCELLANEOUS: &str = "Miscellaneous";

const STARTER_SYNONYMS: &str = include_str!("../data/synonyms.tsv");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynCatError {
    #[error("record {record}: label {name:?} is not in the taxonomy")]
    UnresolvableLabel { record: String, name: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("record {record}: {message}")]
    InvalidEdit { record: String, message: String },
    #[error("round {round}: record {record} has a label outside its type list")]
    LabelConsistency { round: u8, record: String },
    #[error("synonym table line {line}: {message}")]
    Synonyms { line: usize, message: String },
    #[error("audit log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Type name to candidate synonyms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymTable(pub BTreeMap<String, Vec<String>>);

impl SynonymTable {
    /// `name<TAB>syn1|syn2` lines; `#` comments and blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, DynCatError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| DynCatError::Synonyms {
                line: i + 1,
                message: message.to_string(),
            };
            let (name, syns) = line.split_once('\t').ok_or_else(|| err("expected name<TAB>synonyms"))?;
            let syns: Vec<String> = syns
                .split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if name.trim().is_empty() || syns.is_empty() {
                return Err(err("empty name or synonym list"));
            }
            if map.insert(name.trim().to_string(), syns).is_some() {
                return Err(err("duplicate name"));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DynCatError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| DynCatError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// The table shipped for the default taxonomy.
    pub fn starter() -> Self {
        Self::parse(STARTER_SYNONYMS).expect("shipped synonym table parses")
    }

    pub fn get(&self, name: &str) -> Option<&[String]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every synonym value.
    pub fn values(&self) -> BTreeSet<&str> {
        self.0.values().flatten().map(String::as_str).collect()
    }
}

/// Base probability of each round's per-item operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probabilities {
    pub mix: f64,
    pub synonym: f64,
    pub remove: f64,
    pub merge: f64,
}

impl Default for Probabilities {
    fn default() -> Self {
        Self {
            mix: 0.3,
            synonym: 0.2,
            remove: 0.5,
            merge: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynCatConfig {
    pub seed: u64,
    pub thresholds: Thresholds,
    pub probabilities: Probabilities,
    pub damp: f64,
    pub boost: f64,
    /// Distractors less cohesive than this are removed less eagerly.
    pub cohesion_low: f64,
    /// Round 4 treats the lowest `rare_percentile` percent of types as rare.
    pub rare_percentile: f64,
    pub max_rebalance_passes: usize,
    pub max_merge_passes: usize,
    pub cohesion_cap: usize,
    pub synonyms: SynonymTable,
}

impl Default for DynCatConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            thresholds: Thresholds::default(),
            probabilities: Probabilities::default(),
            damp: 0.5,
            boost: 1.5,
            cohesion_low: 0.5,
            rare_percentile: 10.0,
            max_rebalance_passes: 3,
            max_merge_passes: 6,
            cohesion_cap: 200,
            synonyms: SynonymTable::default(),
        }
    }
}

impl DynCatConfig {
    pub fn validate(&self) -> Result<(), DynCatError> {
        let p = self.probabilities;
        for (name, v) in [
            ("mix", p.mix),
            ("synonym", p.synonym),
            ("remove", p.remove),
            ("merge", p.merge),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DynCatError::InvalidConfig(format!(
                    "{name} probability {v} outside [0, 1]"
                )));
            }
        }
        let t = self.thresholds;
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(t.entropy_min)
            && in_unit(t.gini_max)
            && t.cv_max >= 0.0
            && (-1.0..=1.0).contains(&t.cohesion_merge))
        {
            return Err(DynCatError::InvalidConfig("threshold outside its metric range".into()));
        }
        if self.damp < 0.0 || self.boost < 0.0 {
            return Err(DynCatError::InvalidConfig("damp and boost must be non-negative".into()));
        }
        if !(0.0..=100.0).contains(&self.rare_percentile) {
            return Err(DynCatError::InvalidConfig("rare_percentile outside [0, 100]".into()));
        }
        Ok(())
    }

    fn modulate(&self, base: f64, damped: usize, boosted: usize) -> f64 {
        (base * self.damp.powi(damped as i32) * self.boost.powi(boosted as i32)).clamp(0.0, 1.0)
    }
}

/// One logged transformation of one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    /// Rename a type in the list and in every label carrying it. Duplicates
    /// created in the list collapse onto the first occurrence. `level`
    /// replaces the label level when given.
    Rename {
        from: String,
        to: String,
        level: Option<Level>,
    },
    /// Drop a non-gold type from the list.
    Remove { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub round: u8,
    pub record: String,
    #[serde(flatten)]
    pub op: EditOp,
}

/// Apply one edit in place.
pub fn apply_op(rec: &mut AnnotatedSentence, op: &EditOp) -> Result<(), DynCatError> {
    let invalid = |message: String| DynCatError::InvalidEdit {
        record: rec.sentence.id.clone(),
        message,
    };
    match op {
        EditOp::Rename { from, to, level } => {
            if !rec.type_list.contains(from) {
                return Err(invalid(format!("rename of {from:?} which is not listed")));
            }
            let names = rec.type_list.names_mut();
            let mut seen = BTreeSet::new();
            let renamed: Vec<String> = names
                .drain(..)
                .map(|n| if n == *from { to.clone() } else { n })
                .filter(|n| seen.insert(n.clone()))
                .collect();
            *names = renamed;
            for e in &mut rec.entities {
                if let Label::Named { name, level: l } = &e.label {
                    if name == from {
                        e.label = Label::named(to.clone(), level.unwrap_or(*l));
                    }
                }
            }
            rec.sort_entities();
        }
        EditOp::Remove { name } => {
            if rec.entities.iter().any(|e| e.label.name() == Some(name)) {
                return Err(invalid(format!("removal of gold type {name:?}")));
            }
            if !rec.type_list.contains(name) {
                return Err(invalid(format!("removal of {name:?} which is not listed")));
            }
            if rec.type_list.len() == 1 {
                return Err(invalid("removal would empty the type list".into()));
            }
            rec.type_list.names_mut().retain(|n| n != name);
        }
    }
    Ok(())
}

/// Label-count metrics of a corpus, or `None` when it has no named labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub categories: usize,
    pub labels: u64,
    pub normalized_entropy: Option<f64>,
    pub gini: f64,
    pub variation_coefficient: f64,
    pub flags: Flags,
}

impl MetricSnapshot {
    fn from_distribution(d: &CategoryDistribution, t: Thresholds) -> Self {
        let r = MetricReport::from_distribution(d, t);
        Self {
            categories: d.n(),
            labels: d.total(),
            normalized_entropy: r.normalized_entropy,
            gini: r.gini,
            variation_coefficient: r.variation_coefficient,
            flags: r.flags,
        }
    }

    /// Total distance past the three distribution thresholds.
    pub fn violation(&self, t: &Thresholds) -> f64 {
        let h = self.normalized_entropy.map_or(0.0, |h| (t.entropy_min - h).max(0.0));
        h + (self.gini - t.gini_max).max(0.0) + (self.variation_coefficient - t.cv_max).max(0.0)
    }

    /// Targets that are not met, by metric name.
    pub fn unmet(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.flags.entropy_low {
            out.push("normalized_entropy".to_string());
        }
        if self.flags.gini_high {
            out.push("gini".to_string());
        }
        if self.flags.cv_high {
            out.push("variation_coefficient".to_string());
        }
        out
    }
}

fn gold_distribution(ds: &[AnnotatedSentence]) -> Option<CategoryDistribution> {
    crate::metrics::label_distribution(ds).ok()
}

pub fn snapshot(ds: &[AnnotatedSentence], t: Thresholds) -> Option<MetricSnapshot> {
    gold_distribution(ds).map(|d| MetricSnapshot::from_distribution(&d, t))
}

/// Names by number of type lists containing them.
fn list_distribution(ds: &[AnnotatedSentence]) -> Option<CategoryDistribution> {
    CategoryDistribution::from_names(ds.iter().flat_map(|r| r.type_list.names().iter().cloned())).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    RoundStart {
        round: u8,
        name: String,
        metrics: Option<MetricSnapshot>,
    },
    Pass {
        round: u8,
        pass: usize,
        probability: f64,
        accepted: bool,
        metrics: Option<MetricSnapshot>,
    },
    Edit(Edit),
    RoundEnd {
        round: u8,
        edits: usize,
        label_consistent: bool,
        metrics: Option<MetricSnapshot>,
    },
    Convergence {
        targets_met: bool,
        unmet: Vec<String>,
        metrics: Option<MetricSnapshot>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, DynCatError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line).map_err(|e| DynCatError::Log {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { events })
    }

    pub fn edits(&self) -> impl Iterator<Item = &Edit> {
        self.events.iter().filter_map(|e| match e {
            AuditEvent::Edit(edit) => Some(edit),
            _ => None,
        })
    }

    /// Rounds in the order they started.
    pub fn round_order(&self) -> Vec<u8> {
        self.events
            .iter()
            .filter_map(|e| match e {
                AuditEvent::RoundStart { round, .. } => Some(*round),
                _ => None,
            })
            .collect()
    }

    pub fn convergence(&self) -> Option<(bool, &[String])> {
        self.events.iter().rev().find_map(|e| match e {
            AuditEvent::Convergence { targets_met, unmet, .. } => Some((*targets_met, unmet.as_slice())),
            _ => None,
        })
    }
}

/// Output of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub records: Vec<AnnotatedSentence>,
    pub edits: Vec<Edit>,
    /// Pass events, in order.
    pub passes: Vec<AuditEvent>,
}

fn apply_all(
    rec: &AnnotatedSentence,
    round: u8,
    ops: Vec<EditOp>,
) -> Result<(AnnotatedSentence, Vec<Edit>), DynCatError> {
    let mut out = rec.clone();
    let mut edits = Vec::with_capacity(ops.len());
    for op in ops {
        apply_op(&mut out, &op)?;
        edits.push(Edit {
            round,
            record: rec.sentence.id.clone(),
            op,
        });
    }
    Ok((out, edits))
}

fn collect_round(
    ds: &[AnnotatedSentence],
    round: u8,
    ops: Vec<Vec<EditOp>>,
) -> Result<(Vec<AnnotatedSentence>, Vec<Edit>), DynCatError> {
    let applied: Vec<(AnnotatedSentence, Vec<Edit>)> = ds
        .par_iter()
        .zip(ops)
        .map(|(r, o)| apply_all(r, round, o))
        .collect::<Result<_, _>>()?;
    let mut records = Vec::with_capacity(ds.len());
    let mut edits = Vec::new();
    for (r, e) in applied {
        records.push(r);
        edits.extend(e);
    }
    Ok((records, edits))
}

fn gold_names(rec: &AnnotatedSentence) -> BTreeSet<&str> {
    rec.entities.iter().filter_map(|e| e.label.name()).collect()
}

/// Every named gold label is in its record's type list.
pub fn label_consistent(rec: &AnnotatedSentence) -> bool {
    rec.entities.iter().all(|e| match &e.label {
        Label::Named { name, .. } => rec.type_list.contains(name),
        Label::Unknown => true,
    })
}

fn check_round(ds: &[AnnotatedSentence], round: u8) -> Result<(), DynCatError> {
    match ds.iter().find(|r| !label_consistent(r)) {
        Some(r) => Err(DynCatError::LabelConsistency {
            round,
            record: r.sentence.id.clone(),
        }),
        None => Ok(()),
    }
}

/// Taxonomy node of every name in the record's list: gold names by their
/// label level, the rest by name at any level.
fn list_nodes(rec: &AnnotatedSentence, tax: &Taxonomy) -> Result<Vec<(String, Option<usize>)>, DynCatError> {
    let mut gold: HashMap<&str, usize> = HashMap::new();
    for e in &rec.entities {
        if let Some(name) = e.label.name() {
            let id = tax.resolve(&e.label).ok_or_else(|| DynCatError::UnresolvableLabel {
                record: rec.sentence.id.clone(),
                name: name.to_string(),
            })?;
            gold.insert(name, id);
        }
    }
    Ok(rec
        .type_list
        .names()
        .iter()
        .map(|n| {
            let id = gold.get(n.as_str()).copied().or_else(|| tax.find_any(n));
            (n.clone(), id)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
struct Lift {
    from: String,
    target: usize,
}

fn plan_lifts(
    rec: &AnnotatedSentence,
    nodes: &[(String, Option<usize>)],
    tax: &Taxonomy,
    cfg: &DynCatConfig,
    damped_parents: &BTreeSet<usize>,
) -> Vec<Lift> {
    let mut r = rng::stream(cfg.seed, &["mix", &rec.sentence.id]);
    let mut lifts = Vec::new();
    for (name, id) in nodes {
        let Some(id) = *id else { continue };
        let anc = tax.ancestors(id);
        if anc.is_empty() {
            continue;
        }
        let damped = usize::from(damped_parents.contains(&anc[0]));
        let p = cfg.modulate(cfg.probabilities.mix, damped, 0);
        let u: f64 = r.gen();
        if u < p {
            let two = anc.len() >= 2 && r.gen_bool(0.5);
            lifts.push(Lift {
                from: name.clone(),
                target: if two { anc[1] } else { anc[0] },
            });
        }
    }
    lifts
}

/// Renames realizing `lifts`: each lifted name moves to its ancestor, then
/// every listed name below a lift target folds into its coarsest such target.
fn lift_ops(nodes: &[(String, Option<usize>)], lifts: &[Lift], tax: &Taxonomy) -> Vec<EditOp> {
    let mut ops = Vec::new();
    let mut current: Vec<(String, Option<usize>)> = nodes.to_vec();
    for l in lifts {
        let node = tax.node(l.target);
        ops.push(EditOp::Rename {
            from: l.from.clone(),
            to: node.name.clone(),
            level: Some(node.level),
        });
        for c in current.iter_mut().filter(|c| c.0 == l.from) {
            *c = (node.name.clone(), Some(l.target));
        }
    }
    let targets: BTreeSet<usize> = lifts.iter().map(|l| l.target).collect();
    let mut seen = BTreeSet::new();
    for (name, id) in current {
        let Some(id) = id else { continue };
        if !seen.insert(name.clone()) {
            continue;
        }
        let coarsest = targets
            .iter()
            .filter(|&&t| tax.is_ancestor(t, id))
            .min_by_key(|&&t| tax.node(t).level.depth());
        if let Some(&t) = coarsest {
            let node = tax.node(t);
            ops.push(EditOp::Rename {
                from: name,
                to: node.name.clone(),
                level: Some(node.level),
            });
        }
    }
    ops
}

/// Where each gold label name ends up after `ops`.
fn final_names(ops: &[EditOp], names: &BTreeSet<String>) -> BTreeMap<String, String> {
    names
        .iter()
        .map(|n| {
            let mut cur = n.clone();
            for op in ops {
                if let EditOp::Rename { from, to, .. } = op {
                    if *from == cur {
                        cur = to.clone();
                    }
                }
            }
            (n.clone(), cur)
        })
        .collect()
}

/// Cohesion of every taxonomy node from the gold surfaces beneath it.
fn subtree_cohesion(
    ds: &[AnnotatedSentence],
    tax: &Taxonomy,
    emb: &dyn EmbeddingBackend,
    cfg: &DynCatConfig,
) -> Result<BTreeMap<usize, f64>, DynCatError> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    for e in ds.iter().flat_map(|r| &r.entities) {
        if let Some(id) = tax.resolve(&e.label) {
            for a in tax.ancestors(id) {
                let key = format!("{}/{}", tax.node(a).level, tax.node(a).name);
                ids.insert(key.clone(), a);
                groups.entry(key).or_default().push(e.span.surface.clone());
            }
        }
    }
    let coh = category_cohesion(&groups, emb, cfg.cohesion_cap, cfg.seed)?;
    Ok(coh.into_iter().map(|(k, v)| (ids[&k], v)).collect())
}

/// Round 1. Each listed type is independently kept or lifted one or two
/// levels. While entropy or Gini is off target, lifts from below-mean types
/// into above-mean categories are reverted in proportion to the excess; a
/// rebalancing pass is kept only if it lowers the total violation.
pub fn mix_granularities(
    ds: &[AnnotatedSentence],
    tax: &Taxonomy,
    cfg: &DynCatConfig,
    emb: Option<&dyn EmbeddingBackend>,
) -> Result<RoundResult, DynCatError> {
    let t = cfg.thresholds;
    let damped_parents: BTreeSet<usize> = match emb {
        Some(emb) => subtree_cohesion(ds, tax, emb, cfg)?
            .into_iter()
            .filter(|&(_, c)| c > t.cohesion_merge)
            .map(|(id, _)| id)
            .collect(),
        None => BTreeSet::new(),
    };
    let nodes: Vec<Vec<(String, Option<usize>)>> =
        ds.par_iter().map(|r| list_nodes(r, tax)).collect::<Result<_, _>>()?;
    let mut lifts: Vec<Vec<Lift>> = ds
        .par_iter()
        .zip(&nodes)
        .map(|(r, n)| plan_lifts(r, n, tax, cfg, &damped_parents))
        .collect();

    let mut passes = Vec::new();
    let mut best: Option<(Vec<AnnotatedSentence>, Vec<Edit>, f64)> = None;
    let mut pass = 0;
    loop {
        let ops: Vec<Vec<EditOp>> = nodes.iter().zip(&lifts).map(|(n, l)| lift_ops(n, l, tax)).collect();
        let (records, edits) = collect_round(ds, 1, ops.clone())?;
        let Some(dist) = gold_distribution(&records) else {
            return Ok(RoundResult { records, edits, passes });
        };
        let snap = MetricSnapshot::from_distribution(&dist, t);
        let violation = snap.violation(&t);
        let off_target = snap.flags.entropy_low || snap.flags.gini_high;
        let accepted = best.as_ref().is_none_or(|b| violation < b.2);
        passes.push(AuditEvent::Pass {
            round: 1,
            pass,
            probability: cfg.probabilities.mix,
            accepted,
            metrics: Some(snap),
        });
        if !accepted {
            break;
        }
        best = Some((records, edits, violation));
        if !off_target || pass >= cfg.max_rebalance_passes {
            break;
        }
        pass += 1;

        let mean = dist.mean::<f64>();
        let count = |n: &str| dist.counts().get(n).copied().unwrap_or(0) as f64;
        let mut lifted_into: BTreeMap<String, u64> = BTreeMap::new();
        let finals: Vec<BTreeMap<String, String>> = ds
            .iter()
            .zip(&ops)
            .map(|(r, o)| final_names(o, &gold_names(r).into_iter().map(str::to_string).collect()))
            .collect();
        for (r, f) in ds.iter().zip(&finals) {
            for e in &r.entities {
                if let Some(name) = e.label.name() {
                    if f[name] != name && count(name) < mean {
                        *lifted_into.entry(f[name].clone()).or_insert(0) += 1;
                    }
                }
            }
        }
        let revert_p: BTreeMap<&str, f64> = lifted_into
            .iter()
            .filter_map(|(name, &lifted)| {
                let c = count(name);
                (c > mean).then(|| (name.as_str(), ((c - mean) / lifted as f64).min(1.0)))
            })
            .collect();
        if revert_p.is_empty() {
            break;
        }
        let pass_key = pass.to_string();
        lifts = ds
            .par_iter()
            .zip(lifts)
            .zip(&finals)
            .map(|((r, ls), f)| {
                let mut g = rng::stream(cfg.seed, &["mix-rebalance", &pass_key, &r.sentence.id]);
                ls.into_iter()
                    .filter(|l| {
                        if count(&l.from) >= mean {
                            return true;
                        }
                        let dest = f
                            .get(&l.from)
                            .map(String::as_str)
                            .unwrap_or(tax.node(l.target).name.as_str());
                        match revert_p.get(dest) {
                            Some(&p) => g.gen::<f64>() >= p,
                            None => true,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    let (records, edits, _) = best.expect("first pass is always accepted");
    Ok(RoundResult { records, edits, passes })
}

/// Round 2. Listed types with table entries are replaced, jointly in list
/// and labels, by a synonym not already listed. The probability is boosted
/// for above-mean types when CV is high and damped for the rest when Gini is
/// high: splitting a heavy category lowers dispersion, splitting a light one
/// deepens the tail.
pub fn replace_synonyms(ds: &[AnnotatedSentence], cfg: &DynCatConfig) -> Result<RoundResult, DynCatError> {
    let dist = gold_distribution(ds);
    let snap = dist
        .as_ref()
        .map(|d| MetricSnapshot::from_distribution(d, cfg.thresholds));
    let (cv_high, gini_high) = snap
        .as_ref()
        .map_or((false, false), |s| (s.flags.cv_high, s.flags.gini_high));
    let mean = dist.as_ref().map_or(0.0, |d| d.mean::<f64>());
    let prob = |name: &str| {
        let heavy = dist
            .as_ref()
            .is_some_and(|d| d.counts().get(name).is_some_and(|&c| c as f64 > mean));
        cfg.modulate(
            cfg.probabilities.synonym,
            usize::from(gini_high && !heavy),
            usize::from(cv_high && heavy),
        )
    };
    let ops: Vec<Vec<EditOp>> = ds
        .par_iter()
        .map(|rec| {
            let mut r = rng::stream(cfg.seed, &["synonym", &rec.sentence.id]);
            let mut listed: BTreeSet<String> = rec.type_list.names().iter().cloned().collect();
            let mut ops = Vec::new();
            for name in rec.type_list.names() {
                let Some(syns) = cfg.synonyms.get(name) else { continue };
                let u: f64 = r.gen();
                if u >= prob(name) {
                    continue;
                }
                let free: Vec<&String> = syns.iter().filter(|s| !listed.contains(*s)).collect();
                if free.is_empty() {
                    continue;
                }
                let to = free[r.gen_range(0..free.len())].clone();
                listed.insert(to.clone());
                ops.push(EditOp::Rename {
                    from: name.clone(),
                    to,
                    level: None,
                });
            }
            ops
        })
        .collect();
    let (records, edits) = collect_round(ds, 2, ops)?;
    let metrics = snapshot(&records, cfg.thresholds);
    Ok(RoundResult {
        records,
        edits,
        passes: vec![AuditEvent::Pass {
            round: 2,
            pass: 0,
            probability: cfg.probabilities.synonym,
            accepted: true,
            metrics,
        }],
    })
}

/// Round 3. Listed types that label nothing in the record are dropped.
/// Damped when list occurrence is already concentrated (low entropy) and,
/// per type, when the type's own entities are not cohesive.
pub fn remove_irrelevant(
    ds: &[AnnotatedSentence],
    cfg: &DynCatConfig,
    emb: Option<&dyn EmbeddingBackend>,
) -> Result<RoundResult, DynCatError> {
    let t = cfg.thresholds;
    let list_low = list_distribution(ds)
        .and_then(|d| crate::metrics::normalized_entropy::<f64>(&d).ok())
        .is_some_and(|h| h < t.entropy_min);
    let cohesion = match emb {
        Some(emb) => category_cohesion(
            &crate::metrics::surfaces_by_category(ds),
            emb,
            cfg.cohesion_cap,
            cfg.seed,
        )?,
        None => BTreeMap::new(),
    };
    let ops: Vec<Vec<EditOp>> = ds
        .par_iter()
        .map(|rec| {
            let mut r = rng::stream(cfg.seed, &["remove", &rec.sentence.id]);
            let gold = gold_names(rec);
            let mut remaining = rec.type_list.len();
            let mut ops = Vec::new();
            for name in rec.type_list.names() {
                if gold.contains(name.as_str()) {
                    continue;
                }
                let incoherent = cohesion.get(name).is_some_and(|&c| c < cfg.cohesion_low);
                let p = cfg.modulate(
                    cfg.probabilities.remove,
                    usize::from(list_low) + usize::from(incoherent),
                    0,
                );
                let u: f64 = r.gen();
                if u < p && remaining > 1 {
                    remaining -= 1;
                    ops.push(EditOp::Remove { name: name.clone() });
                }
            }
            ops
        })
        .collect();
    let (records, edits) = collect_round(ds, 3, ops)?;
    let metrics = snapshot(&records, t);
    Ok(RoundResult {
        records,
        edits,
        passes: vec![AuditEvent::Pass {
            round: 3,
            pass: 0,
            probability: cfg.probabilities.remove,
            accepted: true,
            metrics,
        }],
    })
}

/// The lowest `percentile` percent of types by gold count, Miscellaneous
/// excluded; ties broken by a seeded key.
pub fn rare_types(d: &CategoryDistribution, percentile: f64, seed: u64, salt: &str) -> Vec<String> {
    let mut names: Vec<(&String, u64)> = d
        .counts()
        .iter()
        .filter(|(n, _)| n.as_str() != MISCELLANEOUS)
        .map(|(n, &c)| (n, c))
        .collect();
    let k = (percentile / 100.0 * names.len() as f64).floor() as usize;
    names.sort_by_key(|&(n, c)| (c, rng::stream_seed(seed, &["rare", salt, n])));
    names.into_iter().take(k).map(|(n, _)| n.clone()).collect()
}

fn merge_pass(
    ds: &[AnnotatedSentence],
    rare: &BTreeSet<String>,
    p: f64,
    cfg: &DynCatConfig,
    pass: usize,
) -> Result<(Vec<AnnotatedSentence>, Vec<Edit>), DynCatError> {
    let pass_key = pass.to_string();
    let ops: Vec<Vec<EditOp>> = ds
        .par_iter()
        .map(|rec| {
            let mut r = rng::stream(cfg.seed, &["merge", &pass_key, &rec.sentence.id]);
            let mut ops = Vec::new();
            for name in rec.type_list.names() {
                if !rare.contains(name) {
                    continue;
                }
                let u: f64 = r.gen();
                if u < p {
                    ops.push(EditOp::Rename {
                        from: name.clone(),
                        to: MISCELLANEOUS.to_string(),
                        level: Some(Level::Coarse),
                    });
                }
            }
            ops
        })
        .collect();
    collect_round(ds, 4, ops)
}

/// Round 4. Rare types are rewritten to Miscellaneous with a probability
/// boosted once per raised distribution flag. The first pass always runs;
/// further passes run while flags remain and are kept only if they reduce
/// the total threshold violation.
pub fn merge_miscellaneous(ds: &[AnnotatedSentence], cfg: &DynCatConfig) -> Result<RoundResult, DynCatError> {
    let t = cfg.thresholds;
    let mut current = ds.to_vec();
    let mut edits = Vec::new();
    let mut passes = Vec::new();
    for pass in 0..cfg.max_merge_passes.max(1) {
        let Some(dist) = gold_distribution(&current) else { break };
        let before = MetricSnapshot::from_distribution(&dist, t);
        let flags = before.flags.distribution_flags();
        if pass > 0 && flags == 0 {
            break;
        }
        let p = cfg.modulate(cfg.probabilities.merge, 0, flags);
        let rare: BTreeSet<String> = rare_types(&dist, cfg.rare_percentile, cfg.seed, &pass.to_string())
            .into_iter()
            .collect();
        let (candidate, pass_edits) = merge_pass(&current, &rare, p, cfg, pass)?;
        let after = snapshot(&candidate, t);
        let accepted = pass == 0 || after.as_ref().is_some_and(|a| a.violation(&t) < before.violation(&t));
        passes.push(AuditEvent::Pass {
            round: 4,
            pass,
            probability: p,
            accepted,
            metrics: after,
        });
        if !accepted {
            break;
        }
        current = candidate;
        edits.extend(pass_edits);
    }
    Ok(RoundResult {
        records: current,
        edits,
        passes,
    })
}

const ROUND_NAMES: [&str; 4] = [
    "mix_granularities",
    "replace_synonyms",
    "remove_irrelevant",
    "merge_miscellaneous",
];

/// Rounds 1 to 4 in order, with metrics between rounds and a final
/// convergence record. Output is a function of `(ds, cfg)` and the
/// embeddings.
pub fn run_dynamic_categorization(
    ds: &[AnnotatedSentence],
    tax: &Taxonomy,
    cfg: &DynCatConfig,
    emb: Option<&dyn EmbeddingBackend>,
) -> Result<(Vec<AnnotatedSentence>, AuditLog), DynCatError> {
    cfg.validate()?;
    let report = validate_dataset(ds);
    if !report.is_valid() {
        return Err(DynCatError::InvalidInput(report.to_string()));
    }
    let t = cfg.thresholds;
    let mut log = AuditLog::default();
    let mut current = ds.to_vec();
    for round in 1..=4u8 {
        log.events.push(AuditEvent::RoundStart {
            round,
            name: ROUND_NAMES[round as usize - 1].to_string(),
            metrics: snapshot(&current, t),
        });
        let result = match round {
            1 => mix_granularities(&current, tax, cfg, emb)?,
            2 => replace_synonyms(&current, cfg)?,
            3 => remove_irrelevant(&current, cfg, emb)?,
            _ => merge_miscellaneous(&current, cfg)?,
        };
        check_round(&result.records, round)?;
        log.events.extend(result.passes);
        let n = result.edits.len();
        log.events.extend(result.edits.into_iter().map(AuditEvent::Edit));
        current = result.records;
        log.events.push(AuditEvent::RoundEnd {
            round,
            edits: n,
            label_consistent: true,
            metrics: snapshot(&current, t),
        });
    }
    let last = snapshot(&current, t);
    let unmet = last.as_ref().map(MetricSnapshot::unmet).unwrap_or_default();
    log.events.push(AuditEvent::Convergence {
        targets_met: last.is_some() && unmet.is_empty(),
        unmet,
        metrics: last,
    });
    Ok((current, log))
}

/// Re-apply the logged edits to the original input.
pub fn replay(ds: &[AnnotatedSentence], log: &AuditLog) -> Result<Vec<AnnotatedSentence>, DynCatError> {
    let mut out = ds.to_vec();
    let index: HashMap<String, usize> = out
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sentence.id.clone(), i))
        .collect();
    for edit in log.edits() {
        let &i = index
            .get(&edit.record)
            .ok_or_else(|| DynCatError::InvalidInput(format!("log names unknown record {:?}", edit.record)))?;
        apply_op(&mut out[i], &edit.op)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Entity, Sentence, TypeList};

    fn record(id: &str, gold: &[(&str, Level)], list: &[&str]) -> AnnotatedSentence {
        let text: String = gold.iter().map(|_| "Xx ").collect::<String>() + "end";
        let s = Sentence::new(id, text, "en").unwrap();
        let ents = gold
            .iter()
            .enumerate()
            .map(|(i, &(n, l))| Entity::new(s.span(3 * i, 3 * i + 2).unwrap(), Label::named(n, l)))
            .collect();
        AnnotatedSentence::new(s, ents, TypeList::new(list.iter().copied(), false).unwrap())
    }

    fn politician() -> AnnotatedSentence {
        record("p", &[("Politician", Level::Fine)], &["Politician", "City", "Software"])
    }

    #[test]
    fn lift_one_level() {
        let tax = Taxonomy::dynamicner();
        let nodes = list_nodes(&politician(), &tax).unwrap();
        let real = tax.find("Real Person", Level::Medium).unwrap();
        let ops = lift_ops(
            &nodes,
            &[Lift {
                from: "Politician".into(),
                target: real,
            }],
            &tax,
        );
        let (out, _) = apply_all(&politician(), 1, ops).unwrap();
        assert_eq!(out.entities[0].label, Label::named("Real Person", Level::Medium));
        assert!(out.type_list.contains("Real Person") && !out.type_list.contains("Politician"));
        assert!(label_consistent(&out));
    }

    #[test]
    fn lifting_coalesces_descendants() {
        let tax = Taxonomy::dynamicner();
        let rec = record(
            "c",
            &[("Politician", Level::Fine), ("Artist", Level::Fine)],
            &["Politician", "Artist", "City"],
        );
        let nodes = list_nodes(&rec, &tax).unwrap();
        let person = tax.find("Person", Level::Coarse).unwrap();
        let ops = lift_ops(
            &nodes,
            &[Lift {
                from: "Politician".into(),
                target: person,
            }],
            &tax,
        );
        let (out, _) = apply_all(&rec, 1, ops).unwrap();
        assert_eq!(out.type_list.names(), &["Person".to_string(), "City".to_string()]);
        assert!(out.entities.iter().all(|e| e.label.name() == Some("Person")));
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let tax = Taxonomy::dynamicner();
        let ds = vec![politician()];
        let cfg = DynCatConfig {
            probabilities: Probabilities {
                mix: 0.0,
                synonym: 0.0,
                remove: 0.0,
                merge: 0.0,
            },
            synonyms: SynonymTable::starter(),
            ..Default::default()
        };
        assert_eq!(mix_granularities(&ds, &tax, &cfg, None).unwrap().records, ds);
        assert_eq!(replace_synonyms(&ds, &cfg).unwrap().records, ds);
        assert_eq!(remove_irrelevant(&ds, &cfg, None).unwrap().records, ds);
        assert_eq!(merge_miscellaneous(&ds, &cfg).unwrap().records, ds);
    }

    #[test]
    fn synonyms_are_joint() {
        let mut table = BTreeMap::new();
        table.insert("Politician".to_string(), vec!["Political Figure".to_string()]);
        let cfg = DynCatConfig {
            probabilities: Probabilities {
                synonym: 1.0,
                ..Default::default()
            },
            synonyms: SynonymTable(table),
            ..Default::default()
        };
        let out = replace_synonyms(&[politician()], &cfg).unwrap();
        let r = &out.records[0];
        assert_eq!(r.entities[0].label.name(), Some("Political Figure"));
        assert!(r.type_list.contains("Political Figure") && !r.type_list.contains("Politician"));
        let empty = DynCatConfig::default();
        assert_eq!(
            replace_synonyms(&[politician()], &empty).unwrap().records,
            vec![politician()]
        );
    }

    #[test]
    fn removal_keeps_gold() {
        let list = [
            "Person", "City", "Country", "Software", "Car", "Film", "Song", "Hotel", "Bank", "Port",
        ];
        let ds: Vec<AnnotatedSentence> = (0..10)
            .map(|i| {
                let mut l = list.to_vec();
                l.rotate_left(i);
                record(&format!("r{i}"), &[("Person", Level::Coarse)], &l)
            })
            .collect();
        let mut cfg = DynCatConfig::default();
        let half = remove_irrelevant(&ds, &cfg, None).unwrap();
        for r in &half.records {
            assert!(r.type_list.contains("Person"));
        }
        assert!(half.records.iter().map(|r| r.type_list.len()).sum::<usize>() < 100);
        cfg.probabilities.remove = 1.0;
        let all = remove_irrelevant(&ds, &cfg, None).unwrap();
        for r in &all.records {
            assert_eq!(r.type_list.names(), &["Person".to_string()]);
        }
    }

    #[test]
    fn merging_dedups_miscellaneous() {
        let mut ds = Vec::new();
        for i in 0..20 {
            ds.push(record(&format!("c{i}"), &[("City", Level::Fine)], &["City"]));
        }
        for n in ["Song", "Film", "Bank"] {
            for j in 0..20 {
                ds.push(record(&format!("{n}{j}"), &[(n, Level::Fine)], &[n]));
            }
        }
        for i in 0..5 {
            ds.push(record(&format!("h{i}"), &[("Hotel", Level::Fine)], &["Hotel"]));
        }
        for n in ["Port", "Park", "Bike", "Car"] {
            ds.push(record(n, &[(n, Level::Fine)], &[n]));
        }
        ds.push(record(
            "two",
            &[("Farm", Level::Fine), ("Mine", Level::Fine)],
            &["Farm", "Mine", "City"],
        ));
        let cfg = DynCatConfig {
            probabilities: Probabilities {
                merge: 1.0,
                ..Default::default()
            },
            rare_percentile: 60.0,
            max_merge_passes: 1,
            ..Default::default()
        };
        let d = gold_distribution(&ds).unwrap();
        let rare = rare_types(&d, 60.0, 0, "0");
        assert_eq!(rare.len(), 6);
        assert!(rare.contains(&"Farm".to_string()) && rare.contains(&"Mine".to_string()));
        let out = merge_miscellaneous(&ds, &cfg).unwrap();
        let two = out.records.iter().find(|r| r.id() == "two").unwrap();
        assert_eq!(two.type_list.names(), &[MISCELLANEOUS.to_string(), "City".to_string()]);
        assert!(two.entities.iter().all(|e| e.label.name() == Some(MISCELLANEOUS)));
    }

    #[test]
    fn unresolvable_label() {
        let tax = Taxonomy::dynamicner();
        let ds = vec![record("x", &[("Wizard", Level::Fine)], &["Wizard"])];
        assert!(matches!(
            mix_granularities(&ds, &tax, &DynCatConfig::default(), None),
            Err(DynCatError::UnresolvableLabel { .. })
        ));
    }

    #[test]
    fn bad_edits_rejected() {
        let mut r = politician();
        assert!(apply_op(
            &mut r,
            &EditOp::Remove {
                name: "Politician".into()
            }
        )
        .is_err());
        assert!(apply_op(&mut r, &EditOp::Remove { name: "Nope".into() }).is_err());
        assert!(apply_op(
            &mut r,
            &EditOp::Rename {
                from: "Nope".into(),
                to: "X".into(),
                level: None
            }
        )
        .is_err());
    }

    #[test]
    fn synonym_table_format() {
        let t = SynonymTable::parse("# c\nPolitician\tPolitical Figure|Statesman\n").unwrap();
        assert_eq!(t.get("Politician").unwrap().len(), 2);
        assert!(SynonymTable::parse("Politician").is_err());
        let starter = SynonymTable::starter();
        let tax = Taxonomy::dynamicner();
        for name in starter.0.keys() {
            assert!(tax.find_any(name).is_some(), "{name}");
        }
    }

    #[test]
    fn log_round_trip_and_replay() {
        let tax = Taxonomy::dynamicner();
        let ds: Vec<AnnotatedSentence> = (0..30)
            .map(|i| {
                let fine = ["Politician", "City", "Software", "Film", "Hotel"][i % 5];
                record(
                    &format!("r{i}"),
                    &[(fine, Level::Fine)],
                    &[fine, "Bank", "Song", "Port"],
                )
            })
            .collect();
        let cfg = DynCatConfig {
            synonyms: SynonymTable::starter(),
            ..Default::default()
        };
        let (out, log) = run_dynamic_categorization(&ds, &tax, &cfg, None).unwrap();
        assert_eq!(log.round_order(), vec![1, 2, 3, 4]);
        let text = log.to_jsonl();
        let parsed = AuditLog::parse_jsonl(&text).unwrap();
        assert_eq!(parsed, log);
        assert_eq!(replay(&ds, &parsed).unwrap(), out);
        let (again, log2) = run_dynamic_categorization(&ds, &tax, &cfg, None).unwrap();
        assert_eq!(again, out);
        assert_eq!(log2.to_jsonl(), text);
    }
}
