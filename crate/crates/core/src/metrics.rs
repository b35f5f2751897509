//! Categorization-quality metrics: cohesion, normalized entropy, Gini
//! coefficient and coefficient of variation, plus the thresholded report
//! that gates dynamic re-categorization.
//!
//! The numeric functions are generic over [`Scalar`]; reports use `f64`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, EmbeddingBackend};
use crate::scalar::Scalar;
use crate::types::AnnotatedSentence;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("cohesion needs at least 2 entities, got {0}")]
    DegenerateCategory(usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vectors of different dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("normalized entropy needs at least 2 categories, got {0}")]
    DegenerateDistribution(usize),
    #[error("mean count is zero")]
    ZeroMean,
    #[error("distribution has no mass")]
    EmptyDistribution,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Per-category sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDistribution {
    counts: BTreeMap<String, u64>,
}

impl CategoryDistribution {
    pub fn new(counts: BTreeMap<String, u64>) -> Result<Self, MetricError> {
        if counts.values().sum::<u64>() == 0 {
            return Err(MetricError::EmptyDistribution);
        }
        Ok(Self { counts })
    }

    pub fn from_counts<S: Into<String>>(counts: impl IntoIterator<Item = (S, u64)>) -> Result<Self, MetricError> {
        let mut map = BTreeMap::new();
        for (k, v) in counts {
            *map.entry(k.into()).or_insert(0) += v;
        }
        Self::new(map)
    }

    /// Count occurrences of each name.
    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, MetricError> {
        Self::from_counts(names.into_iter().map(|n| (n, 1)))
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    /// Number of categories.
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn proportions<T: Scalar>(&self) -> Vec<T> {
        let total = T::of(self.total() as f64);
        self.counts.values().map(|&c| T::of(c as f64) / total).collect()
    }

    pub fn mean<T: Scalar>(&self) -> T {
        T::of(self.total() as f64) / T::of(self.n() as f64)
    }

    /// Population standard deviation of the counts.
    pub fn std_dev<T: Scalar>(&self) -> T {
        let mu = self.mean::<T>();
        let var = self
            .counts
            .values()
            .map(|&c| {
                let d = T::of(c as f64) - mu;
                d * d
            })
            .sum::<T>()
            / T::of(self.n() as f64);
        var.sqrt()
    }
}

pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: T = a.iter().zip(b).map(|(x, y)| *x * *y).sum();
    let na: T = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let nb: T = b.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return Err(MetricError::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Mean pairwise cosine similarity over unordered pairs.
pub fn cohesion<T: Scalar, V: AsRef<[T]>>(vectors: &[V]) -> Result<T, MetricError> {
    let n = vectors.len();
    if n < 2 {
        return Err(MetricError::DegenerateCategory(n));
    }
    let mut sum = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            sum = sum + cosine(vectors[i].as_ref(), vectors[j].as_ref())?;
        }
    }
    let pairs = T::of((n * (n - 1) / 2) as f64);
    Ok(sum / pairs)
}

/// Shannon entropy of the proportions (base 2) divided by `log2(n)`.
/// Zero proportions contribute nothing.
pub fn entropy_from_proportions<T: Scalar>(p: &[T]) -> Result<T, MetricError> {
    let n = p.len();
    if n < 2 {
        return Err(MetricError::DegenerateDistribution(n));
    }
    let h: T = p.iter().filter(|&&x| x > T::zero()).map(|&x| -(x * x.log2())).sum();
    Ok(h / T::of(n as f64).log2())
}

pub fn normalized_entropy<T: Scalar>(d: &CategoryDistribution) -> Result<T, MetricError> {
    entropy_from_proportions(&d.proportions::<T>())
}

/// `(n + 1 - 2 Σ (n - i + 1) p_i) / n` over proportions sorted ascending.
pub fn gini_from_proportions<T: Scalar>(p: &[T]) -> T {
    let n = p.len();
    if n == 0 {
        return T::zero();
    }
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("proportions are finite"));
    let weighted: T = sorted.iter().enumerate().map(|(i, &x)| T::of((n - i) as f64) * x).sum();
    let nf = T::of(n as f64);
    (nf + T::one() - T::of(2.0) * weighted) / nf
}

pub fn gini<T: Scalar>(d: &CategoryDistribution) -> T {
    gini_from_proportions(&d.proportions::<T>())
}

/// Population standard deviation over mean of the counts.
pub fn variation_coefficient<T: Scalar>(d: &CategoryDistribution) -> Result<T, MetricError> {
    let mu = d.mean::<T>();
    if mu == T::zero() {
        return Err(MetricError::ZeroMean);
    }
    Ok(d.std_dev::<T>() / mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Categories more cohesive than this are merge candidates.
    pub cohesion_merge: f64,
    pub entropy_min: f64,
    pub gini_max: f64,
    pub cv_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            cohesion_merge: 0.9,
            entropy_min: 0.8,
            gini_max: 0.4,
            cv_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub entropy_low: bool,
    pub gini_high: bool,
    pub cv_high: bool,
    /// Categories whose cohesion exceeds the merge threshold.
    pub cohesion_merge: Vec<String>,
}

impl Flags {
    /// Pure function of the metric values.
    pub fn evaluate(
        t: &Thresholds,
        entropy: Option<f64>,
        gini: f64,
        cv: f64,
        cohesion: &BTreeMap<String, f64>,
    ) -> Self {
        Self {
            entropy_low: entropy.is_some_and(|h| h < t.entropy_min),
            gini_high: gini > t.gini_max,
            cv_high: cv > t.cv_max,
            cohesion_merge: cohesion
                .iter()
                .filter(|(_, &c)| c > t.cohesion_merge)
                .map(|(k, _)| k.clone())
                .collect(),
        }
    }

    pub fn distribution_flags(&self) -> usize {
        [self.entropy_low, self.gini_high, self.cv_high]
            .into_iter()
            .filter(|&f| f)
            .count()
    }

    pub fn any(&self) -> bool {
        self.distribution_flags() > 0 || !self.cohesion_merge.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub name: String,
    pub count: u64,
    pub proportion: f64,
    pub cohesion: Option<f64>,
    /// Why cohesion was not computed, when it was not.
    pub cohesion_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub categories: Vec<CategoryStat>,
    /// `None` when fewer than two categories exist.
    pub normalized_entropy: Option<f64>,
    pub gini: f64,
    pub variation_coefficient: f64,
    pub thresholds: Thresholds,
    pub flags: Flags,
}

impl MetricReport {
    /// Distribution metrics only; cohesion left unset.
    pub fn from_distribution(d: &CategoryDistribution, thresholds: Thresholds) -> Self {
        let props = d.proportions::<f64>();
        let categories = d
            .counts()
            .iter()
            .zip(&props)
            .map(|((name, &count), &p)| CategoryStat {
                name: name.clone(),
                count,
                proportion: p,
                cohesion: None,
                cohesion_skipped: Some("not computed".into()),
            })
            .collect();
        let mut report = Self {
            categories,
            normalized_entropy: normalized_entropy(d).ok(),
            gini: gini(d),
            variation_coefficient: variation_coefficient(d).unwrap_or(0.0),
            thresholds,
            flags: Flags::default(),
        };
        report.refresh_flags();
        report
    }

    pub fn cohesion_map(&self) -> BTreeMap<String, f64> {
        self.categories
            .iter()
            .filter_map(|c| c.cohesion.map(|v| (c.name.clone(), v)))
            .collect()
    }

    pub fn refresh_flags(&mut self) {
        self.flags = Flags::evaluate(
            &self.thresholds,
            self.normalized_entropy,
            self.gini,
            self.variation_coefficient,
            &self.cohesion_map(),
        );
    }

    /// Tab-separated `panel, category, value` rows, one panel per metric.
    pub fn to_table(&self) -> String {
        let mut out = String::from("panel\tcategory\tvalue\n");
        for c in &self.categories {
            if let Some(v) = c.cohesion {
                out.push_str(&format!("cohesion\t{}\t{v:.6}\n", c.name));
            }
        }
        if let Some(h) = self.normalized_entropy {
            out.push_str(&format!("normalized_entropy\t*\t{h:.6}\n"));
        }
        out.push_str(&format!("gini\t*\t{:.6}\n", self.gini));
        out.push_str(&format!(
            "variation_coefficient\t*\t{:.6}\n",
            self.variation_coefficient
        ));
        for c in &self.categories {
            out.push_str(&format!("count\t{}\t{}\n", c.name, c.count));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub thresholds: Thresholds,
    /// Entities per category fed to cohesion; larger categories are subsampled.
    pub cohesion_cap: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            cohesion_cap: 200,
            seed: 0,
        }
    }
}

/// Gold label counts by name; Unknown labels are not a category.
pub fn label_distribution(ds: &[AnnotatedSentence]) -> Result<CategoryDistribution, MetricError> {
    CategoryDistribution::from_names(
        ds.iter()
            .flat_map(|r| r.entities.iter())
            .filter_map(|e| e.label.name().map(str::to_string)),
    )
}

/// Entity surfaces grouped by label name, dataset order.
pub fn surfaces_by_category(ds: &[AnnotatedSentence]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in ds.iter().flat_map(|r| r.entities.iter()) {
        if let Some(name) = e.label.name() {
            out.entry(name.to_string()).or_default().push(e.span.surface.clone());
        }
    }
    out
}

/// Seeded subsample of at most `cap` items, original order kept.
pub fn subsample<T: Clone>(items: &[T], cap: usize, seed: u64, salt: &str) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    let mut rng = crate::rng::stream(seed, &["subsample", salt]);
    let mut idx = rand::seq::index::sample(&mut rng, items.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// Cohesion per category from embeddings of entity surfaces.
///
/// Categories with fewer than two entities are absent from the result.
pub fn category_cohesion(
    groups: &BTreeMap<String, Vec<String>>,
    emb: &dyn EmbeddingBackend,
    cap: usize,
    seed: u64,
) -> Result<BTreeMap<String, f64>, MetricError> {
    let sampled: BTreeMap<&String, Vec<String>> = groups
        .iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(k, v)| (k, subsample(v, cap, seed, k)))
        .collect();
    let mut unique: Vec<String> = sampled.values().flatten().cloned().collect();
    unique.sort();
    unique.dedup();
    if unique.is_empty() {
        return Ok(BTreeMap::new());
    }
    let vectors = emb.embed_texts(&unique)?;
    let lookup: HashMap<&str, &Vec<f64>> = unique
        .iter()
        .map(String::as_str)
        .zip(vectors.iter().map(|v| &v.values))
        .collect();
    let mut out = BTreeMap::new();
    for (name, texts) in sampled {
        let vs: Vec<&Vec<f64>> = texts.iter().map(|t| lookup[t.as_str()]).collect();
        out.insert(name.clone(), cohesion::<f64, _>(&vs)?);
    }
    Ok(out)
}

/// Full quality report over the gold labels of a dataset.
pub fn metric_report(
    ds: &[AnnotatedSentence],
    emb: Option<&dyn EmbeddingBackend>,
    cfg: &ReportConfig,
) -> Result<MetricReport, MetricError> {
    let dist = label_distribution(ds)?;
    let mut report = MetricReport::from_distribution(&dist, cfg.thresholds);
    if let Some(emb) = emb {
        let groups = surfaces_by_category(ds);
        let coh = category_cohesion(&groups, emb, cfg.cohesion_cap, cfg.seed)?;
        for c in &mut report.categories {
            match coh.get(&c.name) {
                Some(&v) => {
                    c.cohesion = Some(v);
                    c.cohesion_skipped = None;
                }
                None => c.cohesion_skipped = Some(format!("{} entity", c.count)),
            }
        }
        report.refresh_flags();
    }
    Ok(report)
}
