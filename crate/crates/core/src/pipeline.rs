//! The cascade end to end: extract with several rounds, fuse, re-embed each
//! span, classify each one (progressively when a taxonomy is active).

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{sha256_hex, ChatBackend};
use crate::classification::{
    classify_entity, classify_progressive, ClassificationConfig, ClassificationError, ClassificationQuery, Mode,
};
use crate::dataio::{corpus_to_string, write_text, DataError};
use crate::extraction::{extract_rounds, fuse_rounds, ExtractionConfig, ExtractionError, ExtractionRound};
use crate::markup::{reembed_each, MarkedText, MarkupError};
use crate::taxonomy::Taxonomy;
use crate::types::{AnnotatedSentence, Entity, Label, Level, Sentence, TypeList};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error("extraction: {0}")]
    Extraction(#[from] ExtractionError),
    #[error("classification: {0}")]
    Classification(#[from] ClassificationError),
    #[error("markup: {0}")]
    Markup(#[from] MarkupError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("sentence {id}: {source}")]
    Sentence {
        id: String,
        #[source]
        source: StageError,
    },
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How spans are labeled.
#[derive(Debug, Clone, PartialEq)]
pub enum Labeling {
    /// One classification over a fixed list.
    Flat(TypeList),
    /// Coarse-to-fine descent, stopping at `depth`.
    Taxonomy { taxonomy: Taxonomy, depth: Level },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub extraction: ExtractionConfig,
    pub classification: ClassificationConfig,
    pub mode: Mode,
    pub labeling: Labeling,
    pub extraction_demos: Vec<(Sentence, MarkedText)>,
    pub classification_demos: Vec<(ClassificationQuery, Label)>,
    /// Sentences processed concurrently.
    pub workers: usize,
    /// Abort the batch on the first failing sentence.
    pub fail_fast: bool,
}

impl PipelineConfig {
    pub fn new(labeling: Labeling, mode: Mode) -> Self {
        Self {
            extraction: ExtractionConfig::default(),
            classification: ClassificationConfig::default(),
            mode,
            labeling,
            extraction_demos: Vec::new(),
            classification_demos: Vec::new(),
            workers: 4,
            fail_fast: false,
        }
    }

    /// Set the seed of both stages.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.extraction.seed = seed;
        self.classification.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.extraction.rounds == 0 {
            return Err(PipelineError::InvalidConfig("rounds must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(PipelineError::InvalidConfig("workers must be at least 1".into()));
        }
        if let Labeling::Taxonomy { depth: Level::Flat, .. } = self.labeling {
            return Err(PipelineError::InvalidConfig(
                "taxonomy depth must be coarse, medium or fine".into(),
            ));
        }
        Ok(())
    }

    /// Type list attached to every prediction.
    pub fn output_type_list(&self) -> TypeList {
        let allow = self.mode == Mode::ZeroShot;
        match &self.labeling {
            Labeling::Flat(tl) => tl.clone().with_unknown(allow || tl.allow_unknown()),
            Labeling::Taxonomy { taxonomy, depth } => TypeList::new(taxonomy.names_down_to(*depth), allow)
                .expect("taxonomy names are non-empty and deduplicated"),
        }
    }

    /// SHA-256 of a canonical JSON rendering of everything that affects output.
    pub fn fingerprint(&self) -> String {
        let labeling = match &self.labeling {
            Labeling::Flat(tl) => json!({
                "flat": tl.names(),
                "allow_unknown": tl.allow_unknown(),
            }),
            Labeling::Taxonomy { taxonomy, depth } => json!({
                "taxonomy_sha256": sha256_hex(taxonomy.to_tax_string()),
                "depth": depth,
            }),
        };
        let ext_demos: Vec<_> = self
            .extraction_demos
            .iter()
            .map(|(s, m)| json!([s.text, m.text()]))
            .collect();
        let cls_demos: Vec<_> = self
            .classification_demos
            .iter()
            .map(|(q, l)| json!([q.render(), l.to_string()]))
            .collect();
        let doc = json!({
            "extraction": self.extraction,
            "classification": self.classification,
            "mode": self.mode,
            "labeling": labeling,
            "extraction_demos": ext_demos,
            "classification_demos": cls_demos,
        });
        sha256_hex(serde_json::to_string(&doc).expect("config serializes"))
    }
}

/// Extraction rounds and fused spans of one sentence.
pub fn extract_sentence(
    ext: &dyn ChatBackend,
    s: &Sentence,
    cfg: &PipelineConfig,
) -> Result<(Vec<ExtractionRound>, Vec<crate::EntitySpan>), ExtractionError> {
    let rounds = extract_rounds(ext, s, &cfg.extraction_demos, &cfg.extraction)?;
    let spans = fuse_rounds(&rounds);
    Ok((rounds, spans))
}

/// Label one single-region marked sentence under the configured labeling.
pub fn label_marked(
    cls: &dyn ChatBackend,
    marked: &MarkedText,
    cfg: &PipelineConfig,
) -> Result<Label, ClassificationError> {
    match &cfg.labeling {
        Labeling::Flat(tl) => {
            let q = ClassificationQuery::new(marked.clone(), tl.clone(), cfg.mode)?.at_level(Level::Flat);
            classify_entity(cls, &q, &cfg.classification_demos, &cfg.classification)
        }
        Labeling::Taxonomy { taxonomy, depth } => {
            Ok(classify_progressive(cls, marked, taxonomy, cfg.mode, *depth, &cfg.classification)?.deepest())
        }
    }
}

/// Run the cascade on one sentence. Unknown labels are kept.
pub fn run_ner_sentence(
    ext: &dyn ChatBackend,
    cls: &dyn ChatBackend,
    s: &Sentence,
    cfg: &PipelineConfig,
) -> Result<AnnotatedSentence, PipelineError> {
    cfg.validate()?;
    let wrap = |source: StageError| PipelineError::Sentence {
        id: s.id.clone(),
        source,
    };
    let (_, spans) = extract_sentence(ext, s, cfg).map_err(|e| wrap(e.into()))?;
    let marked = reembed_each(s, &spans).map_err(|e| wrap(e.into()))?;
    let labels: Vec<Label> = marked
        .par_iter()
        .map(|m| label_marked(cls, m, cfg))
        .collect::<Result<_, _>>()
        .map_err(|e| wrap(e.into()))?;
    let entities = spans
        .into_iter()
        .zip(labels)
        .map(|(span, label)| Entity::new(span, label))
        .collect();
    Ok(AnnotatedSentence::new(s.clone(), entities, cfg.output_type_list()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceFailure {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub extractor_model: String,
    pub classifier_model: String,
    pub seed: u64,
    pub rounds: usize,
    pub sentences: usize,
    pub predictions: usize,
    pub errors: Vec<SentenceFailure>,
    /// Unix seconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// One per successful sentence, input order.
    pub predictions: Vec<AnnotatedSentence>,
    pub manifest: RunManifest,
}

/// Run the cascade over a corpus on a bounded worker pool. Failures are
/// recorded per sentence unless `fail_fast` is set.
pub fn run_ner_batch(
    ext: &dyn ChatBackend,
    cls: &dyn ChatBackend,
    sentences: &[Sentence],
    cfg: &PipelineConfig,
) -> Result<BatchOutput, PipelineError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    let results: Vec<Result<AnnotatedSentence, PipelineError>> = pool.install(|| {
        sentences
            .par_iter()
            .map(|s| run_ner_sentence(ext, cls, s, cfg))
            .collect()
    });
    let mut predictions = Vec::with_capacity(sentences.len());
    let mut errors = Vec::new();
    for (s, r) in sentences.iter().zip(results) {
        match r {
            Ok(p) => predictions.push(p),
            Err(e) if cfg.fail_fast => return Err(e),
            Err(e) => errors.push(SentenceFailure {
                id: s.id.clone(),
                message: e.to_string(),
            }),
        }
    }
    let manifest = RunManifest {
        config_hash: cfg.fingerprint(),
        extractor_model: ext.model_id().to_string(),
        classifier_model: cls.model_id().to_string(),
        seed: cfg.extraction.seed,
        rounds: cfg.extraction.rounds,
        sentences: sentences.len(),
        predictions: predictions.len(),
        errors,
        created_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    Ok(BatchOutput { predictions, manifest })
}

/// Sidecar path: `<file>.manifest.json`.
pub fn manifest_path(predictions: &Path) -> PathBuf {
    let mut name = predictions.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Write predictions as corpus JSONL and the manifest beside them.
pub fn write_batch(out: &BatchOutput, path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let path = path.as_ref();
    write_text(path, &corpus_to_string(&out.predictions))?;
    let manifest = serde_json::to_string_pretty(&out.manifest).expect("manifest serializes");
    write_text(manifest_path(path), &(manifest + "\n"))?;
    Ok(())
}
