//! Two-stage NER cascade (generation-based extraction, result fusion,
//! in-context hierarchical classification) and the dataset machinery around
//! it: categorization-quality metrics, four-round dynamic re-categorization,
//! sampling, splitting and decontamination.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the default precision used by reports and pipelines.

pub mod backend;
pub mod classification;
pub mod dataio;
pub mod dyncat;
pub mod eval;
pub mod extraction;
pub mod markup;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod taxonomy;
pub mod types;
pub mod validation;

pub use scalar::Scalar;
pub use taxonomy::Taxonomy;
pub use types::{AnnotatedSentence, Entity, EntitySpan, Label, Language, Level, Sentence, TypeList};

/// Default working precision.
pub type Real = f64;
/// Embedding at the default precision.
pub type Embedding = backend::EmbeddingVector<Real>;
/// Single-precision embedding, as most embedding servers emit.
pub type Embedding32 = backend::EmbeddingVector<f32>;
