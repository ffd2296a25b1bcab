//! Knowledge-grounded dialog pipeline.
//!
//! Four stages: knowledge-seeking turn detection, statistical entity
//! filtering with neural entity ranking, entity-specific FAQ ranking, and
//! response generation with a pointer-generator output layer.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which the pipeline and CLI use.

pub mod corpus;
pub mod detector;
pub mod entity_filter;
pub mod error;
pub mod features;
pub mod fixtures;
pub mod generator;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod scalar;
pub mod selector;
pub mod textproc;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = neural::Tensor<f64>;
pub type EncoderParams = neural::EncoderParams<f64>;
pub type TextClassifier = neural::TextClassifier<f64>;
pub type DetectorModel = detector::DetectorModel<f64>;
pub type DetectorEnsemble = detector::DetectorEnsemble<f64>;
pub type RankerModel = selector::RankerModel<f64>;
pub type RankerEnsemble = selector::RankerEnsemble<f64>;
pub type EmbeddingIndex = selector::EmbeddingIndex<f64>;
pub type Seq2SeqParams = generator::Seq2SeqParams<f64>;
