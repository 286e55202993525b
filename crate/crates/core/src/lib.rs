//! Log-bilinear language models with additive morphological word
//! representations and a class-factored softmax.
//!
//! The pipeline runs corpus ingestion ([`corpus`]), word factorisation
//! ([`morphology`]), vocabulary partitioning ([`clustering`]), scoring
//! ([`model`]), parameter estimation ([`training`]) and evaluation
//! ([`eval`]).

pub mod clustering;
pub mod corpus;
mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod morphology;
pub mod training;

#[cfg(test)]
mod test_support;

pub use clustering::ClassPartition;
pub use corpus::{NGramInstance, Vocabulary};
pub use error::{Error, Result};
pub use model::{LanguageModel, ModelConfig, NormalizerCache, ParamBlocks};
pub use morphology::{FactorVocabulary, PostHocMap, WordFactorization};
pub use training::TrainingConfig;
