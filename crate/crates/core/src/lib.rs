//! Few-shot one-class origin attribution for generated images.
//!
//! A frozen dual encoder scores an image against two prompts that share a
//! learnable context (`[t] ⊗ non_target`, `[t] ⊗ target`). Only the context
//! is trained. During training a seeded subset of images is pushed one
//! sign-gradient step uphill on the loss before the context update, which
//! widens the region the classifier treats as non-target.
//!
//! Several one-class classifiers combine into a one-vs-rest ensemble that
//! either names a source or answers "others".

pub mod ada;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod evaluator;
pub mod fingerprint;
pub mod io;
pub mod prompt;
pub mod trainer;

pub use ada::{AdaConfig, AdaMode, Perturbation};
pub use data::{DatasetHandle, FewShotSplit, PreprocessSpec, RawImage};
pub use encoder::{
    DualEncoder, EmbeddingMatrix, ImageBatch, SimilarityConfig, SimilarityKind, ToyConfig,
    ToyEncoder,
};
pub use ensemble::{AttributionResult, Decision, Ensemble};
pub use error::{Error, Result};
pub use evaluator::{EvalReport, EvalTask, Method, ScoreSet, TransformKind};
pub use prompt::{ClassPromptPair, OneClassClassifier, PromptContext};
pub use trainer::{LabeledImageBatch, TrainConfig};
