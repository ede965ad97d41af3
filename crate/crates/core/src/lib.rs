//! Occlusion-gated compact template learning.
//!
//! A face is described upstream by `n` per-patch embeddings plus a binary
//! visibility flag per patch. This crate learns a head that gates each
//! projected patch by its flag, normalizes it, and sums the results into one
//! fixed-size template, so that occluded patches contribute only a constant
//! vector. It also provides the angular-margin training objective, the
//! trainer, template matching and biometric evaluation, and the binary
//! container formats used at the ingestion boundary.

pub mod data_io;
pub mod error;
pub mod heads;
pub mod losses;
pub mod matching;
pub mod numerics;
pub mod trainer;

pub use crate::error::{Error, Result};
pub use crate::heads::{CompactTemplate, HeadConfig, HeadKind, HeadParams, PatchEmbeddingRecord};

pub use crate::losses::{ClassProjection, LambdaSchedule, SoftmaxClassifier};
pub use crate::numerics::{Matrix, Real};
pub use crate::matching::{EvalReport, Gallery};
pub use crate::trainer::{LossKind, TrainConfig, TrainReport};

