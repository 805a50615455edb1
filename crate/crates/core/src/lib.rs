//! Image-free classifier injection.
//!
//! Given the classifier rows of a pre-trained linear head for a set of seen
//! classes and a semantic descriptor for every class, this crate learns a
//! descriptor→weights regressor regularised by two autoencoders that share a
//! latent space, predicts weights for unseen classes and appends them to the
//! head. Baselines, (generalised) zero-shot metrics, file formats and a
//! synthetic task with known ground truth are included.
//!
//! Data-parallel loops (matrix products, batched scoring, independent
//! training runs) use rayon under the default `parallel` feature and fall
//! back to sequential iteration without it. Results do not depend on the
//! policy.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod format;
pub mod model;
pub mod nn;
pub mod par;
pub mod tensor;

pub use data::{ClassId, ClassifierHead, DescriptorSet, FeatureSet, PairSet, SplitManifest};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use model::{IcisModel, InjectMode, LossConfig, LossTrace, Term, TrainConfig};
pub use nn::Distance;
pub use par::Execution;
pub use tensor::{Matrix, Rng};
