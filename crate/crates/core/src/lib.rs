//! Sparse prototype models over a similarity function.
//!
//! A model is a short linear combination of similarities to a handful of
//! *virtual* prototypes, `g(x) = sum_j beta_j s(x, z_j) + b`. Training
//! alternates an exact ridge solve for `(beta, b)` with gradient steps on
//! one prototype at a time, so prediction costs exactly `m` similarity
//! evaluations.
//!
//! ```
//! use supersparse::{dataio, trainer, Similarity, TrainConfig};
//!
//! let data = dataio::gen_synthetic(dataio::SyntheticKind::TwoGaussians, 25, 0).unwrap();
//! let sim = Similarity::rbf_default(data.dim()).unwrap();
//! let (model, trace) = trainer::fit(&data, 2, &sim, &TrainConfig::default()).unwrap();
//! assert_eq!(model.num_prototypes(), 2);
//! assert!(trace.final_objective() <= trace.initial_objective);
//! ```

pub mod baselines;
pub mod beta;
pub mod dataio;
mod error;
pub mod metrics;
pub mod selection;
pub mod similarity;
pub mod trainer;
mod types;
pub mod zstep;

pub use error::{Error, Result};
pub use similarity::{GradMode, Scorer, Similarity, SimilaritySpec};
pub use types::{objective, BoxConstraint, Dataset, ModelMetadata, ObjectiveValue, SparseModel, TrainConfig};
