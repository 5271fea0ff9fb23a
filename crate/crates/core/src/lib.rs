//! Loss adapted plasticity: robust training when some data sources are
//! unreliable.
//!
//! Training batches each come from a single source. The optimizer keeps a
//! short loss history per source, raises a distrust counter for sources
//! whose losses sit persistently above the rest, and shrinks the gradients
//! of distrusted sources. The crate contains:
//!
//! - [`matrix`], [`model`], [`rng`]: dense classifiers with backprop and
//!   seeded randomness.
//! - [`lap`]: the per-source registry, distrust updates and depression.
//! - [`optim`]: SGD and Adam, plain or LAP-wrapped.
//! - [`corruption`]: source splitting and the synthetic corruption modes.
//! - [`walker`]: the random-walk model of distrust under shifted losses.

pub mod batch;
pub mod corruption;
pub mod error;
pub mod lap;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod rng;
pub mod walker;

pub use batch::Batch;
pub use error::{Error, Result};
pub use lap::{LapParams, SourceId, SourceRegistry};
pub use matrix::Matrix;
pub use model::{GradientSet, ModelKind, ModelSpec, ParameterSet};
pub use optim::{LapBinding, LapOptimizer, Optimizer, OptimizerKind};
pub use rng::Rng;
