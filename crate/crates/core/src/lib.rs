//! Partitioning-based least-squares regression: estimation, robust bias
//! correction, pointwise and uniform inference, and knot selection.

pub mod basis;
pub mod bias;
pub mod error;
pub mod fit;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod partition;
pub mod tuning;

pub use basis::{BasisSpec, Family};
pub use error::{LsError, Result};
pub use fit::{Estimator, EstimatorKind, FitResult};
pub use partition::{KnotRule, TensorPartition};
