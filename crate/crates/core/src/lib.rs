//! The foothill penalty `p(x) = α·x·tanh(βx/2)` and its applications.
//!
//! * [`penalty`]: value, derivatives, inflection point, Taylor and Ridge gap.
//! * [`prox`]: univariate penalized least squares and solution paths.
//! * [`regression`]: penalized linear regression and a √n-consistency harness.
//! * [`quantizer`]: shifted penalties for binary quantization and a small
//!   binary-weight MLP trained with the straight-through estimator.

pub mod error;
pub mod penalty;
pub mod prox;
pub mod quantizer;
pub mod regression;
pub mod roots;

pub use error::{Error, Result};
pub use penalty::{NamedCase, PenaltyParams, SaddleInfo};
pub use prox::{ProxQuery, SolutionPath};
pub use quantizer::{PenaltyKind, QuantNet, QuantReport, ShiftedPenalty, TrainConfig};
pub use regression::{ConsistencyReport, FitResult, RegressionProblem};
