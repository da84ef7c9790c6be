//! Marginal models for cluster-period means of binary outcomes in stepped
//! wedge cluster randomized trials.
//!
//! The mean model is `g(mu_ij) = beta_j + X_ij delta`; within-period and
//! between-period intracluster correlations are estimated jointly from
//! cluster-period residual cross-products.

pub mod cli;
pub mod correlation;
pub mod data;
pub mod efficiency;
pub mod engine;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod oracle;
pub mod link;
pub mod roots;
pub mod sim;

pub use correlation::{CorrelationParams, Structure};
pub use data::TrialData;
pub use engine::{fit, Adjustment, Constraint, FitResult, ModelSpec};
pub use error::{Result, SwgeeError};
pub use link::Link;
