//! Robust and sparse mean-variance (RSMV) portfolio selection.
//!
//! The crate covers the whole pipeline:
//!
//! * [`market`]: return ingestion, moment estimation, Cholesky factors, the
//!   equicorrelation covariance model and synthetic instances.
//! * [`closed_form`]: minimum-variance, mean-variance, worst-case VaR, robust
//!   MV (via the scalar root `rho*`), ridge-regularized MV, distance bounds and
//!   efficient frontiers.
//! * [`prox`]: proximal maps, Moreau envelopes and generalized Jacobians of the
//!   scaled Euclidean norm and the weighted l1 norm.
//! * [`dc`]: the capped-l1 difference-of-convex model and its semismooth
//!   Newton based proximal DC solver, the convex l1 baseline and the
//!   support-reduced accelerated variant.
//! * [`exact`]: exact small-scale solutions by support enumeration.
//! * [`cardinality`]: the equicorrelated cardinality study and empirical
//!   cardinality surfaces.

pub mod cardinality;
pub mod closed_form;
pub mod dc;
mod error;
pub mod exact;
pub mod market;
pub mod prox;
pub mod report;

pub use error::{Error, Result};
