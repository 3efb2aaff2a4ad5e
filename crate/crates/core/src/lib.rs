//! Entropy-regularized discrete-time linear-quadratic control.
//!
//! * [`lq_core`]: the model, quadratic propagation and the backward recursion
//!   for the optimal value and Gaussian policy.
//! * [`closed_form`]: explicit solutions for the surplus terminal weight.
//! * [`policy_iter`]: exact policy evaluation and policy improvement.
//! * [`market`]: per-period discretization and episode simulation.
//! * [`mv_alm`]: mean-variance asset-liability layer and evaluation metrics.
//! * [`rl`]: the five-parameter value/policy family and its SGD trainer.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Matrix loops index
// explicitly.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod closed_form;
pub mod error;
pub mod linalg;
pub mod lq_core;
pub mod market;
pub mod mv_alm;
pub mod policy_iter;
pub mod rl;
#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use linalg::{Mat2, SquareMatrix};
pub use lq_core::{
    gaussian_neg_entropy, optimal_policy, optimal_value, propagate_quadratic, riccati_backward,
    GaussianPolicy, ModelParams, PolicyStage, QuadraticValue, RiccatiSolution, RiccatiStage,
    StateVec,
};
