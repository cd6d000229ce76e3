//! Reduced stochastic hedge ratios from pathwise sensitivities.
//!
//! Monte-Carlo engines deliver pathwise sensitivities of a value process
//! with respect to model primitives (`b`) and of hedge instruments with
//! respect to the same primitives (`A`). Hedge ratios `phi` satisfy the
//! pathwise relation `A_l phi_l = b_l`. Instead of solving that relation
//! path by path, this library represents the hedge ratios in a small
//! empirical basis and fits the coefficients either by minimizing the
//! full pathwise residual (empirical L2) or by matching residual moments
//! against a test basis (Galerkin / Petrov-Galerkin), with Tikhonov
//! regularization and residual diagnostics on both routes.

// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// along with out-of-range values in validation code.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod models;
pub mod reduce_ls;
pub mod reduce_projected;
pub mod solve;
pub mod states;
pub mod tensors;

pub use error::{Error, Result};
