//! Structured sparse recovery on a dynamic grid.
//!
//! The crate implements an alternating-estimation solver built from three
//! cooperating pieces:
//!
//! * [`scvbi`]: variational Bayesian inference over the observation model
//!   `y = A(θ)x + w` with a three-layer sparse prior, where the posterior
//!   mean is obtained from a small linear solve on the estimated support and
//!   then refined with line-searched gradient steps;
//! * [`ssi`]: sum-product message passing over a 2D Markov support prior;
//! * [`grid`]: maximum-likelihood refinement of the angular grid inside the
//!   sensing matrix.
//!
//! [`ae`] wires them together, [`model`] and [`prior`] provide the
//! synthetic massive-MIMO benchmark, and [`harness`] runs experiments and
//! writes CSV traces.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ae;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod prior;
pub mod scvbi;
pub mod special;
pub mod ssi;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, RVector, C64};
