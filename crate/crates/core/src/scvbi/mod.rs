//! Variational Bayesian inference with a support-restricted mean update.
//!
//! The posterior is factorized as `q(x) q(ρ) q(s) q(κ)` with a diagonal
//! Gaussian `q(x)`. Each round minimizes the free energy block by block, so
//! the free energy never increases.

mod energy;
mod mean;
mod round;
mod state;
mod support;
mod surrogate;
mod updates;

pub use energy::{free_energy, free_energy_with_norms};
pub use mean::{
    exact_icvbi_mean, refine_mean_gradient, robust_select_init, subspace_init, DescentRule, InitChoice, MeanSolve,
    Refinement,
};
pub use round::{
    extrinsic_from_scvbi, scvbi_round, stationarity_report, MeanUpdate, RoundDiagnostics, RoundOptions, RoundOutput,
    StationarityReport, UpdateBlock,
};
pub use state::{compute_moments, Moments, VariationalState};
pub use support::{estimate_support, estimate_support_scaled, SupportEstimate, SupportPolicy};
pub use surrogate::QuadraticSurrogate;
pub use updates::{expected_residual, update_q_kappa, update_q_rho, update_q_s, update_qx_variances};
