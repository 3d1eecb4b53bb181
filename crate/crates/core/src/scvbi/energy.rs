use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{column_norms2, CMatrix, CVector, RVector};
use crate::prior::PriorHyperParams;
use crate::special::{bernoulli_neg_entropy, xlny};
use crate::ssi::BernoulliMessage;

use super::state::{compute_moments, VariationalState};
use super::updates::{expected_ln_gamma_density, expected_residual};

/// Variational free energy `⟨ln q⟩ − ⟨ln p̂(v, y)⟩`, i.e. the KL divergence to
/// the posterior up to `ln p(y)`, where `p̂` uses the incoming message as the
/// support prior.
pub fn free_energy(
    state: &VariationalState,
    sensing: &CMatrix,
    y: &CVector,
    hyper: &PriorHyperParams,
    prior_msg: &BernoulliMessage,
) -> Result<f64> {
    free_energy_with_norms(state, sensing, &column_norms2(sensing), y, hyper, prior_msg)
}

pub fn free_energy_with_norms(
    state: &VariationalState,
    sensing: &CMatrix,
    col_norms2: &RVector,
    y: &CVector,
    hyper: &PriorHyperParams,
    prior_msg: &BernoulliMessage,
) -> Result<f64> {
    let n = state.len();
    if prior_msg.len() != n || sensing.ncols() != n || sensing.nrows() != y.len() {
        return Err(Error::dim("free energy inputs have inconsistent dimensions"));
    }
    let mom = compute_moments(state)?;
    let m = y.len() as f64;

    // ⟨ln p(y | x, κ)⟩ + ⟨ln p(κ)⟩
    let resid = expected_residual(sensing, col_norms2, y, &state.mu, &state.sigma2);
    let mut ln_p = m * mom.ln_kappa_mean - m * PI.ln() - mom.kappa_mean * resid;
    ln_p += expected_ln_gamma_density(hyper.c, hyper.d, mom.ln_kappa_mean, mom.kappa_mean);

    let mut ln_q = expected_ln_gamma_density(state.c_tilde, state.d_tilde, mom.ln_kappa_mean, mom.kappa_mean);

    for i in 0..n {
        let lam_t = state.lambda_tilde[i];
        let lam = prior_msg.active_prob[i];
        let (lr, r) = (mom.ln_rho_mean[i], mom.rho_mean[i]);
        ln_p += lr - PI.ln() - r * mom.x2_mean[i];
        ln_p += lam_t * expected_ln_gamma_density(hyper.a[i], hyper.b[i], lr, r)
            + (1.0 - lam_t) * expected_ln_gamma_density(hyper.a_bar[i], hyper.b_bar[i], lr, r);
        ln_p += xlny(lam_t, lam) + xlny(1.0 - lam_t, 1.0 - lam);

        ln_q -= 1.0 + PI.ln() + state.sigma2[i].ln();
        ln_q += expected_ln_gamma_density(state.a_tilde[i], state.b_tilde[i], lr, r);
        ln_q += bernoulli_neg_entropy(lam_t);
    }
    let f = ln_q - ln_p;
    if f.is_nan() {
        return Err(Error::Numerical("free energy evaluated to NaN".into()));
    }
    Ok(f)
}
