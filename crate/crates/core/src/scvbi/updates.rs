use crate::error::{Error, Result};
use crate::linalg::{norm2, CMatrix, CVector, RVector};
use crate::prior::PriorHyperParams;
use crate::special::{ln_gamma, logistic};
use crate::ssi::BernoulliMessage;

use super::state::{Moments, VariationalState};
use super::surrogate::QuadraticSurrogate;

/// `σₙ² = 1/Wₙ`.
pub fn update_qx_variances(surrogate: &QuadraticSurrogate) -> RVector {
    surrogate.diag().map(|w| 1.0 / w)
}

/// Shape and rate of `q(ρ)`, mixing the two branches by `⟨s⟩`.
pub fn update_q_rho(moments: &Moments, hyper: &PriorHyperParams) -> (RVector, RVector) {
    let n = moments.s_mean.len();
    let mut a = RVector::zeros(n);
    let mut b = RVector::zeros(n);
    for i in 0..n {
        let s = moments.s_mean[i];
        a[i] = s * hyper.a[i] + (1.0 - s) * hyper.a_bar[i] + 1.0;
        b[i] = s * hyper.b[i] + (1.0 - s) * hyper.b_bar[i] + moments.x2_mean[i];
    }
    (a, b)
}

/// `⟨ln Gamma(ρ; a, b)⟩` under the current `q(ρ)`.
pub(crate) fn expected_ln_gamma_density(a: f64, b: f64, ln_rho: f64, rho: f64) -> f64 {
    a * b.ln() - ln_gamma(a) + (a - 1.0) * ln_rho - b * rho
}

/// Posterior activity of each element given the incoming prior message.
/// Degenerate prior probabilities pass through unchanged.
pub fn update_q_s(moments: &Moments, hyper: &PriorHyperParams, prior_msg: &BernoulliMessage) -> Result<Vec<f64>> {
    let n = moments.s_mean.len();
    if prior_msg.len() != n {
        return Err(Error::dim(format!(
            "prior message has {} entries, expected {n}",
            prior_msg.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            let lam = prior_msg.active_prob[i];
            if lam <= 0.0 || lam >= 1.0 {
                return lam.clamp(0.0, 1.0);
            }
            let (lr, r) = (moments.ln_rho_mean[i], moments.rho_mean[i]);
            let ln_c = expected_ln_gamma_density(hyper.a[i], hyper.b[i], lr, r);
            let ln_c_bar = expected_ln_gamma_density(hyper.a_bar[i], hyper.b_bar[i], lr, r);
            logistic(lam.ln() - (-lam).ln_1p() + ln_c - ln_c_bar)
        })
        .collect())
}

/// `⟨‖y − Ax‖²⟩` under `q(x)` with diagonal covariance.
pub fn expected_residual(sensing: &CMatrix, col_norms2: &RVector, y: &CVector, mu: &CVector, sigma2: &RVector) -> f64 {
    norm2(&(y - sensing * mu)) + sigma2.dot(col_norms2)
}

/// Shape and rate of `q(κ)`.
pub fn update_q_kappa(
    state: &VariationalState,
    sensing: &CMatrix,
    col_norms2: &RVector,
    y: &CVector,
    hyper: &PriorHyperParams,
) -> (f64, f64) {
    let c = hyper.c + y.len() as f64;
    let d = hyper.d + expected_residual(sensing, col_norms2, y, &state.mu, &state.sigma2);
    (c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{column_norms2, C64};
    use crate::prior::default_hyperparams;
    use crate::scvbi::state::compute_moments;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn moments_with(s: f64, x2: f64, rho: f64, ln_rho: f64) -> Moments {
        Moments {
            rho_mean: RVector::from_element(1, rho),
            ln_rho_mean: RVector::from_element(1, ln_rho),
            kappa_mean: 1.0,
            ln_kappa_mean: 0.0,
            s_mean: vec![s],
            x2_mean: RVector::from_element(1, x2),
        }
    }

    #[test]
    fn variances_from_diagonal() {
        let a = CMatrix::zeros(2, 3);
        let y = CVector::zeros(2);
        let rho = RVector::from_vec(vec![2.0, 4.0, 0.5]);
        let s = QuadraticSurrogate::new(&a, &y, rho, 1.0).unwrap();
        assert_eq!(update_qx_variances(&s), RVector::from_vec(vec![0.5, 0.25, 2.0]));

        let a = CMatrix::identity(3, 3);
        let y = CVector::zeros(3);
        let s = QuadraticSurrogate::new(&a, &y, RVector::from_element(3, 1.0), 3.0).unwrap();
        assert!(update_qx_variances(&s).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn variances_match_dense_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = CMatrix::from_fn(5, 9, |_, _| C64::new(rng.random(), rng.random()));
        let y = CVector::zeros(5);
        let rho = RVector::from_fn(9, |_, _| rng.random::<f64>() + 0.1);
        let s = QuadraticSurrogate::new(&a, &y, rho.clone(), 1.7).unwrap();
        let w = a.adjoint() * &a * C64::new(1.7, 0.0);
        let v = update_qx_variances(&s);
        for i in 0..9 {
            assert!((v[i] - 1.0 / (w[(i, i)].re + rho[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn rho_update_branches() {
        let h = default_hyperparams(1);
        let (a, b) = update_q_rho(&moments_with(1.0, 0.5, 1.0, 0.0), &h);
        assert_eq!((a[0], b[0]), (2.0, 1.5));
        let (a, b) = update_q_rho(&moments_with(0.0, 0.0, 1.0, 0.0), &h);
        assert_eq!((a[0], b[0]), (2.0, 1e-5));
        let (_, b) = update_q_rho(&moments_with(0.5, 0.0, 1.0, 0.0), &h);
        assert!((b[0] - 0.5 * (1.0 + 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn s_update_degenerate_and_indistinguishable() {
        let h = default_hyperparams(1);
        let m = moments_with(0.5, 1.0, 1.0, -0.5772);
        for lam in [0.0, 1.0] {
            assert_eq!(
                update_q_s(&m, &h, &BernoulliMessage::uniform(1, lam)).unwrap(),
                vec![lam]
            );
        }
        let mut same = h.clone();
        same.a_bar = same.a.clone();
        same.b_bar = same.b.clone();
        let out = update_q_s(&m, &same, &BernoulliMessage::uniform(1, 0.37)).unwrap();
        assert!((out[0] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn s_update_reference_value() {
        // ln C = 0 + 0 - 1 = -1; ln C̄ = ln(1e-5) + 0 - 1e-5; λ = 0.5.
        // λ̃ = 1/(1 + exp(ln C̄ - ln C)), evaluated at 40 digits.
        let h = default_hyperparams(1);
        let m = moments_with(0.5, 1.0, 1.0, -0.5772);
        let out = update_q_s(&m, &h, &BernoulliMessage::uniform(1, 0.5)).unwrap();
        let expect = 0.999_972_818_192_413;
        assert!((out[0] - expect).abs() < 1e-13, "{}", out[0]);
    }

    #[test]
    fn kappa_shape_and_zero_residual() {
        let mut h = default_hyperparams(2);
        h.c = 1e-6;
        let a = CMatrix::from_fn(32, 2, |i, j| C64::new((i + j) as f64, 1.0));
        let mu = CVector::from_vec(vec![C64::new(1.0, -1.0), C64::new(0.5, 0.0)]);
        let y = &a * &mu;
        let mut st = VariationalState::initial(&h, &[0.5, 0.5], &y).unwrap();
        st.mu = mu;
        st.sigma2 = RVector::zeros(2);
        let (c, d) = update_q_kappa(&st, &a, &column_norms2(&a), &y, &h);
        assert_eq!(c, 32.000001);
        assert!((d - h.d).abs() < 1e-9);
    }

    #[test]
    fn kappa_rate_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (m, n) = (6, 4);
        let a = CMatrix::from_fn(m, n, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let y = CVector::from_fn(m, |_, _| C64::new(rng.random(), rng.random()));
        let mu = CVector::from_fn(n, |_, _| C64::new(rng.random(), rng.random()));
        let sigma2 = RVector::from_fn(n, |_, _| 0.2 + rng.random::<f64>());
        let analytic = expected_residual(&a, &column_norms2(&a), &y, &mu, &sigma2);
        let draws = 1_000_000;
        let mut acc = 0.0;
        let mut x = CVector::zeros(n);
        for _ in 0..draws {
            for i in 0..n {
                let sd = (0.5 * sigma2[i]).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                x[i] = mu[i] + C64::new(sd * re, sd * im);
            }
            acc += norm2(&(&y - &a * &x));
        }
        let mc = acc / draws as f64;
        assert!((mc / analytic - 1.0).abs() < 0.005, "{mc} vs {analytic}");
    }

    #[test]
    fn moments_feed_updates() {
        let h = default_hyperparams(2);
        let y = CVector::from_element(3, C64::new(1.0, 0.0));
        let st = VariationalState::initial(&h, &[0.2, 0.8], &y).unwrap();
        let m = compute_moments(&st).unwrap();
        let (a, b) = update_q_rho(&m, &h);
        assert!(a.iter().all(|&v| v > 0.0) && b.iter().all(|&v| v > 0.0));
    }
}
