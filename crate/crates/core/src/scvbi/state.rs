use crate::error::{Error, Result};
use crate::linalg::{norm2, CVector, RVector};
use crate::prior::PriorHyperParams;
use crate::special::digamma;

use super::support::SupportEstimate;

/// Parameters of the factorized posterior `q(x) q(ρ) q(s) q(κ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub mu: CVector,
    pub sigma2: RVector,
    pub a_tilde: RVector,
    pub b_tilde: RVector,
    pub lambda_tilde: Vec<f64>,
    pub c_tilde: f64,
    pub d_tilde: f64,
}

impl VariationalState {
    /// Starting point with a zero mean: `σ² = 1`, `ã = a + 1`, `b̃ = b + 1`,
    /// `λ̃` equal to the prior activity, `c̃ = c + M`, `d̃ = d + ‖y‖²`.
    pub fn initial(hyper: &PriorHyperParams, prior_activity: &[f64], y: &CVector) -> Result<Self> {
        let n = hyper.len();
        hyper.validate(n)?;
        if prior_activity.len() != n {
            return Err(Error::dim(format!(
                "prior activity has {} entries, expected {n}",
                prior_activity.len()
            )));
        }
        Ok(Self {
            mu: CVector::zeros(n),
            sigma2: RVector::from_element(n, 1.0),
            a_tilde: RVector::from_iterator(n, hyper.a.iter().map(|a| a + 1.0)),
            b_tilde: RVector::from_iterator(n, hyper.b.iter().map(|b| b + 1.0)),
            lambda_tilde: prior_activity.to_vec(),
            c_tilde: hyper.c + y.len() as f64,
            d_tilde: hyper.d + norm2(y),
        })
    }

    /// Like [`VariationalState::initial`], but `q(ρₙ)` starts at the prior of
    /// the branch the initial support assigns to element `n`: `Gamma(aₙ, bₙ)`
    /// on the support and `Gamma(āₙ, b̄ₙ)` elsewhere.
    ///
    /// With the uniform start every element begins with `⟨ρ⟩ ≈ 1`, where the
    /// active branch wins the support update, and an element on the active
    /// branch keeps `b̃ ≥ b`, so it never leaves it.
    pub fn from_support(
        hyper: &PriorHyperParams,
        prior_activity: &[f64],
        y: &CVector,
        support: &SupportEstimate,
    ) -> Result<Self> {
        let mut state = Self::initial(hyper, prior_activity, y)?;
        support.validate(state.len())?;
        let mut on = vec![false; state.len()];
        for &q in &support.indices {
            on[q] = true;
        }
        for (i, &active) in on.iter().enumerate() {
            let (a, b) = if active {
                (hyper.a[i], hyper.b[i])
            } else {
                (hyper.a_bar[i], hyper.b_bar[i])
            };
            state.a_tilde[i] = a;
            state.b_tilde[i] = b;
        }
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        if self.sigma2.len() != n || self.a_tilde.len() != n || self.b_tilde.len() != n || self.lambda_tilde.len() != n
        {
            return Err(Error::State("parameter vectors have inconsistent lengths".into()));
        }
        let pos = |v: &RVector| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !pos(&self.sigma2) || !pos(&self.a_tilde) || !pos(&self.b_tilde) {
            return Err(Error::State(
                "variances and Gamma parameters must be positive and finite".into(),
            ));
        }
        if !(self.c_tilde > 0.0 && self.d_tilde > 0.0 && self.c_tilde.is_finite() && self.d_tilde.is_finite()) {
            return Err(Error::State(
                "noise precision parameters must be positive and finite".into(),
            ));
        }
        if self.lambda_tilde.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::State("support posterior must lie in [0, 1]".into()));
        }
        if !crate::linalg::all_finite(&self.mu) {
            return Err(Error::State("posterior mean has non-finite entries".into()));
        }
        Ok(())
    }

    /// Largest relative change over the parameter blocks.
    pub fn relative_change(&self, other: &Self) -> f64 {
        let rel = |num: f64, den: f64| num / den.max(f64::MIN_POSITIVE);
        let mu = rel((&self.mu - &other.mu).norm(), other.mu.norm());
        let s2 = rel((&self.sigma2 - &other.sigma2).norm(), other.sigma2.norm());
        let a = rel((&self.a_tilde - &other.a_tilde).norm(), other.a_tilde.norm());
        let b = rel((&self.b_tilde - &other.b_tilde).norm(), other.b_tilde.norm());
        let lam_diff: f64 = self
            .lambda_tilde
            .iter()
            .zip(&other.lambda_tilde)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let lam_norm: f64 = other.lambda_tilde.iter().map(|x| x * x).sum::<f64>().sqrt();
        let lam = if lam_norm > 0.0 { lam_diff / lam_norm } else { lam_diff };
        let c = rel((self.c_tilde - other.c_tilde).abs(), other.c_tilde);
        let d = rel((self.d_tilde - other.d_tilde).abs(), other.d_tilde);
        [mu, s2, a, b, lam, c, d].into_iter().fold(0.0, f64::max)
    }
}

/// Expectations under the current posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub rho_mean: RVector,
    pub ln_rho_mean: RVector,
    pub kappa_mean: f64,
    pub ln_kappa_mean: f64,
    pub s_mean: Vec<f64>,
    pub x2_mean: RVector,
}

pub fn compute_moments(state: &VariationalState) -> Result<Moments> {
    state.validate()?;
    let n = state.len();
    Ok(Moments {
        rho_mean: state.a_tilde.component_div(&state.b_tilde),
        ln_rho_mean: RVector::from_iterator(
            n,
            state
                .a_tilde
                .iter()
                .zip(state.b_tilde.iter())
                .map(|(&a, &b)| digamma(a) - b.ln()),
        ),
        kappa_mean: state.c_tilde / state.d_tilde,
        ln_kappa_mean: digamma(state.c_tilde) - state.d_tilde.ln(),
        s_mean: state.lambda_tilde.clone(),
        x2_mean: RVector::from_iterator(
            n,
            state.mu.iter().zip(state.sigma2.iter()).map(|(m, &s)| m.norm_sqr() + s),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use crate::prior::default_hyperparams;

    fn unit_state(n: usize) -> VariationalState {
        VariationalState {
            mu: CVector::zeros(n),
            sigma2: RVector::from_element(n, 2.0),
            a_tilde: RVector::from_element(n, 1.0),
            b_tilde: RVector::from_element(n, 1.0),
            lambda_tilde: vec![0.3; n],
            c_tilde: 64.0,
            d_tilde: 32.0,
        }
    }

    #[test]
    fn moment_table() {
        let m = compute_moments(&unit_state(3)).unwrap();
        assert!(m.rho_mean.iter().all(|&r| r == 1.0));
        for &l in m.ln_rho_mean.iter() {
            assert!((l + 0.577_215_664_901_532_9).abs() < 1e-12);
        }
        assert!(m.x2_mean.iter().all(|&v| v == 2.0));
        assert_eq!(m.kappa_mean, 2.0);
        assert_eq!(m.s_mean, vec![0.3; 3]);
    }

    #[test]
    fn moments_reject_bad_state() {
        let mut s = unit_state(2);
        s.b_tilde[1] = 0.0;
        assert!(matches!(compute_moments(&s), Err(Error::State(_))));
    }

    #[test]
    fn initial_state_values() {
        let h = default_hyperparams(3);
        let y = CVector::from_vec(vec![C64::new(1.0, 1.0), C64::new(0.0, 2.0)]);
        let s = VariationalState::initial(&h, &[0.1, 0.2, 0.3], &y).unwrap();
        assert_eq!(s.a_tilde[0], 2.0);
        assert_eq!(s.b_tilde[0], 2.0);
        assert_eq!(s.c_tilde, 1e-6 + 2.0);
        assert!((s.d_tilde - (1e-6 + 6.0)).abs() < 1e-15);
        assert_eq!(s.lambda_tilde, vec![0.1, 0.2, 0.3]);
        s.validate().unwrap();
    }

    #[test]
    fn support_start_uses_branch_priors() {
        let h = default_hyperparams(3);
        let y = CVector::from_element(2, C64::new(1.0, 0.0));
        let sup = SupportEstimate::from_indices(vec![1], crate::scvbi::SupportPolicy::default());
        let s = VariationalState::from_support(&h, &[0.1; 3], &y, &sup).unwrap();
        let m = compute_moments(&s).unwrap();
        assert_eq!(m.rho_mean[1], 1.0);
        assert!((m.rho_mean[0] - 1e5).abs() < 1e-6);
        assert_eq!(s.c_tilde, 1e-6 + 2.0);
    }

    #[test]
    fn relative_change_zero_for_identical() {
        let s = unit_state(4);
        assert_eq!(s.relative_change(&s), 0.0);
        let mut t = s.clone();
        t.d_tilde = 33.0;
        assert!((t.relative_change(&s) - 1.0 / 32.0).abs() < 1e-15);
    }
}
