use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, re_dot, solve_hermitian, CVector, C64};

use super::support::SupportEstimate;
use super::surrogate::QuadraticSurrogate;

/// Output of a dense Hermitian solve for the posterior mean.
#[derive(Debug, Clone)]
pub struct MeanSolve {
    pub mu: CVector,
    /// Diagonal loading applied (0 when the plain factorization succeeded).
    pub jitter: f64,
    pub condition_estimate: f64,
}

/// Posterior mean restricted to the support: solves `W_S μ_S = b_S` and sets
/// every other entry to zero. Only the selected columns of `A` are touched.
pub fn subspace_init(support: &SupportEstimate, surrogate: &QuadraticSurrogate) -> Result<MeanSolve> {
    let n = surrogate.n();
    support.validate(n)?;
    let idx = &support.indices;
    let w = surrogate.restricted_matrix(idx);
    let rhs = CVector::from_iterator(idx.len(), idx.iter().map(|&q| surrogate.b[q]));
    let solved = solve_hermitian(w, &rhs, 1e-10)
        .ok_or_else(|| Error::Numerical("support-restricted system could not be factorized".into()))?;
    let mut mu = CVector::zeros(n);
    for (k, &q) in idx.iter().enumerate() {
        mu[q] = solved.solution[k];
    }
    Ok(MeanSolve {
        mu,
        jitter: solved.jitter,
        condition_estimate: solved.condition_estimate,
    })
}

/// Which candidate starting point won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    Subspace,
    Previous,
}

/// Picks whichever of the two candidates has the lower objective; ties keep
/// the subspace solution.
pub fn robust_select_init(mu0: CVector, mu_prev: &CVector, surrogate: &QuadraticSurrogate) -> (CVector, InitChoice) {
    let f0 = surrogate.objective(&mu0);
    let f1 = surrogate.objective(mu_prev);
    if f1 < f0 {
        (mu_prev.clone(), InitChoice::Previous)
    } else {
        (mu0, InitChoice::Subspace)
    }
}

/// Search direction for the line-searched refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentRule {
    /// Negative gradient at every step.
    Steepest,
    /// Polak–Ribière conjugate directions, restarting at each call.
    #[default]
    ConjugateGradient,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub mu: CVector,
    pub steps: usize,
    /// The line search could not make progress (or the gradient vanished)
    /// before all steps were taken.
    pub stalled: bool,
    /// `‖∇φ‖/‖b‖` at the returned point.
    pub relative_gradient: f64,
}

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 50;
const GRADIENT_REFRESH: usize = 25;

/// Up to `steps` Armijo-line-searched descent steps on `φ` from `mu_init`.
///
/// The trial step is the exact minimizer along the search direction, and the
/// decrease of `φ` along a line is evaluated in closed form, so each step costs
/// one application of `W`.
pub fn refine_mean_gradient(
    mu_init: &CVector,
    surrogate: &QuadraticSurrogate,
    steps: usize,
    rule: DescentRule,
) -> Refinement {
    let mut mu = mu_init.clone();
    let b_norm = surrogate.b.norm().max(f64::MIN_POSITIVE);
    let mut grad = surrogate.gradient(&mu);
    let mut prev_grad: Option<CVector> = None;
    let mut dir = CVector::zeros(mu.len());
    let mut taken = 0;
    let mut stalled = false;

    for it in 0..steps {
        if grad.norm() <= 1e-12 * b_norm {
            stalled = true;
            break;
        }
        let beta = match (rule, &prev_grad) {
            (DescentRule::ConjugateGradient, Some(pg)) => {
                let num = re_dot(&grad, &(&grad - pg));
                (num / norm2(pg)).max(0.0)
            }
            _ => 0.0,
        };
        dir = &dir * C64::new(beta, 0.0) - &grad;
        let mut slope = re_dot(&dir, &grad);
        if slope >= 0.0 {
            dir = -grad.clone();
            slope = -norm2(&grad);
        }
        let wd = surrogate.apply(&dir);
        let curvature = re_dot(&dir, &wd);
        if !(curvature > 0.0) {
            stalled = true;
            break;
        }
        let mut t = -slope / curvature;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            // φ(μ + t d) − φ(μ) = 2t Re{dᴴg} + t² dᴴWd.
            let decrease = 2.0 * t * slope + t * t * curvature;
            if decrease <= ARMIJO_C * t * 2.0 * slope {
                accepted = true;
                break;
            }
            t *= BACKTRACK;
        }
        if !accepted {
            stalled = true;
            break;
        }
        let tc = C64::new(t, 0.0);
        mu += &dir * tc;
        prev_grad = Some(grad.clone());
        if (it + 1) % GRADIENT_REFRESH == 0 {
            grad = surrogate.gradient(&mu);
        } else {
            grad += &wd * tc;
        }
        taken += 1;
    }
    let relative_gradient = surrogate.gradient(&mu).norm() / b_norm;
    Refinement {
        mu,
        steps: taken,
        stalled,
        relative_gradient,
    }
}

/// Full-dimensional posterior mean `W⁻¹b` from a dense factorization; the
/// exact-inverse reference path.
pub fn exact_icvbi_mean(surrogate: &QuadraticSurrogate) -> Result<MeanSolve> {
    let all: Vec<usize> = (0..surrogate.n()).collect();
    let w = surrogate.restricted_matrix(&all);
    let solved = solve_hermitian(w, &surrogate.b, 1e-12)
        .ok_or_else(|| Error::Numerical("precision matrix could not be factorized".into()))?;
    Ok(MeanSolve {
        mu: solved.solution,
        jitter: solved.jitter,
        condition_estimate: solved.condition_estimate,
    })
}
