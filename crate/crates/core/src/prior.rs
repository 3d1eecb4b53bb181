//! Three-layer hierarchical sparse prior: support `s`, precisions `ρ | s`
//! and coefficients `x | ρ`, plus the Gamma prior on the noise precision.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CVector, RVector, C64};

/// Gamma shape/rate pairs for the active (`a`, `b`) and inactive
/// (`a_bar`, `b_bar`) precision branches, and `(c, d)` for the noise
/// precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorHyperParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c: f64,
    pub d: f64,
}

impl PriorHyperParams {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if [self.a.len(), self.b.len(), self.a_bar.len(), self.b_bar.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::dim(format!("hyperparameter vectors must have length {n}")));
        }
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !(positive(&self.a) && positive(&self.b) && positive(&self.a_bar) && positive(&self.b_bar))
            || !(self.c > 0.0 && self.d > 0.0)
        {
            return Err(Error::input("all hyperparameters must be strictly positive"));
        }
        Ok(())
    }
}

/// Active precision mean 1, inactive precision mean 1e5 and a
/// near-noninformative noise prior.
pub fn default_hyperparams(n: usize) -> PriorHyperParams {
    PriorHyperParams {
        a: vec![1.0; n],
        b: vec![1.0; n],
        a_bar: vec![1.0; n],
        b_bar: vec![1e-5; n],
        c: 1e-6,
        d: 1e-6,
    }
}

/// Transition probabilities of a stationary 2D Markov support prior on an
/// `n1 × n2` grid. "Row" transitions link `(i1, i2 − 1) → (i1, i2)`,
/// "column" transitions link `(i1 − 1, i2) → (i1, i2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Markov2d {
    pub p01_row: f64,
    pub p10_row: f64,
    pub p01_col: f64,
    pub p10_col: f64,
    pub lambda: f64,
    pub n1: usize,
    pub n2: usize,
}

impl Markov2d {
    pub fn p11_row(&self) -> f64 {
        1.0 - self.p10_row
    }

    pub fn p00_row(&self) -> f64 {
        1.0 - self.p01_row
    }

    pub fn p11_col(&self) -> f64 {
        1.0 - self.p10_col
    }

    pub fn p00_col(&self) -> f64 {
        1.0 - self.p01_col
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p01_row, self.p10_row, self.p01_col, self.p10_col, self.lambda];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::input("Markov prior probabilities must lie in [0, 1]"));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::input("Markov prior grid must be non-empty"));
        }
        Ok(())
    }

    /// `P(s = 1 | previous)` along the row chain.
    pub(crate) fn row_active_given(&self, prev: bool) -> f64 {
        if prev {
            self.p11_row()
        } else {
            self.p01_row
        }
    }

    pub(crate) fn col_active_given(&self, prev: bool) -> f64 {
        if prev {
            self.p11_col()
        } else {
            self.p01_col
        }
    }
}

/// Prior over the support vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportPrior {
    Iid { lambda: Vec<f64> },
    Markov2d(Markov2d),
}

impl SupportPrior {
    pub fn iid_uniform(n: usize, lambda: f64) -> Self {
        SupportPrior::Iid {
            lambda: vec![lambda; n],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SupportPrior::Iid { lambda } => lambda.len(),
            SupportPrior::Markov2d(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-element activity probabilities used to seed the solver.
    pub fn marginals(&self) -> Vec<f64> {
        match self {
            SupportPrior::Iid { lambda } => lambda.clone(),
            SupportPrior::Markov2d(m) => vec![m.lambda; m.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SupportPrior::Iid { lambda } => {
                if lambda.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::input("activity probabilities must lie in [0, 1]"));
                }
                Ok(())
            }
            SupportPrior::Markov2d(m) => m.validate(),
        }
    }
}

/// Stationary Markov prior with mean cluster run `mean_run` along both
/// directions: `p10 = 1/mean_run`, `p01 = p10·λ/(1 − λ)`.
pub fn markov2d_from_sparsity(lambda: f64, mean_run: f64, n1: usize, n2: usize) -> Result<SupportPrior> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::input(format!("sparsity must lie in (0, 1), got {lambda}")));
    }
    if !(mean_run >= 1.0) {
        return Err(Error::input(format!(
            "mean run length must be at least 1, got {mean_run}"
        )));
    }
    let p10 = 1.0 / mean_run;
    let p01 = p10 * lambda / (1.0 - lambda);
    if !(0.0..=1.0).contains(&p01) {
        return Err(Error::input(format!(
            "λ = {lambda} with mean run {mean_run} needs p01 = {p01} outside [0, 1]"
        )));
    }
    let m = Markov2d {
        p01_row: p01,
        p10_row: p10,
        p01_col: p01,
        p10_col: p10,
        lambda,
        n1,
        n2,
    };
    m.validate()?;
    Ok(SupportPrior::Markov2d(m))
}

/// Draws a support from the Markov prior in raster order (azimuth index
/// fastest). A site with both a left and an upper neighbour combines the two
/// transition kernels as `p(s | left) p(s | up) / p(s)`, which keeps every
/// site's marginal at `λ` when both chains are stationary.
pub fn sample_markov2d<R: Rng + ?Sized>(m: &Markov2d, rng: &mut R) -> Vec<bool> {
    let (n1, n2) = (m.n1, m.n2);
    let mut s = vec![false; n1 * n2];
    let lam = m.lambda;
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            let left = (i2 > 0).then(|| s[i1 + n1 * (i2 - 1)]);
            let up = (i1 > 0).then(|| s[i1 - 1 + n1 * i2]);
            let p = match (left, up) {
                (None, None) => lam,
                (Some(l), None) => m.row_active_given(l),
                (None, Some(u)) => m.col_active_given(u),
                (Some(l), Some(u)) => {
                    let on = m.row_active_given(l) * m.col_active_given(u) / lam;
                    let off = (1.0 - m.row_active_given(l)) * (1.0 - m.col_active_given(u)) / (1.0 - lam);
                    if on + off > 0.0 {
                        on / (on + off)
                    } else {
                        lam
                    }
                }
            };
            s[i1 + n1 * i2] = rng.random::<f64>() < p;
        }
    }
    s
}

/// Draws a support vector from `prior`.
pub fn sample_support<R: Rng + ?Sized>(prior: &SupportPrior, rng: &mut R) -> Vec<bool> {
    match prior {
        SupportPrior::Iid { lambda } => lambda.iter().map(|&p| rng.random::<f64>() < p).collect(),
        SupportPrior::Markov2d(m) => sample_markov2d(m, rng),
    }
}

/// Ancestral draw `(s, ρ, x)` from the three-layer prior.
pub fn sample_prior<R: Rng + ?Sized>(
    hyper: &PriorHyperParams,
    support: &SupportPrior,
    rng: &mut R,
) -> Result<(Vec<bool>, RVector, CVector)> {
    let n = support.len();
    hyper.validate(n)?;
    support.validate()?;
    let s = sample_support(support, rng);
    let mut rho = RVector::zeros(n);
    let mut x = CVector::zeros(n);
    for i in 0..n {
        let (shape, rate) = if s[i] {
            (hyper.a[i], hyper.b[i])
        } else {
            (hyper.a_bar[i], hyper.b_bar[i])
        };
        let gamma = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::input(e.to_string()))?;
        let r: f64 = gamma.sample(rng);
        rho[i] = r.max(f64::MIN_POSITIVE);
        let sd = (0.5 / rho[i]).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        x[i] = C64::new(sd * re, sd * im);
    }
    Ok((s, rho, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_ratios() {
        let h = default_hyperparams(4);
        h.validate(4).unwrap();
        for i in 0..4 {
            assert_eq!(h.a[i] / h.b[i], 1.0);
            assert!(h.a_bar[i] / h.b_bar[i] >= 1e3);
            assert!((h.a_bar[i] / h.b_bar[i] - 1e5).abs() < 1e-6);
        }
        assert_eq!(h.c / h.d, 1.0);
    }

    #[test]
    fn markov_symmetric_case() {
        let SupportPrior::Markov2d(m) = markov2d_from_sparsity(0.5, 2.0, 3, 3).unwrap() else {
            unreachable!()
        };
        assert_eq!(m.p10_row, 0.5);
        assert_eq!(m.p01_row, 0.5);
        assert_eq!(m.p01_col, 0.5);
    }

    #[test]
    fn markov_sparse_case_is_stationary() {
        let SupportPrior::Markov2d(m) = markov2d_from_sparsity(0.1, 4.0, 4, 4).unwrap() else {
            unreachable!()
        };
        assert_eq!(m.p10_row, 0.25);
        assert!((m.p01_row - 0.25 * 0.1 / 0.9).abs() < 1e-15);
        assert!((m.p01_row - 0.027_777_777_777_777_78).abs() < 1e-15);
        // Stationary distribution of the 2-state chain by power iteration.
        let (mut p0, mut p1) = (1.0, 0.0);
        for _ in 0..10_000 {
            let n1 = p0 * m.p01_row + p1 * m.p11_row();
            p0 = 1.0 - n1;
            p1 = n1;
        }
        assert!((p1 - 0.1).abs() < 1e-12);
        assert!((m.p01_row / (m.p01_row + m.p10_row) - m.lambda).abs() < 1e-12);
    }

    #[test]
    fn markov_rejects_bad_inputs() {
        assert!(markov2d_from_sparsity(0.0, 2.0, 2, 2).is_err());
        assert!(markov2d_from_sparsity(1.0, 2.0, 2, 2).is_err());
        assert!(markov2d_from_sparsity(0.5, 0.5, 2, 2).is_err());
        // p01 = 0.9/0.1 > 1
        assert!(markov2d_from_sparsity(0.9, 1.0, 2, 2).is_err());
    }

    #[test]
    fn iid_degenerate_supports() {
        let h = default_hyperparams(50);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, rho, x) = sample_prior(&h, &SupportPrior::iid_uniform(50, 0.0), &mut rng).unwrap();
        assert!(s.iter().all(|&v| !v));
        assert!(rho.iter().all(|&r| r > 0.0));
        let mean_power: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / 50.0;
        assert!(mean_power < 1e-3);
        let (s, _, _) = sample_prior(&h, &SupportPrior::iid_uniform(50, 1.0), &mut rng).unwrap();
        assert!(s.iter().all(|&v| v));
    }

    #[test]
    fn inactive_power_expectation() {
        // E|x|² = E[1/ρ] = b̄/(ā − 1) for ā > 1.
        let mut h = default_hyperparams(1);
        h.a_bar = vec![3.0];
        h.b_bar = vec![2e-5];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let (_, _, x) = sample_prior(&h, &SupportPrior::iid_uniform(1, 0.0), &mut rng).unwrap();
            acc += x[0].norm_sqr();
        }
        let mean = acc / draws as f64;
        assert!((mean / 1e-5 - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn markov_first_site_marginal() {
        let prior = markov2d_from_sparsity(0.2, 3.0, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let hits = (0..draws).filter(|_| sample_support(&prior, &mut rng)[0]).count();
        let p = hits as f64 / draws as f64;
        assert!((p - 0.2).abs() < 0.02 * 0.2 + 3.0 * (0.16f64 / draws as f64).sqrt());
    }

    #[test]
    fn markov_every_site_marginal_is_lambda() {
        let lambda = 0.15;
        let prior = markov2d_from_sparsity(lambda, 3.0, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 60_000;
        let mut counts = [0usize; 12];
        for _ in 0..draws {
            for (c, s) in counts.iter_mut().zip(sample_support(&prior, &mut rng)) {
                *c += s as usize;
            }
        }
        let sd = (lambda * (1.0 - lambda) / draws as f64).sqrt();
        for (site, &c) in counts.iter().enumerate() {
            let p = c as f64 / draws as f64;
            assert!((p - lambda).abs() < 3.5 * sd, "site {site}: {p}");
        }
    }

    #[test]
    fn markov_supports_are_clustered() {
        // Neighbour co-activation must exceed λ² by a wide margin.
        let prior = markov2d_from_sparsity(0.1, 4.0, 16, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut both, mut pairs) = (0usize, 0usize);
        for _ in 0..2_000 {
            let s = sample_support(&prior, &mut rng);
            for i2 in 0..8 {
                for i1 in 1..16 {
                    pairs += 1;
                    both += (s[i1 + 16 * i2] && s[i1 - 1 + 16 * i2]) as usize;
                }
            }
        }
        assert!(both as f64 / pairs as f64 > 0.05);
    }

    #[test]
    fn sampled_densities_are_finite() {
        let h = default_hyperparams(30);
        let prior = markov2d_from_sparsity(0.2, 2.0, 6, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (s, rho, x) = sample_prior(&h, &prior, &mut rng).unwrap();
            for i in 0..30 {
                let (a, b) = if s[i] {
                    (h.a[i], h.b[i])
                } else {
                    (h.a_bar[i], h.b_bar[i])
                };
                let ln_p_rho = a * b.ln() - crate::special::ln_gamma(a) + (a - 1.0) * rho[i].ln() - b * rho[i];
                let ln_p_x = rho[i].ln() - std::f64::consts::PI.ln() - rho[i] * x[i].norm_sqr();
                assert!(ln_p_rho.is_finite() && ln_p_x.is_finite());
            }
        }
    }

    #[test]
    fn hyper_validation() {
        let mut h = default_hyperparams(3);
        assert!(h.validate(4).is_err());
        h.b[1] = 0.0;
        assert!(h.validate(3).is_err());
    }
}
