use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{grid_gradient, grid_likelihood, GridLikelihoodContext};
use crate::linalg::{norm2, CMatrix, CVector, RVector, C64};
use crate::model::{generate_combiner, DynamicGrid, ObservationModel, UpaArray};
use crate::prior::{default_hyperparams, markov2d_from_sparsity, SupportPrior};
use crate::scvbi::{
    exact_icvbi_mean, refine_mean_gradient, scvbi_round, subspace_init, DescentRule, QuadraticSurrogate, RoundOptions,
    SupportEstimate, SupportPolicy, VariationalState,
};
use crate::special::digamma;
use crate::ssi::{brute_force_marginals, ssi_markov2d_with_diagnostics, BernoulliMessage};

use super::experiment::{run_cells, Algorithm, ExperimentSpec, PriorVariant, TruthSpec};
use super::metrics::nmse_db;

/// One deterministic check: `value` is an error measure that must not exceed
/// `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub passed: bool,
    pub checks: Vec<SelftestCheck>,
}

fn check(name: &str, value: f64, tolerance: f64) -> SelftestCheck {
    SelftestCheck {
        name: name.into(),
        value,
        tolerance,
        passed: value <= tolerance,
    }
}

fn cn<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn rel_diff(a: &CVector, b: &CVector) -> f64 {
    (norm2(&(a - b)) / norm2(b).max(f64::MIN_POSITIVE)).sqrt()
}

/// A Gaussian instance `y = A x + w` with `A` of size `m × n` and a
/// `k`-sparse `x`.
pub struct GaussianInstance {
    pub sensing: CMatrix,
    pub y: CVector,
    pub x: CVector,
    pub support: Vec<usize>,
}

pub fn gaussian_instance(m: usize, n: usize, k: usize, noise_std: f64, seed: u64) -> GaussianInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensing = CMatrix::from_fn(m, n, |_, _| cn(&mut rng));
    let mut support = rand::seq::index::sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    let mut x = CVector::zeros(n);
    for &q in &support {
        x[q] = cn(&mut rng);
    }
    let noise = CVector::from_fn(m, |_, _| cn(&mut rng) * noise_std);
    let y = &sensing * &x + noise;
    GaussianInstance { sensing, y, x, support }
}

/// A surrogate with random positive precisions on a Gaussian instance.
fn random_surrogate<'a>(inst: &'a GaussianInstance, rng: &mut ChaCha8Rng) -> QuadraticSurrogate<'a> {
    let n = inst.sensing.ncols();
    let rho = RVector::from_fn(n, |_, _| 10f64.powf(rng.random_range(-1.0..1.0)));
    QuadraticSurrogate::new(&inst.sensing, &inst.y, rho, rng.random_range(0.5..5.0)).expect("valid surrogate")
}

/// Relative error between `2·Re/Im(∇φ)` and central differences of `φ`.
pub fn mean_gradient_fd_error(seed: u64) -> f64 {
    let inst = gaussian_instance(12, 20, 3, 0.1, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let s = random_surrogate(&inst, &mut rng);
    let u = CVector::from_fn(20, |_, _| cn(&mut rng));
    let g = s.gradient(&u);
    let h = 1e-5;
    let (mut err, mut scale) = (0.0, 0.0);
    for i in 0..u.len() {
        for (dir, analytic) in [(C64::new(1.0, 0.0), 2.0 * g[i].re), (C64::new(0.0, 1.0), 2.0 * g[i].im)] {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += dir * h;
            dn[i] -= dir * h;
            let fd = (s.objective(&up) - s.objective(&dn)) / (2.0 * h);
            err += (fd - analytic).powi(2);
            scale += analytic.powi(2);
        }
    }
    (err / scale).sqrt()
}

/// Relative error of the grid-likelihood gradient against central
/// differences, on a 4×4 array with an 8-chain combiner.
pub fn grid_gradient_fd_error(seed: u64) -> f64 {
    let array = UpaArray::new(4, 4).expect("array");
    let combiner = generate_combiner(16, 8, seed).expect("combiner").effective();
    let mut grid = DynamicGrid::with_default_ranges(8, 4).expect("grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut support = rand::seq::index::sample(&mut rng, grid.len(), 3).into_vec();
    support.sort_unstable();
    for &q in &support {
        grid.azimuth[q] += rng.random_range(-0.4..0.4) * grid.az_spacing;
        grid.elevation[q] += rng.random_range(-0.4..0.4) * grid.el_spacing;
    }
    let y = CVector::from_fn(8, |_, _| cn(&mut rng));
    let ctx = GridLikelihoodContext {
        x_hat: CVector::from_fn(support.len(), |_, _| cn(&mut rng)),
        kappa_hat: rng.random_range(0.5..5.0),
        y: &y,
        support: support.clone(),
        array,
        combiner: &combiner,
    };
    let g = grid_gradient(&grid, &ctx).expect("gradient");
    let h = 1e-6;
    let (mut err, mut scale) = (0.0, 0.0);
    for (k, &q) in support.iter().enumerate() {
        for (is_az, analytic) in [(true, g.azimuth[k]), (false, g.elevation[k])] {
            let at = |d: f64| {
                let mut gg = grid.clone();
                if is_az {
                    gg.azimuth[q] += d;
                } else {
                    gg.elevation[q] += d;
                }
                grid_likelihood(&gg, &ctx).expect("likelihood")
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            err += (fd - analytic).powi(2);
            scale += analytic.powi(2);
        }
    }
    (err / scale).sqrt()
}

fn ssi_chain_error() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for (n1, n2) in [(1, 7), (7, 1)] {
        let prior = markov2d_from_sparsity(0.2, 3.0, n1, n2)?;
        let SupportPrior::Markov2d(m) = &prior else {
            unreachable!()
        };
        let input = BernoulliMessage::new((0..n1 * n2).map(|_| rng.random_range(0.01..0.99)).collect())?;
        let (out, _, _) = ssi_markov2d_with_diagnostics(&input, m, 1, 0.0)?;
        let oracle = brute_force_marginals(&input, &prior)?;
        for (a, b) in out.active_prob.iter().zip(&oracle.active_prob) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

fn ssi_loopy_error() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let prior = markov2d_from_sparsity(0.2, 2.0, 3, 3)?;
    let SupportPrior::Markov2d(m) = &prior else {
        unreachable!()
    };
    let input = BernoulliMessage::new((0..9).map(|_| rng.random_range(0.05..0.95)).collect())?;
    let (out, _, _) = ssi_markov2d_with_diagnostics(&input, m, 200, 0.3)?;
    let oracle = brute_force_marginals(&input, &prior)?;
    Ok(out
        .active_prob
        .iter()
        .zip(&oracle.active_prob)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

fn subspace_vs_exact_error() -> Result<f64> {
    let inst = gaussian_instance(16, 24, 3, 0.1, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let s = random_surrogate(&inst, &mut rng);
    let full = subspace_init(&SupportEstimate::full(24), &s)?;
    let exact = exact_icvbi_mean(&s)?;
    Ok(rel_diff(&full.mu, &exact.mu))
}

fn refinement_vs_exact_error() -> Result<f64> {
    let inst = gaussian_instance(16, 24, 3, 0.1, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let s = random_surrogate(&inst, &mut rng);
    let exact = exact_icvbi_mean(&s)?;
    let refined = refine_mean_gradient(&CVector::zeros(24), &s, 500, DescentRule::default());
    Ok(rel_diff(&refined.mu, &exact.mu))
}

fn round_energy_increase() -> Result<f64> {
    let inst = gaussian_instance(20, 48, 3, 0.1, 31);
    let hyper = default_hyperparams(48);
    let prior = BernoulliMessage::uniform(48, 3.0 / 48.0);
    let model = ObservationModel::generic(inst.y.clone(), inst.sensing.clone())?;
    let support = SupportEstimate::from_indices(inst.support.clone(), SupportPolicy::default());
    let mut state = VariationalState::from_support(&hyper, &prior.active_prob, &inst.y, &support)?;
    let mut support = support;
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..5 {
        let out = scvbi_round(&state, &model, &hyper, &prior, &support, &RoundOptions::default())?;
        worst = worst.max(out.diagnostics.max_energy_increase());
        state = out.state;
        support = out.support;
    }
    Ok(worst.max(0.0))
}

fn small_experiment_nmse() -> Result<f64> {
    let spec = ExperimentSpec {
        scenario: "selftest".into(),
        nx: 4,
        ny: 4,
        nrf: Some(8),
        compression_ratio: None,
        n1: 8,
        n2: 4,
        truth: TruthSpec::Uniform { k_paths: 2 },
        off_grid: false,
        snr_db: vec![None],
        seeds: vec![4],
        algorithms: vec![Algorithm::ScVbi],
        priors: vec![PriorVariant::Iid],
        grid_refinement: vec![false],
        ..ExperimentSpec::default()
    };
    let cells = run_cells(&spec, 1)?;
    Ok(cells[0].final_nmse_db)
}

/// Runs the built-in oracle checks. Every value is deterministic.
pub fn run_selftest() -> Result<SelftestReport> {
    let h = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.25)]);
    let nmse_err = (nmse_db(&(h.clone() * C64::new(0.9, 0.0)), &h)? + 20.0).abs();
    let mean_fd = (0..5).map(mean_gradient_fd_error).fold(0.0, f64::max);
    let grid_fd = (0..5).map(grid_gradient_fd_error).fold(0.0, f64::max);
    let checks = vec![
        check("nmse_definition", nmse_err, 1e-12),
        check("digamma_at_one", (digamma(1.0) + 0.577_215_664_901_532_9).abs(), 1e-13),
        check("ssi_chain_matches_enumeration", ssi_chain_error()?, 1e-10),
        check("ssi_loopy_3x3_near_enumeration", ssi_loopy_error()?, 0.05),
        check("subspace_full_support_matches_exact", subspace_vs_exact_error()?, 1e-10),
        check("refinement_matches_exact", refinement_vs_exact_error()?, 1e-6),
        check("mean_gradient_finite_difference", mean_fd, 1e-6),
        check("grid_gradient_finite_difference", grid_fd, 1e-6),
        check("round_free_energy_increase", round_energy_increase()?, 1e-9),
        check("noise_free_recovery_nmse_db", small_experiment_nmse()?, -40.0),
    ];
    Ok(SelftestReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
