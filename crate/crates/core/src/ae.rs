//! Alternating estimation: variational rounds, support message passing and
//! grid refinement, exchanging extrinsic support messages each iteration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{grid_ascent, GridLikelihoodContext};
use crate::harness::nmse_db;
use crate::linalg::{column_norms2, norm2, solve_hermitian, CMatrix, CVector, C64};
use crate::model::{steering_matrix, DynamicGrid, ObservationModel};
use crate::prior::{PriorHyperParams, SupportPrior};
use crate::scvbi::{
    scvbi_round, DescentRule, MeanUpdate, RoundOptions, SupportEstimate, SupportPolicy, VariationalState,
};
use crate::ssi::{ssi, BernoulliMessage};

/// Where the first support estimate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSupport {
    /// Greedy orthogonal least squares: picks the column that most reduces
    /// the residual after refitting.
    #[default]
    Ols,
    /// Greedy matching pursuit on the observations.
    Omp,
    /// The elements with the largest prior activity.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub b_x: usize,
    pub b_theta: usize,
    pub ssi_sweeps: usize,
    pub ssi_damping: f64,
    pub support_policy: SupportPolicy,
    pub first_round_scvbi_repeats: usize,
    /// Stop once the relative change of every posterior block falls below this.
    pub stop_tol: f64,
    pub grid_refinement: bool,
    pub descent: DescentRule,
    pub mean_update: MeanUpdate,
    pub initial_support: InitialSupport,
    /// Record block-wise free energies in the trace.
    pub track_energy: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            b_x: 3,
            b_theta: 2,
            ssi_sweeps: 5,
            ssi_damping: 0.3,
            support_policy: SupportPolicy::default(),
            first_round_scvbi_repeats: 20,
            stop_tol: 1e-6,
            grid_refinement: true,
            descent: DescentRule::default(),
            mean_update: MeanUpdate::default(),
            initial_support: InitialSupport::default(),
            track_energy: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::input("max_iters must be at least 1"));
        }
        if self.ssi_sweeps == 0 {
            return Err(Error::input("ssi_sweeps must be at least 1"));
        }
        if self.first_round_scvbi_repeats == 0 {
            return Err(Error::input("first_round_scvbi_repeats must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.ssi_damping) {
            return Err(Error::input("ssi_damping must lie in [0, 1)"));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::input("stop_tol must be positive"));
        }
        self.support_policy.validate()
    }

    fn round_options(&self) -> RoundOptions {
        RoundOptions {
            b_x: self.b_x,
            support_policy: self.support_policy,
            descent: self.descent,
            mean_update: self.mean_update,
            track_energy: self.track_energy,
        }
    }
}

/// What the per-iteration NMSE is measured against.
#[derive(Debug, Clone)]
pub enum Reference {
    /// Sparse coefficients `x`.
    Coefficients(CVector),
    /// Antenna-domain channel `h`, compared with `Σ x̂_q a(θ̂_q)`.
    Channel(CVector),
}

/// One row per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Free energy at the end of the iteration's variational phase.
    pub free_energy: f64,
    /// Block-wise free energies through the variational phase, in order.
    pub phase_energy: Vec<f64>,
    pub nmse_db: Option<f64>,
    pub support_size: usize,
    /// Grid likelihood before and after refinement.
    pub grid_likelihood: Option<(f64, f64)>,
    pub relative_change: f64,
    /// Elapsed time since the start of the solve.
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x_hat: CVector,
    pub support: SupportEstimate,
    pub grid_hat: Option<DynamicGrid>,
    pub kappa_hat: f64,
    pub state: VariationalState,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    /// Sensing matrix at the final grid.
    pub sensing: CMatrix,
}

impl SolveResult {
    pub fn final_nmse_db(&self) -> Option<f64> {
        self.trace.last().and_then(|r| r.nmse_db)
    }
}

/// Greedy support search: repeatedly adds the column most correlated with the
/// residual and refits by least squares.
pub fn omp_initial_support(a: &CMatrix, y: &CVector, k_max: usize) -> Result<(SupportEstimate, Vec<f64>)> {
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(Error::dim("observation length differs from the number of rows"));
    }
    if k_max > m {
        return Err(Error::input(format!("k_max = {k_max} exceeds M = {m}")));
    }
    let norms = column_norms2(a).map(f64::sqrt);
    let mut chosen: Vec<usize> = Vec::new();
    let mut residual = y.clone();
    let mut history = vec![residual.norm()];
    let y_norm = y.norm();
    for _ in 0..k_max {
        if residual.norm() <= 1e-12 * y_norm.max(f64::MIN_POSITIVE) {
            break;
        }
        let corr = a.ad_mul(&residual);
        let best = (0..n)
            .filter(|q| !chosen.contains(q) && norms[*q] > 0.0)
            .max_by(|&i, &j| {
                (corr[i].norm() / norms[i])
                    .total_cmp(&(corr[j].norm() / norms[j]))
                    .then(j.cmp(&i))
            });
        let Some(best) = best else { break };
        chosen.push(best);
        let cols = a.select_columns(&chosen);
        let gram = cols.ad_mul(&cols);
        let rhs = cols.ad_mul(y);
        let fit =
            solve_hermitian(gram, &rhs, 1e-12).ok_or_else(|| Error::Numerical("least-squares refit failed".into()))?;
        residual = y - &cols * &fit.solution;
        history.push(residual.norm());
    }
    Ok((SupportEstimate::from_indices(chosen, SupportPolicy::default()), history))
}

/// Greedy orthogonal least squares. Each step scores the columns by their
/// correlation with the residual after projecting out the chosen columns, so
/// near-duplicates of chosen columns score low. Far more reliable than plain
/// matching pursuit on oversampled angular grids.
pub fn ols_initial_support(a: &CMatrix, y: &CVector, k_max: usize) -> Result<(SupportEstimate, Vec<f64>)> {
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(Error::dim("observation length differs from the number of rows"));
    }
    if k_max > m {
        return Err(Error::input(format!("k_max = {k_max} exceeds M = {m}")));
    }
    let original = column_norms2(a).map(f64::sqrt);
    // Columns with the span of the chosen ones removed.
    let mut projected = a.clone();
    let mut residual = y.clone();
    let mut chosen: Vec<usize> = Vec::new();
    let mut history = vec![residual.norm()];
    let y_norm = y.norm();
    for _ in 0..k_max {
        if residual.norm() <= 1e-12 * y_norm.max(f64::MIN_POSITIVE) {
            break;
        }
        let norms = column_norms2(&projected).map(f64::sqrt);
        let corr = projected.ad_mul(&residual);
        let best = (0..n)
            .filter(|&q| !chosen.contains(&q) && norms[q] > 1e-10 * original[q])
            .max_by(|&i, &j| {
                (corr[i].norm() / norms[i])
                    .total_cmp(&(corr[j].norm() / norms[j]))
                    .then(j.cmp(&i))
            });
        let Some(best) = best else { break };
        let basis = projected.column(best) / C64::new(norms[best], 0.0);
        residual -= &basis * basis.dotc(&residual);
        let overlap = basis.ad_mul(&projected);
        projected -= &basis * overlap;
        chosen.push(best);
        history.push(residual.norm());
    }
    Ok((SupportEstimate::from_indices(chosen, SupportPolicy::default()), history))
}

fn initial_support(model: &ObservationModel, prior_activity: &[f64], config: &SolverConfig) -> Result<SupportEstimate> {
    let expected: f64 = prior_activity.iter().sum();
    let k = ((2.0 * expected).ceil() as usize).clamp(1, (model.m() / 2).max(1));
    match config.initial_support {
        InitialSupport::Ols => Ok(ols_initial_support(&model.sensing, &model.y, k)?.0),
        InitialSupport::Omp => Ok(omp_initial_support(&model.sensing, &model.y, k)?.0),
        InitialSupport::Prior => {
            let mut order: Vec<usize> = (0..prior_activity.len()).collect();
            order.sort_by(|&i, &j| prior_activity[j].total_cmp(&prior_activity[i]).then(i.cmp(&j)));
            let keep = (expected.ceil() as usize).clamp(1, model.m().max(1));
            order.truncate(keep);
            Ok(SupportEstimate::from_indices(order, config.support_policy))
        }
    }
}

fn nmse_against(reference: &Reference, x_hat: &CVector, model: &ObservationModel) -> Result<f64> {
    match reference {
        Reference::Coefficients(x) => nmse_db(x_hat, x),
        Reference::Channel(h) => {
            let setup = model
                .mimo
                .as_ref()
                .ok_or_else(|| Error::input("channel reference needs a MIMO model"))?;
            let h_hat = steering_matrix(&setup.grid, setup.array)? * x_hat;
            nmse_db(&h_hat, h)
        }
    }
}

/// Runs the alternating estimation without a reference signal.
pub fn solve(
    model: &ObservationModel,
    hyper: &PriorHyperParams,
    support_prior: &SupportPrior,
    config: &SolverConfig,
) -> Result<SolveResult> {
    solve_tracked(model, hyper, support_prior, config, None)
}

/// Runs the alternating estimation, recording NMSE against `reference` in the
/// trace when one is given.
pub fn solve_tracked(
    model: &ObservationModel,
    hyper: &PriorHyperParams,
    support_prior: &SupportPrior,
    config: &SolverConfig,
    reference: Option<&Reference>,
) -> Result<SolveResult> {
    config.validate()?;
    model.validate()?;
    support_prior.validate()?;
    let n = model.n();
    if support_prior.len() != n {
        return Err(Error::dim(format!(
            "support prior has {} sites, N = {n}",
            support_prior.len()
        )));
    }
    hyper.validate(n)?;

    let start = Instant::now();
    let mut model = model.clone();
    let prior_activity = support_prior.marginals();
    let mut prior_msg = BernoulliMessage::new(prior_activity.clone())?;
    let mut support = initial_support(&model, &prior_activity, config)?;
    let mut state = VariationalState::from_support(hyper, &prior_activity, &model.y, &support)?;
    let options = config.round_options();
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iters {
        let previous = state.clone();
        let repeats = if iteration == 1 {
            config.first_round_scvbi_repeats
        } else {
            1
        };
        let mut phase_energy = Vec::new();
        let mut extrinsic = None;
        for _ in 0..repeats {
            let out = scvbi_round(&state, &model, hyper, &prior_msg, &support, &options)?;
            phase_energy.extend(out.diagnostics.energy.iter().map(|e| e.1));
            state = out.state;
            support = out.support;
            extrinsic = Some(out.extrinsic);
        }
        let free_energy = phase_energy.last().copied().unwrap_or(f64::NAN);
        let extrinsic = extrinsic.expect("at least one round");

        prior_msg = ssi(&extrinsic, support_prior, config.ssi_sweeps, config.ssi_damping)?;

        let mut grid_likelihood = None;
        if config.grid_refinement && config.b_theta > 0 {
            if let Some(setup) = &model.mimo {
                let x_hat = CVector::from_iterator(support.len(), support.indices.iter().map(|&q| state.mu[q]));
                let ctx = GridLikelihoodContext {
                    x_hat,
                    kappa_hat: state.c_tilde / state.d_tilde,
                    y: &model.y,
                    support: support.indices.clone(),
                    array: setup.array,
                    combiner: setup.effective_combiner(),
                };
                let ascent = grid_ascent(&setup.grid, &ctx, config.b_theta)?;
                let first = ascent.likelihoods[0];
                let last = *ascent.likelihoods.last().unwrap_or(&first);
                grid_likelihood = Some((first, last));
                if ascent.steps > 0 {
                    model.set_grid(ascent.grid)?;
                }
            }
        }

        let relative_change = state.relative_change(&previous);
        let nmse = reference.map(|r| nmse_against(r, &state.mu, &model)).transpose()?;
        trace.push(IterationRecord {
            iteration,
            free_energy,
            phase_energy,
            nmse_db: nmse,
            support_size: support.len(),
            grid_likelihood,
            relative_change,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if relative_change < config.stop_tol {
            converged = true;
            break;
        }
    }

    Ok(SolveResult {
        x_hat: state.mu.clone(),
        kappa_hat: state.c_tilde / state.d_tilde,
        support,
        grid_hat: model.grid().cloned(),
        state,
        trace,
        converged,
        sensing: model.sensing,
    })
}

/// Residual energy `‖y − A x̂‖²` of a solution against its own final grid.
pub fn residual_energy(result: &SolveResult, y: &CVector) -> f64 {
    norm2(&(y - &result.sensing * &result.x_hat))
}
