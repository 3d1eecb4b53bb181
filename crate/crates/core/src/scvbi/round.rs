use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_norms2, CMatrix, CVector, RVector};
use crate::model::ObservationModel;
use crate::prior::PriorHyperParams;
use crate::special::{logistic, logit};
use crate::ssi::{clamp_prob, BernoulliMessage};

use super::energy::free_energy_with_norms;
use super::mean::{exact_icvbi_mean, refine_mean_gradient, robust_select_init, subspace_init, DescentRule, InitChoice};
use super::state::{compute_moments, VariationalState};
use super::support::{estimate_support_scaled, SupportEstimate, SupportPolicy};
use super::surrogate::QuadraticSurrogate;
use super::updates::{update_q_kappa, update_q_rho, update_q_s, update_qx_variances};

/// How the posterior mean is obtained inside a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanUpdate {
    /// Support-restricted solve, best-of-two start, then line-searched steps.
    #[default]
    Subspace,
    /// Dense solve of the full system.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundOptions {
    pub b_x: usize,
    pub support_policy: SupportPolicy,
    pub descent: DescentRule,
    pub mean_update: MeanUpdate,
    /// Evaluate the free energy after every block (one extra product with `A`
    /// per block).
    pub track_energy: bool,
}

impl Default for RoundOptions {
    fn default() -> Self {
        Self {
            b_x: 3,
            support_policy: SupportPolicy::default(),
            descent: DescentRule::default(),
            mean_update: MeanUpdate::default(),
            track_energy: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateBlock {
    Start,
    Mean,
    Variance,
    Precision,
    Support,
    Noise,
}

#[derive(Debug, Clone, Default)]
pub struct RoundDiagnostics {
    /// Free energy at the start of the round and after each block.
    pub energy: Vec<(UpdateBlock, f64)>,
    pub init_choice: Option<InitChoice>,
    pub refine_steps: usize,
    pub refine_stalled: bool,
    /// `‖∇φ(μ)‖/‖b‖` after the mean update.
    pub relative_gradient: f64,
    pub solve_jitter: f64,
    pub condition_estimate: f64,
    /// A degenerate prior probability was passed straight through.
    pub extrinsic_degenerate: bool,
}

impl RoundDiagnostics {
    pub fn final_energy(&self) -> Option<f64> {
        self.energy.last().map(|e| e.1)
    }

    /// Largest increase between consecutive block evaluations.
    pub fn max_energy_increase(&self) -> f64 {
        self.energy
            .windows(2)
            .map(|w| w[1].1 - w[0].1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub state: VariationalState,
    pub support: SupportEstimate,
    pub extrinsic: BernoulliMessage,
    pub diagnostics: RoundDiagnostics,
}

/// Outgoing support message: the posterior activity with the incoming prior
/// divided out, `logit π = logit λ̃ − logit λ`.
///
/// Returns the message and whether any degenerate prior entry was passed
/// through unchanged.
pub fn extrinsic_from_scvbi(lambda_tilde: &[f64], prior_msg: &BernoulliMessage) -> Result<(BernoulliMessage, bool)> {
    if lambda_tilde.len() != prior_msg.len() {
        return Err(Error::dim("posterior and prior activity lengths differ"));
    }
    let mut degenerate = false;
    let mut out = Vec::with_capacity(lambda_tilde.len());
    for (&post, &prior) in lambda_tilde.iter().zip(&prior_msg.active_prob) {
        if prior <= 0.0 || prior >= 1.0 {
            if (prior <= 0.0 && post >= 1.0) || (prior >= 1.0 && post <= 0.0) {
                return Err(Error::Message(format!(
                    "posterior activity {post} contradicts degenerate prior {prior}"
                )));
            }
            degenerate = true;
            out.push(post);
            continue;
        }
        out.push(logistic(logit(clamp_prob(post)) - logit(clamp_prob(prior))));
    }
    Ok((BernoulliMessage { active_prob: out }, degenerate))
}

struct Problem<'a> {
    sensing: &'a CMatrix,
    y: &'a CVector,
    norms: RVector,
}

impl Problem<'_> {
    fn energy(&self, state: &VariationalState, hyper: &PriorHyperParams, prior: &BernoulliMessage) -> Result<f64> {
        free_energy_with_norms(state, self.sensing, &self.norms, self.y, hyper, prior)
    }
}

/// One pass over all factors: mean, variances, precisions, support
/// activity, noise precision; then the support estimate and the extrinsic
/// message.
pub fn scvbi_round(
    state: &VariationalState,
    model: &ObservationModel,
    hyper: &PriorHyperParams,
    prior_msg: &BernoulliMessage,
    support: &SupportEstimate,
    options: &RoundOptions,
) -> Result<RoundOutput> {
    let n = model.n();
    if state.len() != n || prior_msg.len() != n {
        return Err(Error::dim(format!("state/prior length must equal N = {n}")));
    }
    hyper.validate(n)?;
    let problem = Problem {
        sensing: &model.sensing,
        y: &model.y,
        norms: column_norms2(&model.sensing),
    };
    let mut diag = RoundDiagnostics::default();
    let mut next = state.clone();
    let record = |block: UpdateBlock, st: &VariationalState, diag: &mut RoundDiagnostics| -> Result<()> {
        if options.track_energy {
            diag.energy.push((block, problem.energy(st, hyper, prior_msg)?));
        }
        Ok(())
    };
    record(UpdateBlock::Start, &next, &mut diag)?;

    let mom = compute_moments(&next)?;
    let surrogate = QuadraticSurrogate::with_column_norms(
        problem.sensing,
        problem.y,
        mom.rho_mean.clone(),
        mom.kappa_mean,
        problem.norms.clone(),
    )?;

    match options.mean_update {
        MeanUpdate::Subspace => {
            let init = subspace_init(support, &surrogate)?;
            diag.solve_jitter = init.jitter;
            diag.condition_estimate = init.condition_estimate;
            let (start, choice) = robust_select_init(init.mu, &state.mu, &surrogate);
            diag.init_choice = Some(choice);
            let refined = refine_mean_gradient(&start, &surrogate, options.b_x, options.descent);
            diag.refine_steps = refined.steps;
            diag.refine_stalled = refined.stalled;
            diag.relative_gradient = refined.relative_gradient;
            next.mu = refined.mu;
        }
        MeanUpdate::Exact => {
            let solved = exact_icvbi_mean(&surrogate)?;
            diag.solve_jitter = solved.jitter;
            diag.condition_estimate = solved.condition_estimate;
            diag.relative_gradient = surrogate.gradient(&solved.mu).norm() / surrogate.b.norm().max(f64::MIN_POSITIVE);
            next.mu = solved.mu;
        }
    }
    record(UpdateBlock::Mean, &next, &mut diag)?;

    next.sigma2 = update_qx_variances(&surrogate);
    record(UpdateBlock::Variance, &next, &mut diag)?;

    let (a, b) = update_q_rho(&compute_moments(&next)?, hyper);
    next.a_tilde = a;
    next.b_tilde = b;
    record(UpdateBlock::Precision, &next, &mut diag)?;

    next.lambda_tilde = update_q_s(&compute_moments(&next)?, hyper, prior_msg)?;
    record(UpdateBlock::Support, &next, &mut diag)?;

    let (c, d) = update_q_kappa(&next, problem.sensing, &problem.norms, problem.y, hyper);
    next.c_tilde = c;
    next.d_tilde = d;
    record(UpdateBlock::Noise, &next, &mut diag)?;
    next.validate()?;

    let new_support = estimate_support_scaled(&next.mu, c / d, Some(&problem.norms), options.support_policy)?;
    let (extrinsic, degenerate) = extrinsic_from_scvbi(&next.lambda_tilde, prior_msg)?;
    diag.extrinsic_degenerate = degenerate;
    Ok(RoundOutput {
        state: next,
        support: new_support,
        extrinsic,
        diagnostics: diag,
    })
}

/// Relative parameter change produced by re-running each block update once
/// on `state`, plus the gradient norm of the mean objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityReport {
    pub mean: f64,
    pub variance: f64,
    pub precision: f64,
    pub support: f64,
    pub noise: f64,
    /// `‖∇φ(μ)‖/‖b‖`.
    pub relative_gradient: f64,
}

impl StationarityReport {
    pub fn max_block_change(&self) -> f64 {
        [self.mean, self.variance, self.precision, self.support, self.noise]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn stationarity_report(
    state: &VariationalState,
    model: &ObservationModel,
    hyper: &PriorHyperParams,
    prior_msg: &BernoulliMessage,
    support: &SupportEstimate,
    options: &RoundOptions,
) -> Result<StationarityReport> {
    let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { num };
    let norms = column_norms2(&model.sensing);
    let mom = compute_moments(state)?;
    let surrogate = QuadraticSurrogate::with_column_norms(
        &model.sensing,
        &model.y,
        mom.rho_mean.clone(),
        mom.kappa_mean,
        norms.clone(),
    )?;
    let relative_gradient = surrogate.gradient(&state.mu).norm() / surrogate.b.norm().max(f64::MIN_POSITIVE);

    let mu = match options.mean_update {
        MeanUpdate::Subspace => {
            let init = subspace_init(support, &surrogate)?;
            let (start, _) = robust_select_init(init.mu, &state.mu, &surrogate);
            refine_mean_gradient(&start, &surrogate, options.b_x, options.descent).mu
        }
        MeanUpdate::Exact => exact_icvbi_mean(&surrogate)?.mu,
    };
    let mean = rel((&mu - &state.mu).norm(), state.mu.norm());
    let variance = rel(
        (update_qx_variances(&surrogate) - &state.sigma2).norm(),
        state.sigma2.norm(),
    );
    let (a, b) = update_q_rho(&mom, hyper);
    let precision = rel((&a - &state.a_tilde).norm(), state.a_tilde.norm())
        .max(rel((&b - &state.b_tilde).norm(), state.b_tilde.norm()));
    let lam = update_q_s(&mom, hyper, prior_msg)?;
    let lam_diff = lam
        .iter()
        .zip(&state.lambda_tilde)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let lam_norm = state.lambda_tilde.iter().map(|x| x * x).sum::<f64>().sqrt();
    let support_change = rel(lam_diff, lam_norm);
    let (c, d) = update_q_kappa(state, &model.sensing, &norms, &model.y, hyper);
    let noise = rel((c - state.c_tilde).abs(), state.c_tilde).max(rel((d - state.d_tilde).abs(), state.d_tilde));
    Ok(StationarityReport {
        mean,
        variance,
        precision,
        support: support_change,
        noise,
        relative_gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use crate::prior::default_hyperparams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn extrinsic_examples() {
        let prior = BernoulliMessage::new(vec![0.3, 0.5, 0.6]).unwrap();
        let (out, flag) = extrinsic_from_scvbi(&[0.3, 0.8, 0.9], &prior).unwrap();
        assert!(!flag);
        assert!((out.active_prob[0] - 0.5).abs() < 1e-15);
        assert!((out.active_prob[1] - 0.8).abs() < 1e-15);
        assert!((out.active_prob[2] - 6.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn extrinsic_degenerate_prior() {
        let prior = BernoulliMessage::new(vec![0.0, 1.0]).unwrap();
        let (out, flag) = extrinsic_from_scvbi(&[0.0, 1.0], &prior).unwrap();
        assert!(flag);
        assert_eq!(out.active_prob, vec![0.0, 1.0]);
        assert!(extrinsic_from_scvbi(&[1.0, 1.0], &prior).is_err());
    }

    fn cn(rng: &mut impl Rng) -> C64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    fn sparse_instance(seed: u64) -> (ObservationModel, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (20, 48);
        let a = CMatrix::from_fn(m, n, |_, _| cn(&mut rng));
        let mut x = CVector::zeros(n);
        for q in [3, 17, 30] {
            x[q] = C64::new(1.0 + rng.random::<f64>(), rng.random::<f64>());
        }
        let noise = CVector::from_fn(m, |_, _| cn(&mut rng) * 0.05);
        (ObservationModel::generic(&a * &x + noise, a).unwrap(), n)
    }

    fn start(
        model: &ObservationModel,
        h: &PriorHyperParams,
        prior: &BernoulliMessage,
        sup: &[usize],
    ) -> VariationalState {
        let sup = SupportEstimate::from_indices(sup.to_vec(), SupportPolicy::default());
        VariationalState::from_support(h, &prior.active_prob, &model.y, &sup).unwrap()
    }

    #[test]
    fn rounds_decrease_free_energy() {
        let (model, n) = sparse_instance(1);
        let h = default_hyperparams(n);
        let prior = BernoulliMessage::uniform(n, 3.0 / 48.0);
        let initial = [3, 9, 17, 30, 44];
        let mut st = start(&model, &h, &prior, &initial);
        let mut sup = SupportEstimate::from_indices(initial.to_vec(), SupportPolicy::default());
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            let out = scvbi_round(&st, &model, &h, &prior, &sup, &RoundOptions::default()).unwrap();
            assert!(out.diagnostics.max_energy_increase() <= 1e-9);
            let f = out.diagnostics.final_energy().unwrap();
            assert!(f <= last + 1e-9);
            last = f;
            st = out.state;
            sup = out.support;
        }
        for q in [3, 17, 30] {
            assert!(sup.indices.contains(&q));
        }
        let extra: f64 = (sup.indices.iter())
            .filter(|q| ![3, 17, 30].contains(*q))
            .map(|&q| st.mu[q].norm_sqr())
            .sum();
        assert!(extra < 1e-3 * st.mu.norm_squared());
    }

    #[test]
    fn round_is_deterministic() {
        let (model, n) = sparse_instance(2);
        let h = default_hyperparams(n);
        let prior = BernoulliMessage::uniform(n, 0.1);
        let st = start(&model, &h, &prior, &[3, 17, 30]);
        let sup = SupportEstimate::full(n);
        let a = scvbi_round(&st, &model, &h, &prior, &sup, &RoundOptions::default()).unwrap();
        let b = scvbi_round(&st, &model, &h, &prior, &sup, &RoundOptions::default()).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.support, b.support);
        assert_eq!(a.extrinsic, b.extrinsic);
    }

    #[test]
    fn true_support_tracks_exact_mean() {
        let (model, n) = sparse_instance(3);
        let h = default_hyperparams(n);
        let prior = BernoulliMessage::uniform(n, 0.1);
        let mut st = start(&model, &h, &prior, &[3, 17, 30]);
        let sup = SupportEstimate::from_indices(vec![3, 17, 30], SupportPolicy::default());
        for _ in 0..10 {
            st = scvbi_round(&st, &model, &h, &prior, &sup, &RoundOptions::default())
                .unwrap()
                .state;
        }
        let mom = compute_moments(&st).unwrap();
        let s = QuadraticSurrogate::new(&model.sensing, &model.y, mom.rho_mean, mom.kappa_mean).unwrap();
        let exact = exact_icvbi_mean(&s).unwrap().mu;
        let opts = RoundOptions {
            b_x: 0,
            ..RoundOptions::default()
        };
        let out = scvbi_round(&st, &model, &h, &prior, &sup, &opts).unwrap();
        assert!((&out.state.mu - &exact).norm() <= 1e-3 * exact.norm());
    }

    #[test]
    fn exact_mean_option_solves_the_full_system() {
        let (model, n) = sparse_instance(4);
        let h = default_hyperparams(n);
        let prior = BernoulliMessage::uniform(n, 0.1);
        let st = VariationalState::initial(&h, &prior.active_prob, &model.y).unwrap();
        let opts = RoundOptions {
            mean_update: MeanUpdate::Exact,
            ..RoundOptions::default()
        };
        let out = scvbi_round(&st, &model, &h, &prior, &SupportEstimate::full(n), &opts).unwrap();
        assert!(out.diagnostics.relative_gradient < 1e-10);
        assert!(out.diagnostics.max_energy_increase() <= 1e-9);
    }
}
