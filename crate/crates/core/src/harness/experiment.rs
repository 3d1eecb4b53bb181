use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ae::{solve_tracked, Reference, SolveResult, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::{CVector, C64};
use crate::model::{
    channel_from_support, generate_channel, generate_combiner, kappa_for_snr, ChannelTruth, DynamicGrid, MimoSetup,
    ObservationModel, UpaArray, DEFAULT_AZIMUTH_RANGE, DEFAULT_ELEVATION_RANGE,
};
use crate::prior::{default_hyperparams, markov2d_from_sparsity, sample_support, PriorHyperParams, SupportPrior};
use crate::scvbi::MeanUpdate;

use super::metrics::{MetricRecord, NOISE_FREE};

/// How the true path positions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    /// `k_paths` distinct grid points chosen uniformly.
    Uniform { k_paths: usize },
    /// Clustered support drawn from a 2D Markov prior.
    Markov2d { lambda: f64, mean_run: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ScVbi,
    IcVbiOracle,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::ScVbi => "sc_vbi",
            Algorithm::IcVbiOracle => "ic_vbi_oracle",
        }
    }
}

/// Support prior handed to the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorVariant {
    Iid,
    Markov2d { mean_run: f64 },
}

impl PriorVariant {
    pub fn label(&self) -> &'static str {
        match self {
            PriorVariant::Iid => "iid",
            PriorVariant::Markov2d { .. } => "markov2d",
        }
    }
}

/// Scalar overrides applied to every element of the default hyperparameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperOverrides {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub a_bar: Option<f64>,
    pub b_bar: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
}

impl HyperOverrides {
    pub fn build(&self, n: usize) -> Result<PriorHyperParams> {
        let mut h = default_hyperparams(n);
        let fill = |v: &mut Vec<f64>, x: Option<f64>| {
            if let Some(x) = x {
                v.iter_mut().for_each(|e| *e = x);
            }
        };
        fill(&mut h.a, self.a);
        fill(&mut h.b, self.b);
        fill(&mut h.a_bar, self.a_bar);
        fill(&mut h.b_bar, self.b_bar);
        if let Some(c) = self.c {
            h.c = c;
        }
        if let Some(d) = self.d {
            h.d = d;
        }
        h.validate(n)?;
        Ok(h)
    }
}

/// A grid of experiment cells: every seed × SNR × algorithm × prior ×
/// grid-refinement setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub nx: usize,
    pub ny: usize,
    /// RF chains; when absent, derived from `compression_ratio`.
    pub nrf: Option<usize>,
    pub compression_ratio: Option<f64>,
    pub n1: usize,
    pub n2: usize,
    /// Azimuth interval `[lo, hi)` covered by the grid, radians.
    pub azimuth_range: (f64, f64),
    /// Elevation interval `[lo, hi]`, radians.
    pub elevation_range: (f64, f64),
    pub truth: TruthSpec,
    pub off_grid: bool,
    /// `null` entries are noise free.
    pub snr_db: Vec<Option<f64>>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    pub priors: Vec<PriorVariant>,
    pub grid_refinement: Vec<bool>,
    pub solver: SolverConfig,
    pub hyper: HyperOverrides,
    /// Emit one row per outer iteration instead of one per cell.
    pub per_iteration: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            nx: 8,
            ny: 8,
            nrf: None,
            compression_ratio: Some(4.0),
            n1: 16,
            n2: 8,
            azimuth_range: DEFAULT_AZIMUTH_RANGE,
            elevation_range: DEFAULT_ELEVATION_RANGE,
            truth: TruthSpec::Uniform { k_paths: 3 },
            off_grid: true,
            snr_db: vec![Some(10.0)],
            seeds: vec![0],
            algorithms: vec![Algorithm::ScVbi],
            priors: vec![PriorVariant::Iid],
            grid_refinement: vec![true],
            solver: SolverConfig::default(),
            hyper: HyperOverrides::default(),
            per_iteration: false,
            output: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn nr(&self) -> usize {
        self.nx * self.ny
    }

    pub fn rf_chains(&self) -> Result<usize> {
        let nr = self.nr();
        let nrf = match (self.nrf, self.compression_ratio) {
            (Some(nrf), _) => nrf,
            (None, Some(cr)) if cr >= 1.0 => {
                let v = nr as f64 / cr;
                if (v - v.round()).abs() > 1e-9 {
                    return Err(Error::input(format!(
                        "compression ratio {cr} does not divide {nr} antennas"
                    )));
                }
                v.round() as usize
            }
            _ => return Err(Error::input("either nrf or a compression ratio ≥ 1 is required")),
        };
        if nrf == 0 || !nr.is_multiple_of(nrf) {
            return Err(Error::input(format!("{nrf} RF chains must divide {nr} antennas")));
        }
        Ok(nrf)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.n1 == 0 || self.n2 == 0 {
            return Err(Error::input("array and grid dimensions must be positive"));
        }
        self.rf_chains()?;
        self.nominal_grid()?;
        if self.seeds.is_empty() {
            return Err(Error::input("at least one seed is required"));
        }
        if self.snr_db.is_empty()
            || self.algorithms.is_empty()
            || self.priors.is_empty()
            || self.grid_refinement.is_empty()
        {
            return Err(Error::input(
                "snr_db, algorithms, priors and grid_refinement must be non-empty",
            ));
        }
        if self.snr_db.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::input("SNR values must be finite (use null for noise free)"));
        }
        match self.truth {
            TruthSpec::Uniform { k_paths } if k_paths == 0 || k_paths > self.n1 * self.n2 => {
                return Err(Error::input("k_paths must lie in 1..=n1·n2"));
            }
            TruthSpec::Markov2d { lambda, mean_run } => {
                markov2d_from_sparsity(lambda, mean_run, self.n1, self.n2)?;
            }
            _ => {}
        }
        for p in &self.priors {
            if let PriorVariant::Markov2d { mean_run } = *p {
                markov2d_from_sparsity(self.expected_fraction(), mean_run, self.n1, self.n2)?;
            }
        }
        self.solver.validate()?;
        self.hyper.build(self.n1 * self.n2)?;
        Ok(())
    }

    pub fn nominal_grid(&self) -> Result<DynamicGrid> {
        DynamicGrid::uniform(self.n1, self.n2, self.azimuth_range, self.elevation_range)
    }

    /// Expected fraction of active grid points under the truth model.
    pub fn expected_fraction(&self) -> f64 {
        match self.truth {
            TruthSpec::Uniform { k_paths } => k_paths as f64 / (self.n1 * self.n2) as f64,
            TruthSpec::Markov2d { lambda, .. } => lambda,
        }
    }

    pub fn support_prior(&self, variant: PriorVariant) -> Result<SupportPrior> {
        let lambda = self.expected_fraction();
        match variant {
            PriorVariant::Iid => Ok(SupportPrior::iid_uniform(self.n1 * self.n2, lambda)),
            PriorVariant::Markov2d { mean_run } => markov2d_from_sparsity(lambda, mean_run, self.n1, self.n2),
        }
    }

    /// All cells in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &snr_db in &self.snr_db {
                for &algorithm in &self.algorithms {
                    for &prior in &self.priors {
                        for &grid_refinement in &self.grid_refinement {
                            out.push(Cell {
                                seed,
                                snr_db,
                                algorithm,
                                prior,
                                grid_refinement,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub algorithm: Algorithm,
    pub prior: PriorVariant,
    pub grid_refinement: bool,
}

impl Cell {
    pub fn label(&self) -> String {
        format!(
            "{}+{}+{}",
            self.algorithm.label(),
            self.prior.label(),
            if self.grid_refinement { "grid" } else { "fixed" }
        )
    }
}

/// One synthetic channel-estimation problem on the nominal grid.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: ObservationModel,
    pub truth: ChannelTruth,
    pub kappa: Option<f64>,
}

const CHANNEL_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Builds the instance for `seed`. The combiner, channel and noise direction
/// depend only on the seed, so cells with different SNRs share them.
pub fn build_instance(spec: &ExperimentSpec, seed: u64, snr_db: Option<f64>) -> Result<Instance> {
    let array = UpaArray::new(spec.nx, spec.ny)?;
    let combiner = generate_combiner(spec.nr(), spec.rf_chains()?, seed)?;
    let grid = spec.nominal_grid()?;
    let setup = MimoSetup::new(array, combiner, grid.clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CHANNEL_STREAM);
    let truth = match spec.truth {
        TruthSpec::Uniform { k_paths } => generate_channel(k_paths, &grid, array, spec.off_grid, &mut rng)?,
        TruthSpec::Markov2d { lambda, mean_run } => {
            let prior = markov2d_from_sparsity(lambda, mean_run, spec.n1, spec.n2)?;
            let support = loop {
                let s = sample_support(&prior, &mut rng);
                let idx: Vec<usize> = (0..s.len()).filter(|&q| s[q]).collect();
                if !idx.is_empty() {
                    break idx;
                }
            };
            channel_from_support(&support, &grid, array, spec.off_grid, &mut rng)?
        }
    };

    let clean = setup.effective_combiner() * &truth.h;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(NOISE_STREAM);
    let unit: CVector = CVector::from_fn(clean.len(), |_, _| {
        let re: f64 = noise_rng.sample(StandardNormal);
        let im: f64 = noise_rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let kappa = snr_db.map(|s| kappa_for_snr(&clean, s));
    let y = match kappa {
        Some(k) => &clean + unit / C64::new(k.sqrt(), 0.0),
        None => clean,
    };
    Ok(Instance {
        model: ObservationModel::mimo(y, setup)?,
        truth,
        kappa,
    })
}

/// Outcome of one cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub final_nmse_db: f64,
    pub records: Vec<MetricRecord>,
}

pub fn run_cell(spec: &ExperimentSpec, cell: Cell) -> Result<CellResult> {
    Ok(solve_cell(spec, cell)?.0)
}

/// As [`run_cell`], also returning the solver output.
pub fn solve_cell(spec: &ExperimentSpec, cell: Cell) -> Result<(CellResult, SolveResult)> {
    let inst = build_instance(spec, cell.seed, cell.snr_db)?;
    let n = inst.model.n();
    let hyper = spec.hyper.build(n)?;
    let prior = spec.support_prior(cell.prior)?;
    let config = SolverConfig {
        grid_refinement: cell.grid_refinement,
        mean_update: match cell.algorithm {
            Algorithm::ScVbi => MeanUpdate::Subspace,
            Algorithm::IcVbiOracle => MeanUpdate::Exact,
        },
        ..spec.solver.clone()
    };
    let result = solve_tracked(
        &inst.model,
        &hyper,
        &prior,
        &config,
        Some(&Reference::Channel(inst.truth.h.clone())),
    )?;
    let snr = cell.snr_db.map_or_else(|| NOISE_FREE.to_string(), |s| format!("{s}"));
    let cr = spec.nr() as f64 / spec.rf_chains()? as f64;
    let to_record = |r: &crate::ae::IterationRecord| MetricRecord {
        scenario: spec.scenario.clone(),
        seed: cell.seed,
        iteration: r.iteration,
        nmse_db: r.nmse_db.unwrap_or(f64::NAN),
        free_energy: r.free_energy,
        support_size: r.support_size,
        wall_ms: r.wall_ms,
        algorithm: cell.label(),
        snr_db: snr.clone(),
        compression_ratio: cr,
    };
    let records: Vec<MetricRecord> = if spec.per_iteration {
        result.trace.iter().map(to_record).collect()
    } else {
        result.trace.last().map(to_record).into_iter().collect()
    };
    let final_nmse_db = result.final_nmse_db().unwrap_or(f64::NAN);
    Ok((
        CellResult {
            cell,
            final_nmse_db,
            records,
        },
        result,
    ))
}

/// Runs every cell on a pool of `threads` workers. Results come back in cell
/// order regardless of completion order.
pub fn run_cells(spec: &ExperimentSpec, threads: usize) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::input(format!("thread pool: {e}")))?;
    pool.install(|| cells.par_iter().map(|&c| run_cell(spec, c)).collect())
}

pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<Vec<MetricRecord>> {
    Ok(run_cells(spec, threads)?.into_iter().flat_map(|c| c.records).collect())
}
