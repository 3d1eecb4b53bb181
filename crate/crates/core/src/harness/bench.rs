use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64};
use crate::model::ObservationModel;
use crate::prior::default_hyperparams;
use crate::scvbi::{
    compute_moments, exact_icvbi_mean, scvbi_round, QuadraticSurrogate, RoundOptions, SupportEstimate, SupportPolicy,
    VariationalState,
};
use crate::ssi::BernoulliMessage;

/// Shortest batch timed as one sample; cheap calls are repeated until a
/// batch lasts at least this long.
const MIN_BATCH_MS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub n: usize,
    pub m: usize,
    pub support_size: usize,
    pub repeats: usize,
    /// Median time per call.
    pub median_ms: f64,
    pub min_ms: f64,
}

/// Least-squares slope of `ln t` against `ln n` for one algorithm at one `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub algorithm: String,
    pub m: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub slopes: Vec<SlopeFit>,
}

impl BenchReport {
    pub fn slope(&self, algorithm: &str, m: usize) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.algorithm == algorithm && s.m == m)
            .map(|s| s.slope)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// JSON configuration of a scaling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub n_list: Vec<usize>,
    pub m_list: Vec<usize>,
    pub support_size: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            n_list: vec![128, 256, 512, 1024],
            m_list: vec![32],
            support_size: 8,
            repeats: 5,
            seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn run(&self) -> Result<BenchReport> {
        run_scaling_benchmark(&self.n_list, &self.m_list, self.support_size, self.repeats, self.seed)
    }
}

pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

struct BenchInstance {
    model: ObservationModel,
    state: VariationalState,
    support: SupportEstimate,
    prior: BernoulliMessage,
}

fn bench_instance(n: usize, m: usize, support_size: usize, seed: u64) -> Result<BenchInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 32) ^ m as u64);
    let mut cn = || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    };
    let a = CMatrix::from_fn(m, n, |_, _| cn());
    let stride = n / support_size;
    let indices: Vec<usize> = (0..support_size).map(|k| k * stride).collect();
    let mut x = CVector::zeros(n);
    for &q in &indices {
        x[q] = cn();
    }
    let y = &a * &x + CVector::from_fn(m, |_, _| cn() * 0.1);
    let hyper = default_hyperparams(n);
    let lambda = support_size as f64 / n as f64;
    let prior = BernoulliMessage::new(vec![lambda; n])?;
    let support = SupportEstimate::from_indices(indices, SupportPolicy::default());
    let state = VariationalState::from_support(&hyper, &prior.active_prob, &y, &support)?;
    Ok(BenchInstance {
        model: ObservationModel::generic(y, a)?,
        state,
        support,
        prior,
    })
}

/// Number of calls per timed batch so that one batch lasts at least
/// [`MIN_BATCH_MS`].
fn calibrate<F: FnMut() -> Result<()>>(f: &mut F) -> Result<usize> {
    let t = Instant::now();
    f()?;
    let single = t.elapsed().as_secs_f64() * 1e3;
    Ok(((MIN_BATCH_MS / single.max(1e-6)).ceil() as usize).clamp(1, 10_000))
}

/// Mean per-call time of one batch, in milliseconds.
fn time_batch<F: FnMut() -> Result<()>>(f: &mut F, batch: usize) -> Result<f64> {
    let t = Instant::now();
    for _ in 0..batch {
        f()?;
    }
    Ok(t.elapsed().as_secs_f64() * 1e3 / batch as f64)
}

pub const SCVBI_ROUND: &str = "sc_vbi_round";
pub const ICVBI_SOLVE: &str = "ic_vbi_exact_solve";

struct Case {
    m: usize,
    n: usize,
    inst: BenchInstance,
    surrogate_rho: crate::linalg::RVector,
    kappa: f64,
}

/// Times one SC-VBI round and one dense IC-VBI mean solve at every
/// `(n, m)` pair with a fixed support size, then fits slopes against `n`.
///
/// Each repeat visits every size once, so a slow spell on a shared machine
/// inflates all sizes alike instead of skewing the fitted slope.
pub fn run_scaling_benchmark(
    n_list: &[usize],
    m_list: &[usize],
    support_size: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchReport> {
    if n_list.is_empty() || m_list.is_empty() {
        return Err(Error::input("n_list and m_list must be non-empty"));
    }
    if repeats == 0 || support_size == 0 {
        return Err(Error::input("repeats and support size must be positive"));
    }
    if n_list.iter().any(|&n| n < support_size) {
        return Err(Error::input("every n must be at least the support size"));
    }
    let options = RoundOptions {
        track_energy: false,
        ..RoundOptions::default()
    };
    let mut cases = Vec::new();
    for &m in m_list {
        for &n in n_list {
            let inst = bench_instance(n, m, support_size, seed)?;
            let moments = compute_moments(&inst.state)?;
            cases.push(Case {
                m,
                n,
                inst,
                surrogate_rho: moments.rho_mean,
                kappa: moments.kappa_mean,
            });
        }
    }
    let hypers: Vec<_> = cases.iter().map(|c| default_hyperparams(c.n)).collect();
    let (cases_ref, hypers, options) = (&cases, &hypers, &options);
    let round = |i: usize| {
        let c = &cases_ref[i];
        move || -> Result<()> {
            scvbi_round(
                &c.inst.state,
                &c.inst.model,
                &hypers[i],
                &c.inst.prior,
                &c.inst.support,
                options,
            )?;
            Ok(())
        }
    };
    let dense = |i: usize| {
        let c = &cases_ref[i];
        move || -> Result<()> {
            let s = QuadraticSurrogate::new(&c.inst.model.sensing, &c.inst.model.y, c.surrogate_rho.clone(), c.kappa)?;
            exact_icvbi_mean(&s)?;
            Ok(())
        }
    };
    let mut batches = Vec::with_capacity(cases.len());
    for i in 0..cases.len() {
        batches.push((calibrate(&mut round(i))?, calibrate(&mut dense(i))?));
    }
    let mut samples = vec![(Vec::with_capacity(repeats), Vec::with_capacity(repeats)); cases.len()];
    for _ in 0..repeats {
        for (i, &(rb, db)) in batches.iter().enumerate() {
            samples[i].0.push(time_batch(&mut round(i), rb)?);
            samples[i].1.push(time_batch(&mut dense(i), db)?);
        }
    }
    let summarize = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[v.len() / 2], v[0])
    };
    let mut rows = Vec::new();
    for (c, (sc, ic)) in cases.iter().zip(samples) {
        for (algorithm, times) in [(SCVBI_ROUND, sc), (ICVBI_SOLVE, ic)] {
            let (median_ms, min_ms) = summarize(times);
            rows.push(BenchRow {
                algorithm: algorithm.into(),
                n: c.n,
                m: c.m,
                support_size,
                repeats,
                median_ms,
                min_ms,
            });
        }
    }
    let mut slopes = Vec::new();
    for &m in m_list {
        for alg in [SCVBI_ROUND, ICVBI_SOLVE] {
            let pts: Vec<&BenchRow> = rows.iter().filter(|r| r.m == m && r.algorithm == alg).collect();
            let xs: Vec<f64> = pts.iter().map(|r| r.n as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|r| r.median_ms).collect();
            if let Some(slope) = fit_loglog_slope(&xs, &ys) {
                slopes.push(SlopeFit {
                    algorithm: alg.into(),
                    m,
                    slope,
                });
            }
        }
    }
    Ok(BenchReport { rows, slopes })
}
