//! Linear observation model `y = A(θ)x + w` and the synthetic massive-MIMO
//! benchmark built on it: uniform planar arrays, partially connected hybrid
//! combiners, a 2D dynamic angular grid and multipath channels.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, CMatrix, CVector, C64};

/// Default elevation prior range in radians.
pub const DEFAULT_ELEVATION_RANGE: (f64, f64) = (-PI / 6.0, 0.0);
/// Default azimuth range in radians; the half-wavelength UPA response is
/// only identifiable on one half-plane of azimuth.
pub const DEFAULT_AZIMUTH_RANGE: (f64, f64) = (-PI / 2.0, PI / 2.0);

/// A uniform planar array with `nx` horizontal and `ny` vertical elements at
/// half-wavelength spacing. Element `(ix, iy)` is stored at `ix + nx·iy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpaArray {
    pub nx: usize,
    pub ny: usize,
}

impl UpaArray {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::input("array dimensions must be at least 1"));
        }
        Ok(Self { nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_angles(az: f64, el: f64) -> Result<()> {
    if az.is_finite() && el.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("non-finite angle (az = {az}, el = {el})")))
    }
}

/// Array response `a(az, el)` with entries `exp(jπ(ix·sin(az)cos(el) + iy·sin(el)))`.
pub fn upa_steering(az: f64, el: f64, nx: usize, ny: usize) -> Result<CVector> {
    check_angles(az, el)?;
    if nx == 0 || ny == 0 {
        return Err(Error::input("array dimensions must be at least 1"));
    }
    let u = PI * az.sin() * el.cos();
    let v = PI * el.sin();
    Ok(CVector::from_fn(nx * ny, |n, _| {
        let (ix, iy) = ((n % nx) as f64, (n / nx) as f64);
        C64::from_polar(1.0, ix * u + iy * v)
    }))
}

/// Analytic partial derivatives `(∂a/∂az, ∂a/∂el)` of [`upa_steering`].
pub fn steering_derivative(az: f64, el: f64, nx: usize, ny: usize) -> Result<(CVector, CVector)> {
    let a = upa_steering(az, el, nx, ny)?;
    let du_daz = PI * az.cos() * el.cos();
    let du_del = -PI * az.sin() * el.sin();
    let dv_del = PI * el.cos();
    let d_az = CVector::from_fn(a.len(), |n, _| {
        let ix = (n % nx) as f64;
        a[n] * C64::new(0.0, ix * du_daz)
    });
    let d_el = CVector::from_fn(a.len(), |n, _| {
        let (ix, iy) = ((n % nx) as f64, (n / nx) as f64);
        a[n] * C64::new(0.0, ix * du_del + iy * dv_del)
    });
    Ok((d_az, d_el))
}

/// The 2D dynamic angular grid: `q = i1 + n1·i2` addresses azimuth index
/// `i1` and elevation index `i2`.
///
/// The uniform starting positions and cell sizes are kept alongside the
/// current angles so refinement can be confined to a neighbourhood of each
/// starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicGrid {
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
    pub base_azimuth: Vec<f64>,
    pub base_elevation: Vec<f64>,
    pub az_spacing: f64,
    pub el_spacing: f64,
}

impl DynamicGrid {
    /// Cell-centred uniform grid over `[az_lo, az_hi) × [el_lo, el_hi]`.
    pub fn uniform(n1: usize, n2: usize, az_range: (f64, f64), el_range: (f64, f64)) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::input("grid dimensions must be at least 1"));
        }
        let (az_lo, az_hi) = az_range;
        let (el_lo, el_hi) = el_range;
        if !(az_lo < az_hi) || !(el_lo <= el_hi) {
            return Err(Error::input("grid ranges must be increasing"));
        }
        if az_lo < -PI || az_hi > PI {
            return Err(Error::input("azimuth range must lie in [-π, π)"));
        }
        let az_spacing = (az_hi - az_lo) / n1 as f64;
        let el_spacing = (el_hi - el_lo) / n2 as f64;
        let q = n1 * n2;
        let mut azimuth = Vec::with_capacity(q);
        let mut elevation = Vec::with_capacity(q);
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                azimuth.push(az_lo + (i1 as f64 + 0.5) * az_spacing);
                elevation.push(el_lo + (i2 as f64 + 0.5) * el_spacing);
            }
        }
        let grid = Self {
            base_azimuth: azimuth.clone(),
            base_elevation: elevation.clone(),
            azimuth,
            elevation,
            n1,
            n2,
            az_spacing,
            el_spacing,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Uniform grid over the default azimuth and elevation ranges.
    pub fn with_default_ranges(n1: usize, n2: usize) -> Result<Self> {
        Self::uniform(n1, n2, DEFAULT_AZIMUTH_RANGE, DEFAULT_ELEVATION_RANGE)
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 + self.n1 * i2
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.n1 * self.n2;
        if self.azimuth.len() != q
            || self.elevation.len() != q
            || self.base_azimuth.len() != q
            || self.base_elevation.len() != q
        {
            return Err(Error::dim(format!("grid vectors must have length n1·n2 = {q}")));
        }
        if self.azimuth.iter().chain(&self.elevation).any(|a| !a.is_finite()) {
            return Err(Error::input("grid angles must be finite"));
        }
        if self.azimuth.iter().any(|&a| !(-PI..PI).contains(&a)) {
            return Err(Error::input("azimuth angles must lie in [-π, π)"));
        }
        Ok(())
    }
}

/// Partially connected hybrid combiner: block-diagonal unit-modulus analog
/// stage, unitary digital stage and a unit-modulus pilot symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridCombiner {
    pub analog: CMatrix,
    pub digital: CMatrix,
    pub pilot: C64,
}

impl HybridCombiner {
    pub fn nr(&self) -> usize {
        self.analog.ncols()
    }

    pub fn nrf(&self) -> usize {
        self.analog.nrows()
    }

    /// `u · F_d · F_a`, the N_RF × N_r map applied to the channel.
    pub fn effective(&self) -> CMatrix {
        (&self.digital * &self.analog) * self.pilot
    }

    /// An identity combiner (`N_RF = N_r`, `F = I`, `u = 1`), useful when the
    /// full array output is observed.
    pub fn identity(nr: usize) -> Self {
        Self {
            analog: CMatrix::identity(nr, nr),
            digital: CMatrix::identity(nr, nr),
            pilot: C64::new(1.0, 0.0),
        }
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Draws a combiner with i.i.d. uniform analog phases and a Haar-random
/// unitary digital stage, reproducibly from `seed`.
pub fn generate_combiner(nr: usize, nrf: usize, seed: u64) -> Result<HybridCombiner> {
    if nr == 0 || nrf == 0 || !nr.is_multiple_of(nrf) {
        return Err(Error::input(format!("nrf = {nrf} must divide nr = {nr}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = nr / nrf;
    let mut analog = CMatrix::zeros(nrf, nr);
    for r in 0..nrf {
        for c in r * block..(r + 1) * block {
            analog[(r, c)] = C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
        }
    }
    let g = DMatrix::from_fn(nrf, nrf, |_, _| complex_normal(&mut rng, 1.0));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column phases so the draw is Haar distributed.
    let digital = CMatrix::from_fn(nrf, nrf, |i, j| {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        q[(i, j)] * phase
    });
    let pilot = C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    Ok(HybridCombiner { analog, digital, pilot })
}

/// `A(θ, φ)`: the N_r × Q matrix of array responses at the grid points.
pub fn steering_matrix(grid: &DynamicGrid, array: UpaArray) -> Result<CMatrix> {
    let mut a = CMatrix::zeros(array.len(), grid.len());
    for q in 0..grid.len() {
        let col = upa_steering(grid.azimuth[q], grid.elevation[q], array.nx, array.ny)?;
        a.set_column(q, &col);
    }
    Ok(a)
}

/// Sensing matrix with column `q` equal to `u·F·a(θ_q, φ_q)`.
pub fn build_sensing_matrix(grid: &DynamicGrid, array: UpaArray, combiner: &HybridCombiner) -> Result<CMatrix> {
    if combiner.nr() != array.len() {
        return Err(Error::dim(format!(
            "combiner expects {} antennas but the array has {}",
            combiner.nr(),
            array.len()
        )));
    }
    grid.validate()?;
    Ok(combiner.effective() * steering_matrix(grid, array)?)
}

/// Array geometry, combiner and grid of a MIMO observation model.
#[derive(Debug, Clone)]
pub struct MimoSetup {
    pub array: UpaArray,
    pub combiner: HybridCombiner,
    pub grid: DynamicGrid,
    effective: CMatrix,
}

impl MimoSetup {
    pub fn new(array: UpaArray, combiner: HybridCombiner, grid: DynamicGrid) -> Result<Self> {
        if combiner.nr() != array.len() {
            return Err(Error::dim("combiner and array sizes differ"));
        }
        let effective = combiner.effective();
        Ok(Self {
            array,
            combiner,
            grid,
            effective,
        })
    }

    /// Cached `u·F_d·F_a`.
    pub fn effective_combiner(&self) -> &CMatrix {
        &self.effective
    }
}

/// `y = A x + w` together with the structure needed to rebuild `A` when the
/// grid moves. Generic compressed-sensing instances carry no MIMO structure.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub y: CVector,
    pub sensing: CMatrix,
    pub mimo: Option<MimoSetup>,
}

impl ObservationModel {
    /// A plain linear model with an arbitrary sensing matrix.
    pub fn generic(y: CVector, sensing: CMatrix) -> Result<Self> {
        let model = Self { y, sensing, mimo: None };
        model.validate()?;
        Ok(model)
    }

    pub fn mimo(y: CVector, setup: MimoSetup) -> Result<Self> {
        let sensing = setup.effective_combiner() * steering_matrix(&setup.grid, setup.array)?;
        let model = Self {
            y,
            sensing,
            mimo: Some(setup),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn m(&self) -> usize {
        self.sensing.nrows()
    }

    pub fn n(&self) -> usize {
        self.sensing.ncols()
    }

    pub fn grid(&self) -> Option<&DynamicGrid> {
        self.mimo.as_ref().map(|s| &s.grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.sensing.nrows() {
            return Err(Error::dim(format!(
                "y has {} entries but A has {} rows",
                self.y.len(),
                self.sensing.nrows()
            )));
        }
        if !all_finite(&self.y) || self.sensing.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::input("observation model entries must be finite"));
        }
        if let Some(setup) = &self.mimo {
            if setup.grid.len() != self.sensing.ncols() {
                return Err(Error::dim("grid size differs from the number of columns"));
            }
        }
        Ok(())
    }

    /// Replaces the grid and rebuilds the sensing matrix.
    pub fn set_grid(&mut self, grid: DynamicGrid) -> Result<()> {
        let setup = self
            .mimo
            .as_mut()
            .ok_or_else(|| Error::input("model has no dynamic grid"))?;
        grid.validate()?;
        if grid.len() != self.sensing.ncols() {
            return Err(Error::dim("grid size differs from the number of columns"));
        }
        self.sensing = setup.effective_combiner() * steering_matrix(&grid, setup.array)?;
        setup.grid = grid;
        Ok(())
    }

    /// Replaces the measurement vector.
    pub fn with_y(mut self, y: CVector) -> Result<Self> {
        self.y = y;
        self.validate()?;
        Ok(self)
    }
}

/// Ground truth of a synthetic multipath channel.
#[derive(Debug, Clone)]
pub struct ChannelTruth {
    /// Path gains, aligned with `support_true`.
    pub gains: Vec<C64>,
    pub az_true: Vec<f64>,
    pub el_true: Vec<f64>,
    /// Antenna-domain channel `h = Σ α_k a(θ_k, φ_k)`.
    pub h: CVector,
    /// Angular-domain coefficients on the nominal grid.
    pub x_true: CVector,
    /// Sorted grid indices of the paths.
    pub support_true: Vec<usize>,
}

impl ChannelTruth {
    /// The grid with every path's grid point moved to its true angles.
    pub fn true_grid(&self, grid: &DynamicGrid) -> DynamicGrid {
        let mut g = grid.clone();
        for (k, &q) in self.support_true.iter().enumerate() {
            g.azimuth[q] = self.az_true[k];
            g.elevation[q] = self.el_true[k];
        }
        g
    }
}

/// A channel with paths at the given grid points. With `off_grid`, each
/// path's angles are perturbed uniformly within half a grid cell.
pub fn channel_from_support<R: Rng + ?Sized>(
    support: &[usize],
    grid: &DynamicGrid,
    array: UpaArray,
    off_grid: bool,
    rng: &mut R,
) -> Result<ChannelTruth> {
    let mut support_true = support.to_vec();
    support_true.sort_unstable();
    support_true.dedup();
    if support_true.len() != support.len() {
        return Err(Error::input("support indices must be distinct"));
    }
    if support_true.iter().any(|&q| q >= grid.len()) {
        return Err(Error::input("support index outside the grid"));
    }
    let mut gains = Vec::with_capacity(support_true.len());
    let mut az_true = Vec::with_capacity(support_true.len());
    let mut el_true = Vec::with_capacity(support_true.len());
    let mut h = CVector::zeros(array.len());
    let mut x_true = CVector::zeros(grid.len());
    for &q in &support_true {
        let (mut az, mut el) = (grid.azimuth[q], grid.elevation[q]);
        if off_grid {
            az += rng.random_range(-0.5..0.5) * grid.az_spacing;
            el += rng.random_range(-0.5..0.5) * grid.el_spacing;
        }
        let alpha = complex_normal(rng, 1.0);
        h += upa_steering(az, el, array.nx, array.ny)? * alpha;
        x_true[q] = alpha;
        gains.push(alpha);
        az_true.push(az);
        el_true.push(el);
    }
    Ok(ChannelTruth {
        gains,
        az_true,
        el_true,
        h,
        x_true,
        support_true,
    })
}

/// A `k_paths`-path channel at distinct, uniformly chosen grid points.
pub fn generate_channel<R: Rng + ?Sized>(
    k_paths: usize,
    grid: &DynamicGrid,
    array: UpaArray,
    off_grid: bool,
    rng: &mut R,
) -> Result<ChannelTruth> {
    if k_paths > grid.len() {
        return Err(Error::input(format!(
            "{k_paths} paths requested on a grid of {} points",
            grid.len()
        )));
    }
    let support = sample_indices(rng, grid.len(), k_paths).into_vec();
    channel_from_support(&support, grid, array, off_grid, rng)
}

/// Noise precision giving a per-measurement SNR of `snr_db` for `signal`.
pub fn kappa_for_snr(signal: &CVector, snr_db: f64) -> f64 {
    let power = crate::linalg::norm2(signal) / signal.len().max(1) as f64;
    10f64.powf(snr_db / 10.0) / power
}

/// Draws `y = A x_true + w` with `w ~ CN(0, κ⁻¹ I)`; `kappa = None` is noise free.
pub fn observe<R: Rng + ?Sized>(
    sensing: &CMatrix,
    x_true: &CVector,
    kappa: Option<f64>,
    rng: &mut R,
) -> Result<CVector> {
    if x_true.len() != sensing.ncols() {
        return Err(Error::dim("x_true length differs from the number of columns"));
    }
    let mut y = sensing * x_true;
    if let Some(kappa) = kappa {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::input(format!("noise precision must be positive, got {kappa}")));
        }
        for v in y.iter_mut() {
            *v += complex_normal(rng, 1.0 / kappa);
        }
    }
    Ok(y)
}
