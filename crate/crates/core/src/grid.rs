//! Maximum-likelihood refinement of the grid angles on the estimated support.

use crate::error::{Error, Result};
use crate::linalg::{norm2, CMatrix, CVector};
use crate::model::{steering_derivative, upa_steering, DynamicGrid, UpaArray};

/// Everything the grid likelihood holds fixed: the support, the coefficient
/// estimates on it, the noise precision and the measurement chain.
#[derive(Debug, Clone)]
pub struct GridLikelihoodContext<'a> {
    /// Coefficients aligned with `support`.
    pub x_hat: CVector,
    pub kappa_hat: f64,
    pub y: &'a CVector,
    pub support: Vec<usize>,
    pub array: UpaArray,
    /// Combined `u·F` mapping antenna signals to measurements.
    pub combiner: &'a CMatrix,
}

impl GridLikelihoodContext<'_> {
    pub fn validate(&self, grid: &DynamicGrid) -> Result<()> {
        if self.x_hat.len() != self.support.len() {
            return Err(Error::dim("coefficient and support lengths differ"));
        }
        if self.combiner.ncols() != self.array.len() || self.combiner.nrows() != self.y.len() {
            return Err(Error::dim("combiner does not match the array and measurement sizes"));
        }
        if self.support.iter().any(|&q| q >= grid.len()) {
            return Err(Error::dim("support index outside the grid"));
        }
        if !(self.kappa_hat > 0.0) {
            return Err(Error::input("noise precision must be positive"));
        }
        Ok(())
    }

    fn column(&self, grid: &DynamicGrid, q: usize) -> Result<CVector> {
        let a = upa_steering(grid.azimuth[q], grid.elevation[q], self.array.nx, self.array.ny)?;
        Ok(self.combiner * a)
    }

    fn residual(&self, grid: &DynamicGrid) -> Result<CVector> {
        let mut r = self.y.clone();
        for (k, &q) in self.support.iter().enumerate() {
            r -= self.column(grid, q)? * self.x_hat[k];
        }
        Ok(r)
    }
}

/// `−κ̂‖y − A_S x̂_S‖²`, building only the supported columns.
pub fn grid_likelihood(grid: &DynamicGrid, ctx: &GridLikelihoodContext) -> Result<f64> {
    ctx.validate(grid)?;
    Ok(-ctx.kappa_hat * norm2(&ctx.residual(grid)?))
}

/// Partial derivatives of the likelihood with respect to the supported
/// angles, aligned with `ctx.support`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGradient {
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
}

impl GridGradient {
    pub fn max_abs(&self) -> f64 {
        self.azimuth
            .iter()
            .chain(&self.elevation)
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

pub fn grid_gradient(grid: &DynamicGrid, ctx: &GridLikelihoodContext) -> Result<GridGradient> {
    ctx.validate(grid)?;
    let r = ctx.residual(grid)?;
    gradient_at(grid, ctx, &r)
}

fn gradient_at(grid: &DynamicGrid, ctx: &GridLikelihoodContext, r: &CVector) -> Result<GridGradient> {
    let mut out = GridGradient {
        azimuth: Vec::with_capacity(ctx.support.len()),
        elevation: Vec::with_capacity(ctx.support.len()),
    };
    for (k, &q) in ctx.support.iter().enumerate() {
        let (d_az, d_el) = steering_derivative(grid.azimuth[q], grid.elevation[q], ctx.array.nx, ctx.array.ny)?;
        let xc = ctx.x_hat[k].conj();
        let part = |d: CVector| -> f64 {
            let dc = ctx.combiner * d;
            2.0 * ctx.kappa_hat * (xc * dc.dotc(r)).re
        };
        out.azimuth.push(part(d_az));
        out.elevation.push(part(d_el));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GridAscent {
    pub grid: DynamicGrid,
    /// Likelihood at the start and after every step.
    pub likelihoods: Vec<f64>,
    pub steps: usize,
    /// The line search failed to find an increase before all steps were used.
    pub stalled: bool,
}

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 50;

/// Up to `b_theta` projected Armijo ascent steps on the supported angles,
/// each confined to one cell around its starting grid position.
pub fn grid_ascent(grid: &DynamicGrid, ctx: &GridLikelihoodContext, b_theta: usize) -> Result<GridAscent> {
    ctx.validate(grid)?;
    let mut current = grid.clone();
    let mut r = ctx.residual(&current)?;
    let mut like = -ctx.kappa_hat * norm2(&r);
    let mut likelihoods = vec![like];
    let mut stalled = false;
    let mut steps = 0;
    let cell = grid.az_spacing.min(grid.el_spacing);

    for _ in 0..b_theta {
        let g = gradient_at(&current, ctx, &r)?;
        let gmax = g.max_abs();
        if !(gmax > 0.0) || cell <= 0.0 {
            stalled = true;
            break;
        }
        let mut t = 0.1 * cell / gmax;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = project(&current, ctx, &g, t);
            let moved: f64 = ctx
                .support
                .iter()
                .enumerate()
                .map(|(k, &q)| {
                    g.azimuth[k] * (trial.azimuth[q] - current.azimuth[q])
                        + g.elevation[k] * (trial.elevation[q] - current.elevation[q])
                })
                .sum();
            if moved > 0.0 {
                let tr = ctx.residual(&trial)?;
                let tl = -ctx.kappa_hat * norm2(&tr);
                if tl >= like + ARMIJO_C * moved {
                    accepted = Some((trial, tr, tl));
                    break;
                }
            }
            t *= BACKTRACK;
        }
        match accepted {
            Some((trial, tr, tl)) => {
                current = trial;
                r = tr;
                like = tl;
                likelihoods.push(like);
                steps += 1;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    Ok(GridAscent {
        grid: current,
        likelihoods,
        steps,
        stalled,
    })
}

fn project(grid: &DynamicGrid, ctx: &GridLikelihoodContext, g: &GridGradient, t: f64) -> DynamicGrid {
    let mut out = grid.clone();
    for (k, &q) in ctx.support.iter().enumerate() {
        let (az0, el0) = (grid.base_azimuth[q], grid.base_elevation[q]);
        let az_lo = (az0 - grid.az_spacing).max(-std::f64::consts::PI);
        let az_hi = (az0 + grid.az_spacing).min(std::f64::consts::PI - 1e-12);
        out.azimuth[q] = (grid.azimuth[q] + t * g.azimuth[k]).clamp(az_lo, az_hi);
        out.elevation[q] = (grid.elevation[q] + t * g.elevation[k]).clamp(el0 - grid.el_spacing, el0 + grid.el_spacing);
    }
    out
}
