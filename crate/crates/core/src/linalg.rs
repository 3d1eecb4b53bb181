//! Dense complex linear algebra helpers shared by the solver modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;
pub type RVector = DVector<f64>;

/// Squared Euclidean norm of a complex vector.
pub fn norm2(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `Re{uᴴ v}`.
pub fn re_dot(u: &CVector, v: &CVector) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

/// Squared norm of every column of `a`.
pub fn column_norms2(a: &CMatrix) -> RVector {
    RVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum()))
}

pub fn all_finite(v: &CVector) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Outcome of a Hermitian positive-definite solve.
#[derive(Debug, Clone)]
pub struct HermitianSolve {
    pub solution: CVector,
    /// Diagonal loading that had to be added before the factorization succeeded.
    pub jitter: f64,
    /// Ratio of the largest to the smallest squared Cholesky pivot; a cheap
    /// lower bound on the condition number.
    pub condition_estimate: f64,
}

/// Solves `M z = rhs` for Hermitian positive-definite `M` via Cholesky.
///
/// When the factorization fails, `jitter_scale · trace(M)/n` is added to the
/// diagonal (growing tenfold per retry, up to six retries).
pub fn solve_hermitian(matrix: DMatrix<C64>, rhs: &CVector, jitter_scale: f64) -> Option<HermitianSolve> {
    let n = matrix.nrows();
    if n == 0 {
        return Some(HermitianSolve {
            solution: CVector::zeros(0),
            jitter: 0.0,
            condition_estimate: 1.0,
        });
    }
    let mean_diag = (0..n).map(|i| matrix[(i, i)].re).sum::<f64>() / n as f64;
    let mut jitter = 0.0;
    let mut scale = jitter_scale;
    for _ in 0..7 {
        let mut m = matrix.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += C64::new(jitter, 0.0);
            }
        }
        if let Some(chol) = Cholesky::<C64, Dyn>::new(m) {
            let l = chol.l_dirty();
            let pivots = (0..n).map(|i| l[(i, i)].re * l[(i, i)].re);
            let (lo, hi) = pivots.fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
            let solution = chol.solve(rhs);
            if all_finite(&solution) {
                return Some(HermitianSolve {
                    solution,
                    jitter,
                    condition_estimate: hi / lo,
                });
            }
        }
        jitter = scale * mean_diag.abs().max(f64::MIN_POSITIVE);
        scale *= 10.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_known_solution() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(4.0, 0.0),
                C64::new(1.0, 1.0),
                C64::new(1.0, -1.0),
                C64::new(3.0, 0.0),
            ],
        );
        let x = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.25)]);
        let rhs = &m * &x;
        let out = solve_hermitian(m, &rhs, 1e-10).unwrap();
        assert_eq!(out.jitter, 0.0);
        assert!((out.solution - x).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_gets_loaded() {
        let m = CMatrix::from_element(3, 3, C64::new(1.0, 0.0));
        let rhs = CVector::from_element(3, C64::new(1.0, 0.0));
        let out = solve_hermitian(m, &rhs, 1e-10).unwrap();
        assert!(out.jitter > 0.0);
        assert!(all_finite(&out.solution));
    }
}
