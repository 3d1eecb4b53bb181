use crate::error::{Error, Result};
use crate::linalg::{column_norms2, re_dot, CMatrix, CVector, RVector, C64};

/// The Gaussian mean objective `φ(u) = uᴴWu − 2Re{uᴴb}` with
/// `W = diag(⟨ρ⟩) + ⟨κ⟩AᴴA` and `b = ⟨κ⟩Aᴴy`, applied without forming `W`.
#[derive(Debug, Clone)]
pub struct QuadraticSurrogate<'a> {
    sensing: &'a CMatrix,
    pub rho_mean: RVector,
    pub kappa_mean: f64,
    pub b: CVector,
    col_norms2: RVector,
}

impl<'a> QuadraticSurrogate<'a> {
    pub fn new(sensing: &'a CMatrix, y: &CVector, rho_mean: RVector, kappa_mean: f64) -> Result<Self> {
        let norms = column_norms2(sensing);
        Self::with_column_norms(sensing, y, rho_mean, kappa_mean, norms)
    }

    /// As [`QuadraticSurrogate::new`] with precomputed squared column norms.
    pub fn with_column_norms(
        sensing: &'a CMatrix,
        y: &CVector,
        rho_mean: RVector,
        kappa_mean: f64,
        col_norms2: RVector,
    ) -> Result<Self> {
        let (m, n) = sensing.shape();
        if y.len() != m || rho_mean.len() != n || col_norms2.len() != n {
            return Err(Error::dim(format!(
                "sensing is {m}×{n}, y has {}, ⟨ρ⟩ has {}, norms have {}",
                y.len(),
                rho_mean.len(),
                col_norms2.len()
            )));
        }
        if !(kappa_mean > 0.0) || rho_mean.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::State("precision means must be positive".into()));
        }
        let b = sensing.ad_mul(y) * C64::new(kappa_mean, 0.0);
        Ok(Self {
            sensing,
            rho_mean,
            kappa_mean,
            b,
            col_norms2,
        })
    }

    pub fn sensing(&self) -> &CMatrix {
        self.sensing
    }

    pub fn column_norms2(&self) -> &RVector {
        &self.col_norms2
    }

    pub fn n(&self) -> usize {
        self.rho_mean.len()
    }

    /// `W u`, two products with `A`.
    pub fn apply(&self, u: &CVector) -> CVector {
        let au = self.sensing * u;
        let mut out = self.sensing.ad_mul(&au);
        let k = self.kappa_mean;
        for ((o, ui), &r) in out.iter_mut().zip(u.iter()).zip(self.rho_mean.iter()) {
            *o = *o * k + *ui * r;
        }
        out
    }

    /// Diagonal of `W`.
    pub fn diag(&self) -> RVector {
        self.rho_mean.zip_map(&self.col_norms2, |r, c| r + self.kappa_mean * c)
    }

    pub fn objective(&self, u: &CVector) -> f64 {
        let wu = self.apply(u);
        self.objective_from(u, &wu)
    }

    /// `φ(u)` given a precomputed `W u`.
    pub fn objective_from(&self, u: &CVector, wu: &CVector) -> f64 {
        re_dot(u, wu) - 2.0 * re_dot(u, &self.b)
    }

    /// `W u − b`. The gradient of `φ` with respect to the stacked real and
    /// imaginary parts is twice this vector.
    pub fn gradient(&self, u: &CVector) -> CVector {
        self.apply(u) - &self.b
    }

    /// Dense `W` restricted to `indices` (rows and columns).
    pub fn restricted_matrix(&self, indices: &[usize]) -> CMatrix {
        let cols = self.sensing.select_columns(indices);
        let mut w = cols.ad_mul(&cols) * C64::new(self.kappa_mean, 0.0);
        for (i, &q) in indices.iter().enumerate() {
            w[(i, i)] += C64::new(self.rho_mean[q], 0.0);
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_matrix(m: usize, n: usize, rng: &mut impl Rng) -> CMatrix {
        CMatrix::from_fn(m, n, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn random_vector(n: usize, rng: &mut impl Rng) -> CVector {
        CVector::from_fn(n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn apply_matches_dense_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(6, 10, &mut rng);
        let y = random_vector(6, &mut rng);
        let rho = RVector::from_fn(10, |_, _| rng.random::<f64>() + 0.1);
        let s = QuadraticSurrogate::new(&a, &y, rho.clone(), 2.5).unwrap();
        let all: Vec<usize> = (0..10).collect();
        let w = s.restricted_matrix(&all);
        let u = random_vector(10, &mut rng);
        assert!((s.apply(&u) - &w * &u).norm() < 1e-12);
        for i in 0..10 {
            assert!((s.diag()[i] - w[(i, i)].re).abs() < 1e-12);
        }
        // Hermitian positive definite.
        assert!((w.adjoint() - &w).norm() < 1e-12);
        assert!(nalgebra::Cholesky::new(w).is_some());
    }

    #[test]
    fn objective_expands_the_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(4, 7, &mut rng);
        let y = random_vector(4, &mut rng);
        let rho = RVector::from_element(7, 0.7);
        let s = QuadraticSurrogate::new(&a, &y, rho.clone(), 1.5).unwrap();
        let u = random_vector(7, &mut rng);
        // κ‖y − Au‖² + Σρ|u|² − κ‖y‖² equals φ(u).
        let direct = 1.5 * norm2(&(&y - &a * &u)) + 0.7 * norm2(&u) - 1.5 * norm2(&y);
        assert!((s.objective(&u) - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(5, 8, &mut rng);
        let y = random_vector(5, &mut rng);
        let rho = RVector::from_fn(8, |_, _| rng.random::<f64>() + 0.2);
        let s = QuadraticSurrogate::new(&a, &y, rho, 2.0).unwrap();
        let u = random_vector(8, &mut rng);
        let g = s.gradient(&u) * C64::new(2.0, 0.0);
        let h = 1e-6;
        for i in 0..8 {
            for (dir, part) in [(C64::new(h, 0.0), g[i].re), (C64::new(0.0, h), g[i].im)] {
                let mut up = u.clone();
                up[i] += dir;
                let mut dn = u.clone();
                dn[i] -= dir;
                let fd = (s.objective(&up) - s.objective(&dn)) / (2.0 * h);
                assert!((fd - part).abs() <= 1e-6 * part.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let a = CMatrix::zeros(3, 4);
        let y = CVector::zeros(2);
        assert!(QuadraticSurrogate::new(&a, &y, RVector::from_element(4, 1.0), 1.0).is_err());
        let y = CVector::zeros(3);
        assert!(QuadraticSurrogate::new(&a, &y, RVector::from_element(4, 0.0), 1.0).is_err());
    }
}
