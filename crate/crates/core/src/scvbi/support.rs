use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CVector, RVector};

/// How elements with significant posterior energy are selected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportPolicy {
    /// Keep `|μₙ|²‖aₙ‖² > k/⟨κ⟩`, where `aₙ` is the n-th observation column.
    Threshold { k: f64 },
    /// Keep the fewest largest-energy elements holding this fraction of `‖μ‖²`.
    EnergyFraction { fraction: f64 },
}

impl Default for SupportPolicy {
    fn default() -> Self {
        SupportPolicy::Threshold { k: 2.5 }
    }
}

impl SupportPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SupportPolicy::Threshold { k } if !(k > 0.0 && k.is_finite()) => {
                Err(Error::input(format!("threshold multiple must be positive, got {k}")))
            }
            SupportPolicy::EnergyFraction { fraction } if !(fraction > 0.0 && fraction <= 1.0) => Err(Error::input(
                format!("energy fraction must lie in (0, 1], got {fraction}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Sorted, duplicate-free index set with the energy level that selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub indices: Vec<usize>,
    pub threshold: f64,
    pub policy: SupportPolicy,
    /// Set when nothing passed the policy and the single strongest element was
    /// kept instead.
    pub fallback: bool,
}

impl SupportEstimate {
    pub fn from_indices(mut indices: Vec<usize>, policy: SupportPolicy) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self {
            indices,
            threshold: 0.0,
            policy,
            fallback: false,
        }
    }

    pub fn full(n: usize) -> Self {
        Self::from_indices((0..n).collect(), SupportPolicy::default())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("support indices must be sorted and unique"));
        }
        if self.indices.last().is_some_and(|&i| i >= n) {
            return Err(Error::dim(format!("support index out of range for N = {n}")));
        }
        Ok(())
    }
}

/// Support selection for unit-norm columns.
pub fn estimate_support(mu: &CVector, kappa_mean: f64, policy: SupportPolicy) -> Result<SupportEstimate> {
    estimate_support_scaled(mu, kappa_mean, None, policy)
}

/// Support selection measuring each coefficient by the energy it contributes
/// to the observations, `|μₙ|²‖aₙ‖²`, so the threshold `k/⟨κ⟩` is compared
/// with noise on the same scale whatever the column norms. `None` means unit
/// norms.
pub fn estimate_support_scaled(
    mu: &CVector,
    kappa_mean: f64,
    col_norms2: Option<&RVector>,
    policy: SupportPolicy,
) -> Result<SupportEstimate> {
    if !(kappa_mean > 0.0) {
        return Err(Error::input("noise precision mean must be positive"));
    }
    policy.validate()?;
    if col_norms2.is_some_and(|w| w.len() != mu.len()) {
        return Err(Error::dim("column norms and mean lengths differ"));
    }
    let energy: Vec<f64> = mu
        .iter()
        .enumerate()
        .map(|(i, z)| z.norm_sqr() * col_norms2.map_or(1.0, |w| w[i]))
        .collect();
    let (mut indices, threshold) = match policy {
        SupportPolicy::Threshold { k } => {
            let eps = k / kappa_mean;
            ((0..energy.len()).filter(|&i| energy[i] > eps).collect::<Vec<_>>(), eps)
        }
        SupportPolicy::EnergyFraction { fraction } => {
            let total: f64 = energy.iter().sum();
            let mut order: Vec<usize> = (0..energy.len()).collect();
            order.sort_by(|&i, &j| energy[j].total_cmp(&energy[i]).then(i.cmp(&j)));
            let mut acc = 0.0;
            let mut picked = Vec::new();
            let mut eps = 0.0;
            if total > 0.0 {
                for &i in &order {
                    picked.push(i);
                    acc += energy[i];
                    eps = energy[i];
                    if acc >= fraction * total {
                        break;
                    }
                }
            }
            (picked, eps)
        }
    };
    let mut fallback = false;
    if indices.is_empty() && !energy.is_empty() {
        let best = (0..energy.len())
            .max_by(|&i, &j| energy[i].total_cmp(&energy[j]).then(j.cmp(&i)))
            .unwrap_or(0);
        indices.push(best);
        fallback = true;
    }
    indices.sort_unstable();
    Ok(SupportEstimate {
        indices,
        threshold,
        policy,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    fn energies(e: &[f64]) -> CVector {
        CVector::from_iterator(e.len(), e.iter().map(|&v| C64::new(v.sqrt(), 0.0)))
    }

    #[test]
    fn threshold_policy() {
        let s = estimate_support(
            &energies(&[100.0, 1e-4, 25.0]),
            1.0,
            SupportPolicy::Threshold { k: 2.5 },
        )
        .unwrap();
        assert_eq!(s.indices, vec![0, 2]);
        assert_eq!(s.threshold, 2.5);
        assert!(!s.fallback);
    }

    #[test]
    fn energy_policy() {
        let s = estimate_support(
            &energies(&[100.0, 1e-4, 25.0]),
            1.0,
            SupportPolicy::EnergyFraction { fraction: 0.95 },
        )
        .unwrap();
        assert_eq!(s.indices, vec![0, 2]);
    }

    #[test]
    fn zero_mean_falls_back() {
        for policy in [
            SupportPolicy::default(),
            SupportPolicy::EnergyFraction { fraction: 0.95 },
        ] {
            let s = estimate_support(&CVector::zeros(4), 1.0, policy).unwrap();
            assert_eq!(s.len(), 1);
            assert!(s.fallback);
        }
    }

    #[test]
    fn rejects_bad_policy() {
        let mu = CVector::zeros(2);
        assert!(estimate_support(&mu, 0.0, SupportPolicy::default()).is_err());
        assert!(estimate_support(&mu, 1.0, SupportPolicy::EnergyFraction { fraction: 1.5 }).is_err());
    }

    #[test]
    fn scaled_threshold_uses_observation_energy() {
        let mu = energies(&[1.0, 1.0, 0.01]);
        let norms = RVector::from_vec(vec![1.0, 4.0, 400.0]);
        let s = estimate_support_scaled(&mu, 1.0, Some(&norms), SupportPolicy::Threshold { k: 2.5 }).unwrap();
        assert_eq!(s.indices, vec![1, 2]);
        let unit = estimate_support_scaled(&mu, 1.0, Some(&RVector::from_element(3, 1.0)), SupportPolicy::default());
        assert_eq!(
            unit.unwrap(),
            estimate_support(&mu, 1.0, SupportPolicy::default()).unwrap()
        );
        assert!(estimate_support_scaled(&mu, 1.0, Some(&RVector::zeros(2)), SupportPolicy::default()).is_err());
    }

    #[test]
    fn from_indices_sorts_and_dedups() {
        let s = SupportEstimate::from_indices(vec![4, 1, 4, 2], SupportPolicy::default());
        assert_eq!(s.indices, vec![1, 2, 4]);
        s.validate(5).unwrap();
        assert!(s.validate(4).is_err());
    }
}
