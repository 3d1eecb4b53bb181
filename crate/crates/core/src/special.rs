//! Scalar special functions used by the variational updates.

/// Digamma function ψ(x) = d/dx ln Γ(x) for x > 0.
///
/// Shifts the argument above 10 with ψ(x) = ψ(x + 1) − 1/x, then sums the
/// asymptotic series through the x⁻¹⁴ term. Absolute error is below 1e-12
/// for x ≥ 1e-6. Returns NaN for non-positive or non-finite input.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // B2k / (2k) for k = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    shift + z.ln() - 0.5 * inv - series
}

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Numerically stable logistic function.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `p · ln q` with the convention `0 · ln q = 0`.
pub fn xlny(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * q.ln()
    }
}

/// Bernoulli entropy term `p ln p + (1 − p) ln(1 − p)` (negative entropy).
pub fn bernoulli_neg_entropy(p: f64) -> f64 {
    xlny(p, p) + xlny(1.0 - p, 1.0 - p)
}
