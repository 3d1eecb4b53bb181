//! Scalar (N = M = 1) free energy against direct numerical integration of
//! every factor density, with no closed-form moments.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use scvbi::prior::default_hyperparams;
use scvbi::scvbi::{free_energy, VariationalState};
use scvbi::ssi::BernoulliMessage;
use scvbi::{CMatrix, CVector, RVector, C64};

/// `∫ f(v) Gamma(v; shape, rate) dv` via the substitution `v = eᵗ` and the
/// trapezoid rule, which converges spectrally for these smooth integrands.
fn gamma_expectation(shape: f64, rate: f64, f: impl Fn(f64) -> f64) -> f64 {
    let ln_norm = shape * rate.ln() - ln_gamma(shape);
    let (lo, hi, steps) = (-60.0, 8.0 - rate.ln(), 200_000);
    let h = (hi - lo) / steps as f64;
    (0..=steps)
        .map(|i| {
            let t = lo + i as f64 * h;
            let v = t.exp();
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            w * f(v) * (ln_norm + shape * t - rate * v).exp()
        })
        .sum::<f64>()
        * h
}

/// `∫ f(x) CN(x; mean, var) dx` over a square grid of ±12 standard deviations.
fn complex_normal_expectation(mean: C64, var: f64, f: impl Fn(C64) -> f64) -> f64 {
    let s = (var / 2.0).sqrt();
    let steps = 600;
    let h = 24.0 * s / steps as f64;
    let mut acc = 0.0;
    for i in 0..=steps {
        for j in 0..=steps {
            let dx = -12.0 * s + i as f64 * h;
            let dy = -12.0 * s + j as f64 * h;
            let x = mean + C64::new(dx, dy);
            let density = (-(dx * dx + dy * dy) / var).exp() / (PI * var);
            acc += f(x) * density;
        }
    }
    acc * h * h
}

fn ln_gamma_density(v: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * v.ln() - rate * v
}

#[test]
fn scalar_free_energy_matches_quadrature() {
    let hyper = default_hyperparams(1);
    let a = C64::new(1.3, 0.2);
    let y = C64::new(0.9, -0.5);
    let lam: f64 = 0.2;
    let state = VariationalState {
        mu: CVector::from_element(1, C64::new(0.7, -0.4)),
        sigma2: RVector::from_element(1, 0.3),
        a_tilde: RVector::from_element(1, 2.5),
        b_tilde: RVector::from_element(1, 1.7),
        lambda_tilde: vec![0.35],
        c_tilde: 3.2,
        d_tilde: 1.4,
    };
    let (mu, s2) = (state.mu[0], state.sigma2[0]);
    let (at, bt, lt, ct, dt) = (
        state.a_tilde[0],
        state.b_tilde[0],
        state.lambda_tilde[0],
        state.c_tilde,
        state.d_tilde,
    );

    let e_rho = gamma_expectation(at, bt, |r| r);
    let e_ln_rho = gamma_expectation(at, bt, f64::ln);
    let e_kappa = gamma_expectation(ct, dt, |k| k);
    let e_ln_kappa = gamma_expectation(ct, dt, f64::ln);
    let e_x2 = complex_normal_expectation(mu, s2, |x| x.norm_sqr());
    let e_resid = complex_normal_expectation(mu, s2, |x| (y - a * x).norm_sqr());

    // ⟨ln q⟩
    let ln_qx = complex_normal_expectation(mu, s2, |x| -(x - mu).norm_sqr() / s2 - (PI * s2).ln());
    let ln_qrho = gamma_expectation(at, bt, |r| ln_gamma_density(r, at, bt));
    let ln_qkappa = gamma_expectation(ct, dt, |k| ln_gamma_density(k, ct, dt));
    let ln_qs = lt * lt.ln() + (1.0 - lt) * (1.0 - lt).ln();
    let ln_q = ln_qx + ln_qrho + ln_qkappa + ln_qs;

    // ⟨ln p̂⟩
    let ln_py = e_ln_kappa - PI.ln() - e_kappa * e_resid;
    let ln_px = e_ln_rho - PI.ln() - e_rho * e_x2;
    let ln_prho = lt * gamma_expectation(at, bt, |r| ln_gamma_density(r, hyper.a[0], hyper.b[0]))
        + (1.0 - lt) * gamma_expectation(at, bt, |r| ln_gamma_density(r, hyper.a_bar[0], hyper.b_bar[0]));
    let ln_ps = lt * lam.ln() + (1.0 - lt) * (1.0 - lam).ln();
    let ln_pkappa = gamma_expectation(ct, dt, |k| ln_gamma_density(k, hyper.c, hyper.d));
    let ln_p = ln_py + ln_px + ln_prho + ln_ps + ln_pkappa;

    let oracle = ln_q - ln_p;
    let sensing = CMatrix::from_element(1, 1, a);
    let f = free_energy(
        &state,
        &sensing,
        &CVector::from_element(1, y),
        &hyper,
        &BernoulliMessage::new(vec![lam]).unwrap(),
    )
    .unwrap();
    assert!((f - oracle).abs() < 1e-6, "closed form {f}, quadrature {oracle}");
}
