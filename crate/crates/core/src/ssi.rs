//! Sum-product message passing over the support prior.
//!
//! Sites live on an `n1 × n2` grid with flat index `i1 + n1·i2`. Row
//! transitions couple `(i1, i2 − 1) → (i1, i2)`, column transitions couple
//! `(i1 − 1, i2) → (i1, i2)`, and the first site carries the unary `p(s) = λ`.
//! Every message is stored as the probability it assigns to the active state.

use crate::error::{Error, Result};
use crate::prior::{Markov2d, SupportPrior};

pub(crate) const PROB_FLOOR: f64 = 1e-12;

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Per-element probability of the active state.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliMessage {
    pub active_prob: Vec<f64>,
}

impl BernoulliMessage {
    pub fn new(active_prob: Vec<f64>) -> Result<Self> {
        if active_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Message("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { active_prob })
    }

    pub fn uniform(n: usize, p: f64) -> Self {
        Self {
            active_prob: vec![p; n],
        }
    }

    pub fn len(&self) -> usize {
        self.active_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_prob.is_empty()
    }
}

/// Directional messages into every site: from the left (previous along the
/// row chain), right, top (previous along the column chain) and bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGrid {
    pub n1: usize,
    pub n2: usize,
    pub gamma_l: Vec<f64>,
    pub gamma_r: Vec<f64>,
    pub gamma_t: Vec<f64>,
    pub gamma_b: Vec<f64>,
}

impl MessageGrid {
    /// Uninformative interior messages; the first site's left message holds
    /// the unary prior.
    pub fn initial(n1: usize, n2: usize, lambda: f64) -> Self {
        let n = n1 * n2;
        let mut gamma_l = vec![0.5; n];
        if n > 0 {
            gamma_l[0] = lambda;
        }
        Self {
            n1,
            n2,
            gamma_l,
            gamma_r: vec![0.5; n],
            gamma_t: vec![0.5; n],
            gamma_b: vec![0.5; n],
        }
    }

    /// Extrinsic output: the normalized product of the four incoming messages.
    pub fn output(&self) -> BernoulliMessage {
        let active_prob = (0..self.n1 * self.n2)
            .map(|q| {
                let on = self.gamma_l[q] * self.gamma_r[q] * self.gamma_t[q] * self.gamma_b[q];
                let off = (1.0 - self.gamma_l[q])
                    * (1.0 - self.gamma_r[q])
                    * (1.0 - self.gamma_t[q])
                    * (1.0 - self.gamma_b[q]);
                if on + off > 0.0 {
                    on / (on + off)
                } else {
                    0.5
                }
            })
            .collect();
        BernoulliMessage { active_prob }
    }
}

/// With no coupling the extrinsic message is the prior itself.
pub fn ssi_iid(prior: &SupportPrior) -> Result<BernoulliMessage> {
    match prior {
        SupportPrior::Iid { lambda } => BernoulliMessage::new(lambda.clone()),
        SupportPrior::Markov2d(_) => Err(Error::input("ssi_iid requires an i.i.d. prior")),
    }
}

/// Dispatches on the prior kind.
pub fn ssi(input: &BernoulliMessage, prior: &SupportPrior, sweeps: usize, damping: f64) -> Result<BernoulliMessage> {
    match prior {
        SupportPrior::Iid { .. } => ssi_iid(prior),
        SupportPrior::Markov2d(m) => ssi_markov2d(input, m, sweeps, damping),
    }
}

/// Loopy sum-product over the 2D Markov prior; exact after one round on
/// chains.
pub fn ssi_markov2d(
    input: &BernoulliMessage,
    prior: &Markov2d,
    sweeps: usize,
    damping: f64,
) -> Result<BernoulliMessage> {
    Ok(ssi_markov2d_with_diagnostics(input, prior, sweeps, damping)?.0)
}

/// As [`ssi_markov2d`], also returning the final message grid and the largest
/// absolute message change in the last round.
pub fn ssi_markov2d_with_diagnostics(
    input: &BernoulliMessage,
    prior: &Markov2d,
    sweeps: usize,
    damping: f64,
) -> Result<(BernoulliMessage, MessageGrid, f64)> {
    prior.validate()?;
    let (n1, n2) = (prior.n1, prior.n2);
    if input.len() != n1 * n2 {
        return Err(Error::dim(format!(
            "input message has {} entries, grid has {}",
            input.len(),
            n1 * n2
        )));
    }
    if sweeps == 0 {
        return Err(Error::input("at least one sweep round is required"));
    }
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::input(format!("damping must lie in [0, 1), got {damping}")));
    }
    let pin: Vec<f64> = input.active_prob.iter().map(|&p| clamp_prob(p)).collect();
    let mut g = MessageGrid::initial(n1, n2, prior.lambda);

    let row = Kernel {
        p01: prior.p01_row,
        p10: prior.p10_row,
    };
    let col = Kernel {
        p01: prior.p01_col,
        p10: prior.p10_col,
    };
    let idx = |i1: usize, i2: usize| i1 + n1 * i2;
    let mut change = 0.0f64;

    for round in 0..sweeps {
        let d = if round == 0 { 0.0 } else { damping };
        change = 0.0;
        let mut set = |slot: &mut f64, new: f64| {
            let v = (1.0 - d) * new + d * *slot;
            change = change.max((v - *slot).abs());
            *slot = v;
        };

        // Left-to-right: message from (i1, i2-1) into (i1, i2).
        for i2 in 1..n2 {
            for i1 in 0..n1 {
                let a = idx(i1, i2 - 1);
                let (m1, m0) = belief(&pin, &g, a, Exclude::Right);
                set(&mut g.gamma_l[idx(i1, i2)], row.forward(m1, m0));
            }
        }
        // Right-to-left.
        for i2 in (0..n2.saturating_sub(1)).rev() {
            for i1 in 0..n1 {
                let c = idx(i1, i2 + 1);
                let (m1, m0) = belief(&pin, &g, c, Exclude::Left);
                set(&mut g.gamma_r[idx(i1, i2)], row.backward(m1, m0));
            }
        }
        // Top-to-bottom: message from (i1-1, i2) into (i1, i2).
        for i1 in 1..n1 {
            for i2 in 0..n2 {
                let a = idx(i1 - 1, i2);
                let (m1, m0) = belief(&pin, &g, a, Exclude::Bottom);
                set(&mut g.gamma_t[idx(i1, i2)], col.forward(m1, m0));
            }
        }
        // Bottom-to-top.
        for i1 in (0..n1.saturating_sub(1)).rev() {
            for i2 in 0..n2 {
                let c = idx(i1 + 1, i2);
                let (m1, m0) = belief(&pin, &g, c, Exclude::Top);
                set(&mut g.gamma_b[idx(i1, i2)], col.backward(m1, m0));
            }
        }
    }
    let out = g.output();
    Ok((out, g, change))
}

#[derive(Clone, Copy)]
struct Kernel {
    p01: f64,
    p10: f64,
}

impl Kernel {
    /// Message to the successor given the predecessor's cavity belief.
    fn forward(&self, m1: f64, m0: f64) -> f64 {
        let p11 = 1.0 - self.p10;
        normalize_ratio(p11 * m1 + self.p01 * m0, m1 + m0)
    }

    /// Message to the predecessor given the successor's cavity belief.
    fn backward(&self, m1: f64, m0: f64) -> f64 {
        let p11 = 1.0 - self.p10;
        let p00 = 1.0 - self.p01;
        let on = p11 * m1 + self.p10 * m0;
        let off = self.p01 * m1 + p00 * m0;
        normalize_ratio(on, on + off)
    }
}

fn normalize_ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Exclude {
    Left,
    Right,
    Top,
    Bottom,
}

/// Unnormalized belief of site `q` leaving out the message arriving from the
/// side the outgoing message is headed to.
fn belief(pin: &[f64], g: &MessageGrid, q: usize, skip: Exclude) -> (f64, f64) {
    let mut on = pin[q];
    let mut off = 1.0 - pin[q];
    for (side, gamma) in [
        (Exclude::Left, g.gamma_l[q]),
        (Exclude::Right, g.gamma_r[q]),
        (Exclude::Top, g.gamma_t[q]),
        (Exclude::Bottom, g.gamma_b[q]),
    ] {
        if side != skip {
            on *= gamma;
            off *= 1.0 - gamma;
        }
    }
    // Rescale so long products never underflow.
    let s = on + off;
    if s > 0.0 {
        (on / s, off / s)
    } else {
        (0.5, 0.5)
    }
}

const BRUTE_FORCE_LIMIT: usize = 20;

/// Exact extrinsic marginals `p(s_n = 1 | inputs at every other site)` by
/// enumerating all support configurations.
pub fn brute_force_marginals(input: &BernoulliMessage, prior: &SupportPrior) -> Result<BernoulliMessage> {
    let n = prior.len();
    if input.len() != n {
        return Err(Error::dim(format!(
            "input message has {} entries, prior has {n}",
            input.len()
        )));
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{n} sites exceeds the enumeration limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    let pin = &input.active_prob;
    let mut on = vec![0.0; n];
    let mut total = vec![0.0; n];
    for mask in 0u32..(1u32 << n) {
        let s = |q: usize| mask >> q & 1 == 1;
        let joint = prior_weight(prior, &s);
        if joint == 0.0 {
            continue;
        }
        let lik: Vec<f64> = (0..n).map(|q| if s(q) { pin[q] } else { 1.0 - pin[q] }).collect();
        for q in 0..n {
            let w = joint
                * lik
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != q)
                    .map(|(_, l)| l)
                    .product::<f64>();
            total[q] += w;
            if s(q) {
                on[q] += w;
            }
        }
    }
    let active_prob = on
        .iter()
        .zip(&total)
        .map(|(&a, &t)| if t > 0.0 { a / t } else { 0.5 })
        .collect();
    Ok(BernoulliMessage { active_prob })
}

/// Unnormalized prior weight of a configuration: the unary at the first site
/// times one transition factor per grid edge.
fn prior_weight(prior: &SupportPrior, s: &dyn Fn(usize) -> bool) -> f64 {
    let bern = |p: f64, on: bool| if on { p } else { 1.0 - p };
    match prior {
        SupportPrior::Iid { lambda } => lambda.iter().enumerate().map(|(q, &l)| bern(l, s(q))).product(),
        SupportPrior::Markov2d(m) => {
            let n1 = m.n1;
            let mut w = bern(m.lambda, s(0));
            for i2 in 0..m.n2 {
                for i1 in 0..n1 {
                    let q = i1 + n1 * i2;
                    if i2 > 0 {
                        w *= bern(m.row_active_given(s(q - n1)), s(q));
                    }
                    if i1 > 0 {
                        w *= bern(m.col_active_given(s(q - 1)), s(q));
                    }
                }
            }
            w
        }
    }
}
