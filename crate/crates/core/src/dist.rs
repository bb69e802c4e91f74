//! Action distributions with closed-form log-probability and entropy gradients.
//!
//! Gradients are taken with respect to the raw network outputs: logits for the
//! categorical, and the pre-softplus parameters for the Beta.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::{digamma, ln_gamma};

/// Beta samples are kept this far inside (0, 1) so their log-density stays finite.
pub const BETA_EDGE: f64 = 1e-6;

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Log-probability and entropy of a categorical, with their gradients w.r.t. the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalTerms {
    pub logp: f64,
    pub entropy: f64,
    pub dlogp: Vec<f64>,
    pub dentropy: Vec<f64>,
}

pub fn categorical_terms(logits: &[f64], action: usize) -> CategoricalTerms {
    let lp = log_softmax(logits);
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let entropy = -p.iter().zip(&lp).map(|(p, l)| p * l).sum::<f64>();
    let dlogp = p
        .iter()
        .enumerate()
        .map(|(k, pk)| if k == action { 1.0 - pk } else { -pk })
        .collect();
    let dentropy = p
        .iter()
        .zip(&lp)
        .map(|(pk, lk)| -pk * (lk + entropy))
        .collect();
    CategoricalTerms {
        logp: lp[action],
        entropy,
        dlogp,
        dentropy,
    }
}

pub fn sample_categorical(logits: &[f64], rng: &mut impl Rng) -> usize {
    let lp = log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return k;
        }
    }
    lp.len() - 1
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Second derivative of `ln Γ`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    // 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9) + 5/(66x^11)
    acc + 1.0 / x
        + x2 / 2.0
        + x2 / x
            * (1.0 / 6.0
                - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * 5.0 / 66.0))))
}

/// `(α, β)` from raw outputs, both at least 1.
pub fn beta_params(u: f64, v: f64) -> (f64, f64) {
    (1.0 + softplus(u), 1.0 + softplus(v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaTerms {
    pub logp: f64,
    pub entropy: f64,
    /// Gradient w.r.t. the raw `(u, v)`.
    pub dlogp: [f64; 2],
    pub dentropy: [f64; 2],
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn beta_terms(u: f64, v: f64, x: f64) -> BetaTerms {
    let (a, b) = beta_params(u, v);
    let (da, db) = (sigmoid(u), sigmoid(v));
    let x = x.clamp(BETA_EDGE, 1.0 - BETA_EDGE);
    let (pa, pb, pab) = (digamma(a), digamma(b), digamma(a + b));
    let (ta, tb, tab) = (trigamma(a), trigamma(b), trigamma(a + b));
    let logp = (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b);
    let entropy = ln_beta(a, b) - (a - 1.0) * pa - (b - 1.0) * pb + (a + b - 2.0) * pab;
    let dlogp_a = x.ln() - pa + pab;
    let dlogp_b = (-x).ln_1p() - pb + pab;
    let dh_a = -(a - 1.0) * ta + (a + b - 2.0) * tab;
    let dh_b = -(b - 1.0) * tb + (a + b - 2.0) * tab;
    BetaTerms {
        logp,
        entropy,
        dlogp: [dlogp_a * da, dlogp_b * db],
        dentropy: [dh_a * da, dh_b * db],
    }
}

pub fn beta_sample(u: f64, v: f64, rng: &mut impl Rng) -> f64 {
    let (a, b) = beta_params(u, v);
    let d = Beta::new(a, b).expect("alpha, beta >= 1");
    d.sample(rng).clamp(BETA_EDGE, 1.0 - BETA_EDGE)
}

/// Mode of the Beta; the uniform case maps to the midpoint.
pub fn beta_mode(u: f64, v: f64) -> f64 {
    let (a, b) = beta_params(u, v);
    let denom = a + b - 2.0;
    if denom < 1e-12 {
        0.5
    } else {
        ((a - 1.0) / denom).clamp(BETA_EDGE, 1.0 - BETA_EDGE)
    }
}
