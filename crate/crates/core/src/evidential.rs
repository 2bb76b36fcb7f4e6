//! Dirichlet-side mathematics: the evidence to alpha to expected
//! probability pipeline, belief and uncertainty masses, Dirichlet KL
//! divergence, and the sampling oracles used by tests.
//!
//! The pipeline is: pre-evidence `e~` (unconstrained reals, the latent Z)
//! maps through SoftPlus to evidence `e >= 0`, then `alpha_j = e_j + eta`
//! (vanilla EDL fixes eta = 1), `alpha_0 = sum alpha_j`, expected
//! probabilities `pi_j = alpha_j / alpha_0`, belief masses
//! `b_j = (alpha_j - 1)/alpha_0` and uncertainty mass `u = C/alpha_0`.
//!
//! Every function here is pure given its inputs (samplers take an explicit
//! seeded generator). A thread-local call counter over the pipeline
//! operations lets tests assert that purely probabilistic code paths never
//! touch this module.

use std::cell::Cell;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EvibError, Result};
use crate::special::{digamma, log_gamma};

/// Default evidence offset: vanilla EDL's `alpha_j = e_j + 1`.
pub const DEFAULT_ETA: f64 = 1.0;

thread_local! {
    static PIPELINE_CALLS: Cell<u64> = const { Cell::new(0) };
}

fn bump_probe() {
    PIPELINE_CALLS.with(|c| c.set(c.get() + 1));
}

/// Number of pipeline-operation calls on this thread since the last reset.
/// Test probe: lets callers assert that a code path (e.g. a plain
/// maximum-a-posteriori softmax model) never enters the evidential
/// pipeline.
pub fn pipeline_call_count() -> u64 {
    PIPELINE_CALLS.with(|c| c.get())
}

/// Resets the thread-local pipeline call counter.
pub fn reset_pipeline_call_count() {
    PIPELINE_CALLS.with(|c| c.set(0));
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Unconstrained per-class pre-evidence vector `e~` (the latent Z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreEvidence {
    /// One unconstrained real per class.
    pub values: Vec<f64>,
}

impl PreEvidence {
    pub fn new(values: Vec<f64>) -> Self {
        PreEvidence { values }
    }

    /// Class count C.
    pub fn class_count(&self) -> usize {
        self.values.len()
    }
}

/// Dirichlet concentration vector with its cached sum and the evidence
/// offset used at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletBelief {
    alpha: Vec<f64>,
    alpha0: f64,
    eta: f64,
}

impl DirichletBelief {
    /// Wraps an existing concentration vector. Every entry must be
    /// positive and at least `eta` (evidence non-negativity).
    pub fn from_alpha(alpha: Vec<f64>, eta: f64) -> Result<Self> {
        if eta <= 0.0 {
            return Err(EvibError::Config(format!("eta must be positive, got {eta}")));
        }
        if alpha.is_empty() {
            return Err(EvibError::Empty("alpha vector is empty".into()));
        }
        for (j, &a) in alpha.iter().enumerate() {
            if !a.is_finite() || a <= 0.0 {
                return Err(EvibError::Domain(format!(
                    "alpha entries must be positive and finite; alpha[{j}] = {a}"
                )));
            }
            // Tiny slack absorbs SoftPlus rounding at strongly negative
            // pre-evidence.
            if a < eta - 1e-9 {
                return Err(EvibError::Domain(format!(
                    "alpha[{j}] = {a} is below the evidence offset eta = {eta}"
                )));
            }
        }
        let alpha0 = alpha.iter().sum();
        Ok(DirichletBelief { alpha, alpha0, eta })
    }

    /// Concentration parameters.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Cached concentration sum `alpha_0`.
    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    /// Evidence offset used at construction.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Class count C.
    pub fn class_count(&self) -> usize {
        self.alpha.len()
    }
}

/// Subjective-logic masses derived from a Dirichlet belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefMass {
    /// Per-class belief `b_j = (alpha_j - 1)/alpha_0`. Reported unclamped;
    /// entries can be slightly negative when the belief was built with
    /// eta < 1.
    pub beliefs: Vec<f64>,
    /// Uncertainty mass `u = C/alpha_0`, in (0, 1] when all alpha_j >= 1.
    pub uncertainty: f64,
}

/// Integer class target with on-demand one-hot encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHotTarget {
    index: usize,
    class_count: usize,
}

impl OneHotTarget {
    /// `index` must lie in `[0, class_count)`.
    pub fn new(index: usize, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(EvibError::Input("class_count must be positive".into()));
        }
        if index >= class_count {
            return Err(EvibError::Input(format!(
                "target index {index} outside [0, {class_count})"
            )));
        }
        Ok(OneHotTarget { index, class_count })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// One-hot vector y with exactly one unit entry.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.class_count];
        y[self.index] = 1.0;
        y
    }
}

// ---------------------------------------------------------------------------
// Pipeline operations
// ---------------------------------------------------------------------------

/// Maps pre-evidence to Dirichlet parameters:
/// `alpha_j = softplus(pre_j) + eta`.
pub fn alpha_from_pre_evidence(pre: &PreEvidence, eta: f64) -> Result<DirichletBelief> {
    bump_probe();
    if eta <= 0.0 {
        return Err(EvibError::Config(format!("eta must be positive, got {eta}")));
    }
    if let Some((j, &v)) = pre.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(EvibError::Input(format!(
            "pre-evidence must be finite; entry {j} is {v}"
        )));
    }
    if pre.values.is_empty() {
        return Err(EvibError::Empty("pre-evidence vector is empty".into()));
    }
    let alpha: Vec<f64> = pre
        .values
        .iter()
        .map(|&v| crate::autodiff::softplus_scalar(v) + eta)
        .collect();
    let alpha0 = alpha.iter().sum();
    Ok(DirichletBelief { alpha, alpha0, eta })
}

/// Expected categorical probabilities `pi_j = alpha_j / alpha_0`; sums to
/// one, and its argmax is the predicted class.
pub fn expected_probabilities(belief: &DirichletBelief) -> Vec<f64> {
    bump_probe();
    belief.alpha.iter().map(|&a| a / belief.alpha0).collect()
}

/// Belief masses and uncertainty mass for a Dirichlet belief.
pub fn belief_and_uncertainty(belief: &DirichletBelief) -> BeliefMass {
    bump_probe();
    let c = belief.class_count() as f64;
    BeliefMass {
        beliefs: belief.alpha.iter().map(|&a| (a - 1.0) / belief.alpha0).collect(),
        uncertainty: c / belief.alpha0,
    }
}

/// Removes the evidence for the target class:
/// `alpha~ = y + (1 - y) (*) alpha`. The target coordinate becomes exactly
/// one; the rest are untouched.
pub fn evidence_removal(belief: &DirichletBelief, target: &OneHotTarget) -> Vec<f64> {
    bump_probe();
    let mut out = belief.alpha.clone();
    out[target.index()] = 1.0;
    out
}

/// KL divergence between two Dirichlet distributions in closed form:
/// `lnG(a0_p) - sum lnG(a_p) - lnG(a0_q) + sum lnG(a_q)
///  + sum (a_p - a_q)(psi(a_p) - psi(a0_p))`.
pub fn dirichlet_kl(p_alpha: &[f64], q_alpha: &[f64]) -> Result<f64> {
    bump_probe();
    if p_alpha.len() != q_alpha.len() {
        return Err(EvibError::Domain(format!(
            "alpha vectors differ in length: {} vs {}",
            p_alpha.len(),
            q_alpha.len()
        )));
    }
    if p_alpha.is_empty() {
        return Err(EvibError::Domain("alpha vectors are empty".into()));
    }
    for (j, &a) in p_alpha.iter().chain(q_alpha.iter()).enumerate() {
        if !(a > 0.0) {
            return Err(EvibError::Domain(format!(
                "alpha entries must be positive; flat entry {j} is {a}"
            )));
        }
    }
    let p0: f64 = p_alpha.iter().sum();
    let q0: f64 = q_alpha.iter().sum();
    let psi_p0 = digamma(p0)?;
    let mut kl = log_gamma(p0)? - log_gamma(q0)?;
    for (&ap, &aq) in p_alpha.iter().zip(q_alpha) {
        kl += log_gamma(aq)? - log_gamma(ap)?;
        kl += (ap - aq) * (digamma(ap)? - psi_p0);
    }
    Ok(kl)
}

// ---------------------------------------------------------------------------
// Sampling oracles (test support)
// ---------------------------------------------------------------------------

/// One Gamma(shape, 1) draw via Marsaglia-Tsang; the boost trick
/// `G(a) = G(a+1) U^(1/a)` handles shape < 1.
pub fn sample_gamma(shape: f64, rng: &mut impl Rng) -> f64 {
    assert!(shape > 0.0, "gamma shape must be positive, got {shape}");
    if shape < 1.0 {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.random_range(0.0..1.0);
        // Squeeze step accepts the bulk without a logarithm.
        if u < 1.0 - 0.0331 * x * x * x * x {
            return d * v;
        }
        if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// One Dirichlet(alpha) draw: normalized independent Gamma(alpha_j, 1)
/// variates. Entries of `alpha` must be positive (asserted).
pub fn sample_dirichlet(alpha: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    assert!(!alpha.is_empty(), "alpha must be non-empty");
    let draws: Vec<f64> = alpha.iter().map(|&a| sample_gamma(a, rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / total).collect()
}

/// One categorical draw by inverse CDF. `probs` must sum to one within
/// 1e-9 and contain no negative entry.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> Result<usize> {
    if let Some((j, &p)) = probs.iter().enumerate().find(|(_, p)| **p < 0.0) {
        return Err(EvibError::Domain(format!(
            "categorical probabilities must be non-negative; entry {j} is {p}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(EvibError::Domain(format!(
            "categorical probabilities must sum to 1 within 1e-9, got {total}"
        )));
    }
    let u: f64 = rng.random_range(0.0..1.0);
    let mut cum = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return Ok(j);
        }
    }
    // Rounding can leave cum marginally below 1; the draw belongs to the
    // last class with positive mass.
    Ok(probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("probs sum to 1, so some entry is positive"))
}
