//! Counterfactual and diagnostic attention vectors built from an original
//! attention row.
//!
//! Three methods aim to move the argmax away from the originally most
//! attended position (`RandomPermute`, `Uniform`, `ZeroOutMax`); the others
//! probe how sensitive the output is to the attention weights. Whether a
//! produced vector is counterfactual is always decided from the vector itself
//! using the lowest-index argmax rule.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{self, argmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InterventionMethod {
    RandomPermute,
    Uniform,
    ZeroOutMax,
    /// A token is preserved if any of the three counterfactual methods preserves it.
    Aggregate,
    ZeroOut,
    LastEncoderState,
    OnlyMax,
    KeepMaxUniformOthers,
}

impl InterventionMethod {
    /// Report order: counterfactual methods, their aggregate, then diagnostics.
    pub const ALL: [InterventionMethod; 8] = [
        InterventionMethod::RandomPermute,
        InterventionMethod::Uniform,
        InterventionMethod::ZeroOutMax,
        InterventionMethod::Aggregate,
        InterventionMethod::ZeroOut,
        InterventionMethod::LastEncoderState,
        InterventionMethod::OnlyMax,
        InterventionMethod::KeepMaxUniformOthers,
    ];

    pub const COUNTERFACTUAL: [InterventionMethod; 3] = [
        InterventionMethod::RandomPermute,
        InterventionMethod::Uniform,
        InterventionMethod::ZeroOutMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InterventionMethod::RandomPermute => "RandomPermute",
            InterventionMethod::Uniform => "Uniform",
            InterventionMethod::ZeroOutMax => "ZeroOutMax",
            InterventionMethod::Aggregate => "Aggregate",
            InterventionMethod::ZeroOut => "ZeroOut",
            InterventionMethod::LastEncoderState => "LastEncoderState",
            InterventionMethod::OnlyMax => "OnlyMax",
            InterventionMethod::KeepMaxUniformOthers => "KeepMaxUniformOthers",
        }
    }

    pub fn is_counterfactual_method(self) -> bool {
        Self::COUNTERFACTUAL.contains(&self)
    }

    /// Stable numeric id mixed into per-token seeds.
    pub fn id(self) -> u64 {
        match self {
            InterventionMethod::RandomPermute => 1,
            InterventionMethod::Uniform => 2,
            InterventionMethod::ZeroOutMax => 3,
            InterventionMethod::Aggregate => 4,
            InterventionMethod::ZeroOut => 5,
            InterventionMethod::LastEncoderState => 6,
            InterventionMethod::OnlyMax => 7,
            InterventionMethod::KeepMaxUniformOthers => 8,
        }
    }

    /// Adds the components of `Aggregate` when it is requested, dedupes, and
    /// puts the result in report order.
    pub fn expand(methods: &[InterventionMethod]) -> Vec<InterventionMethod> {
        let mut wanted: Vec<InterventionMethod> = methods.to_vec();
        if wanted.contains(&InterventionMethod::Aggregate) {
            wanted.extend(Self::COUNTERFACTUAL);
        }
        Self::ALL
            .into_iter()
            .filter(|m| wanted.contains(m))
            .collect()
    }
}

impl fmt::Display for InterventionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown intervention method {0:?}")]
pub struct UnknownMethod(pub alloc::string::String);

impl FromStr for InterventionMethod {
    type Err = UnknownMethod;

    /// Case-insensitive; `-` and `_` are ignored, so `zeroOutMax`,
    /// `zero-out-max` and `ZERO_OUT_MAX` all parse.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: alloc::string::String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .flat_map(char::to_lowercase)
            .collect();
        Self::ALL
            .into_iter()
            .find(|m| m.name().to_lowercase() == key)
            .ok_or_else(|| UnknownMethod(s.into()))
    }
}

/// Denominator used for the non-max entries of `KeepMaxUniformOthers`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeepMaxMode {
    /// `(1 − α[m_t]) / m`; the result generally sums to less than one.
    #[default]
    Literal,
    /// `(1 − α[m_t]) / (m − 1)`; the result sums to one.
    Normalized,
}

impl FromStr for KeepMaxMode {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "literal" => Ok(KeepMaxMode::Literal),
            "normalized" | "normalised" => Ok(KeepMaxMode::Normalized),
            _ => Err(UnknownMethod(s.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterventionError {
    /// No vector with a different argmax exists (or the method cannot produce one).
    #[error("{method}: not counterfactualizable ({reason})")]
    NotCounterfactualizable {
        method: InterventionMethod,
        reason: &'static str,
    },
    #[error("attention vector must be non-empty with finite non-negative weights")]
    InvalidAttention,
    #[error("{0} does not build a single attention vector")]
    NotAVector(InterventionMethod),
}

/// One row of weights over source positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionVector {
    weights: Vec<f64>,
}

impl AttentionVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, InterventionError> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(InterventionError::InvalidAttention);
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `m_t`, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.weights)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn ncf(method: InterventionMethod, reason: &'static str) -> InterventionError {
    InterventionError::NotCounterfactualizable { method, reason }
}

/// A random permutation of `alpha` whose argmax differs from the original's,
/// found by rejection sampling from a generator seeded with `seed`.
pub fn random_permute(
    alpha: &AttentionVector,
    seed: u64,
) -> Result<AttentionVector, InterventionError> {
    let method = InterventionMethod::RandomPermute;
    if alpha.len() < 2 {
        return Err(ncf(method, "single source position"));
    }
    let first = alpha.weights[0];
    if alpha.weights.iter().all(|&w| w == first) {
        return Err(ncf(method, "all weights equal"));
    }
    // With two distinct values some permutation qualifies: a maximum at index
    // 0 when m_t > 0, a smaller value at index 0 when m_t = 0. Expected draws
    // are at most m.
    let original = alpha.argmax();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut candidate = alpha.weights.clone();
        candidate.shuffle(&mut rng);
        if argmax(&candidate) != original {
            return Ok(AttentionVector { weights: candidate });
        }
    }
}

/// `α′ = (1/m)·1`.
pub fn uniform(m: usize) -> AttentionVector {
    assert!(m >= 1, "uniform attention needs at least one position");
    AttentionVector {
        weights: vec![1.0 / m as f64; m],
    }
}

/// Removes the most attended position and renormalizes the rest, the
/// probability-space equivalent of setting its score to `−∞`.
pub fn zero_out_max(alpha: &AttentionVector) -> Result<AttentionVector, InterventionError> {
    let method = InterventionMethod::ZeroOutMax;
    if alpha.len() < 2 {
        return Err(ncf(method, "single source position"));
    }
    let top = alpha.argmax();
    let remaining: f64 = alpha
        .weights
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, w)| w)
        .sum();
    if remaining <= 0.0 {
        return Err(ncf(method, "no attention mass outside the maximum"));
    }
    let weights = alpha
        .weights
        .iter()
        .enumerate()
        .map(|(i, &w)| if i == top { 0.0 } else { w / remaining })
        .collect();
    Ok(AttentionVector { weights })
}

/// Score-level `ZeroOutMax`: sets the score of position `top` to `−∞` and
/// recomputes the softmax.
pub fn zero_out_max_scores(
    scores: &[f64],
    top: usize,
) -> Result<AttentionVector, InterventionError> {
    let method = InterventionMethod::ZeroOutMax;
    if scores.len() < 2 {
        return Err(ncf(method, "single source position"));
    }
    if top >= scores.len() {
        return Err(InterventionError::InvalidAttention);
    }
    let mut masked = scores.to_vec();
    masked[top] = f64::NEG_INFINITY;
    let weights = tensor::softmax(&masked).map_err(|_| InterventionError::InvalidAttention)?;
    Ok(AttentionVector { weights })
}

/// All-zero weights; the resulting context vector is zero.
pub fn zero_out(m: usize) -> AttentionVector {
    assert!(m >= 1, "zero attention needs at least one position");
    AttentionVector {
        weights: vec![0.0; m],
    }
}

/// One-hot on the last source position.
pub fn last_encoder_state(m: usize) -> AttentionVector {
    assert!(m >= 1, "last-state attention needs at least one position");
    let mut weights = vec![0.0; m];
    weights[m - 1] = 1.0;
    AttentionVector { weights }
}

/// One-hot on the originally most attended position.
pub fn only_max(alpha: &AttentionVector) -> AttentionVector {
    let mut weights = vec![0.0; alpha.len()];
    weights[alpha.argmax()] = 1.0;
    AttentionVector { weights }
}

/// Keeps `α[m_t]` and spreads `1 − α[m_t]` evenly over the other positions.
pub fn keep_max_uniform_others(alpha: &AttentionVector, mode: KeepMaxMode) -> AttentionVector {
    let m = alpha.len();
    if m == 1 {
        return alpha.clone();
    }
    let top = alpha.argmax();
    let kept = alpha.weights[top];
    let denom = match mode {
        KeepMaxMode::Literal => m,
        KeepMaxMode::Normalized => m - 1,
    } as f64;
    let other = ((1.0 - kept) / denom).max(0.0);
    let weights = (0..m)
        .map(|i| if i == top { kept } else { other })
        .collect();
    AttentionVector { weights }
}

/// `argmax(alt) ≠ argmax(original)`.
pub fn is_counterfactual(original_argmax: usize, alt: &AttentionVector) -> bool {
    alt.argmax() != original_argmax
}

/// Mixes run seed, sentence, step and method into one per-token seed.
pub fn derive_seed(run_seed: u64, sentence: usize, step: usize, method: InterventionMethod) -> u64 {
    let mut h = splitmix64(run_seed);
    for v in [sentence as u64, step as u64, method.id()] {
        h = splitmix64(h ^ v);
    }
    h
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltIntervention {
    pub vector: AttentionVector,
    pub counterfactual: bool,
}

/// The replacement attention a method produces from the step's original
/// attention `weights` and raw `scores`, without the argmax check.
pub fn apply(
    method: InterventionMethod,
    weights: &[f64],
    scores: &[f64],
    seed: u64,
    mode: KeepMaxMode,
) -> Result<AttentionVector, InterventionError> {
    let alpha = AttentionVector::new(weights.to_vec())?;
    let top = alpha.argmax();
    let m = alpha.len();
    Ok(match method {
        InterventionMethod::RandomPermute => random_permute(&alpha, seed)?,
        InterventionMethod::Uniform => uniform(m),
        InterventionMethod::ZeroOutMax => zero_out_max_scores(scores, top)?,
        InterventionMethod::ZeroOut => zero_out(m),
        InterventionMethod::LastEncoderState => last_encoder_state(m),
        InterventionMethod::OnlyMax => only_max(&alpha),
        InterventionMethod::KeepMaxUniformOthers => keep_max_uniform_others(&alpha, mode),
        InterventionMethod::Aggregate => return Err(InterventionError::NotAVector(method)),
    })
}

/// [`apply`] plus the counterfactual rule: the three counterfactual methods
/// return `NotCounterfactualizable` whenever their vector keeps the original
/// argmax.
pub fn build(
    method: InterventionMethod,
    weights: &[f64],
    scores: &[f64],
    seed: u64,
    mode: KeepMaxMode,
) -> Result<BuiltIntervention, InterventionError> {
    let vector = apply(method, weights, scores, seed, mode)?;
    let top = argmax(weights);
    let counterfactual = is_counterfactual(top, &vector);
    if method.is_counterfactual_method() && !counterfactual {
        return Err(ncf(method, "argmax unchanged"));
    }
    Ok(BuiltIntervention {
        vector,
        counterfactual,
    })
}
