//! Label-smoothed targets and the cross-entropy loss built on them.
//!
//! For a gold index `y` over `N` classes with smoothing mass `ε`:
//! `t(k) = (1 − ε)·[k = y] + [k ≠ y]·ε/(N − 1)`.
//! `ε = 0` gives the one-hot target, so the unsmoothed arm of an experiment
//! runs through the same code path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::softmax;

/// Probabilities are clamped to this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub epsilon: f64,
}

impl SmoothingConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon {epsilon} outside [0, 1]")));
        }
        Ok(SmoothingConfig { epsilon })
    }

    pub fn disabled() -> Self {
        SmoothingConfig { epsilon: 0.0 }
    }
}

/// Smoothed target over the whole target vocabulary (specials included).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    probs: Vec<f64>,
    target_index: usize,
    epsilon: f64,
}

impl TargetDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Mass assigned to every non-gold index.
    pub fn off_target_mass(&self) -> f64 {
        self.epsilon / (self.probs.len() - 1) as f64
    }
}

pub fn smooth_targets(y: usize, n_vocab: usize, epsilon: f64) -> Result<TargetDistribution> {
    if n_vocab < 2 {
        return Err(Error::config(format!(
            "vocabulary of {n_vocab} < 2 classes"
        )));
    }
    if y >= n_vocab {
        return Err(Error::config(format!(
            "target {y} outside vocabulary of {n_vocab}"
        )));
    }
    SmoothingConfig::new(epsilon)?;
    let off = epsilon / (n_vocab - 1) as f64;
    let mut probs = vec![off; n_vocab];
    probs[y] = 1.0 - epsilon;
    Ok(TargetDistribution {
        probs,
        target_index: y,
        epsilon,
    })
}

/// `−Σ_k t(k)·ln p(k)` in nats, with `p` clamped to [`PROB_FLOOR`].
pub fn cross_entropy(predicted: &[f64], target: &TargetDistribution) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::config(format!(
            "prediction over {} classes, target over {}",
            predicted.len(),
            target.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(&target.probs)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&p, &t)| -t * p.max(PROB_FLOOR).ln())
        .sum())
}

/// Entropy of the smoothed target: the minimum of [`cross_entropy`] over
/// all predictions. `−(1−ε)·ln(1−ε) − ε·ln(ε/(N−1))`.
pub fn loss_floor(epsilon: f64, n_vocab: usize) -> f64 {
    let xlnx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    if epsilon == 0.0 {
        return 0.0;
    }
    -xlnx(1.0 - epsilon) - epsilon * (epsilon / (n_vocab - 1) as f64).ln()
}

/// Gradient of `cross_entropy(softmax(z), t)` with respect to the logits `z`.
pub fn logits_gradient(logits: &[f64], target: &TargetDistribution) -> Vec<f64> {
    softmax_gradient(&softmax(logits), target)
}

/// `p − t`, given already-normalized predictions.
pub fn softmax_gradient(probs: &[f64], target: &TargetDistribution) -> Vec<f64> {
    probs
        .iter()
        .zip(&target.probs)
        .map(|(p, t)| p - t)
        .collect()
}
