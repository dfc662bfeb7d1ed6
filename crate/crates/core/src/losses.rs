//! Scalar forms of the training objectives.
//!
//! Expectations are means over every element (batch, position and channel).
//! Logarithms take scores clamped into `[EPS, 1 - EPS]`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{Image, ScoreMap};

pub const EPS: f64 = 1e-7;

#[inline]
pub fn clamp_score(s: f64) -> f64 {
    s.clamp(EPS, 1.0 - EPS)
}

/// Mean absolute difference.
pub fn l1_loss(pred: &Image, target: &Image) -> Result<f64> {
    pred.check_same_dims(target)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.data().len() as f64)
}

fn mean_over(maps: &[&ScoreMap], f: impl Fn(f64) -> f64) -> f64 {
    let n: usize = maps.iter().map(|m| m.scores().len()).sum();
    let total: f64 = maps.iter().flat_map(|m| m.scores()).map(|&s| f(clamp_score(s))).sum();
    total / n as f64
}

/// `-(E[log D(real)] + E[log(1 - D(fake))])`, minimized by the discriminator.
pub fn adversarial_loss_discriminator(score_real: &[&ScoreMap], score_fake: &[&ScoreMap]) -> f64 {
    -(mean_over(score_real, f64::ln) + mean_over(score_fake, |s| (1.0 - s).ln()))
}

/// Form of the generator's adversarial term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// `E[log(1 - D(fake))]`, the minimax objective.
    #[default]
    Minimax,
    /// `-E[log D(fake)]`.
    NonSaturating,
}

pub fn adversarial_loss_generator(score_fake: &[&ScoreMap], form: AdversarialForm) -> f64 {
    match form {
        AdversarialForm::Minimax => mean_over(score_fake, |s| (1.0 - s).ln()),
        AdversarialForm::NonSaturating => -mean_over(score_fake, f64::ln),
    }
}

pub fn total_generator_loss(l1_terms: &[f64], adversarial_g: f64, lambda_used: f64) -> f64 {
    l1_terms.iter().sum::<f64>() + lambda_used * adversarial_g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Coupled,
}

/// Loss values of one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub phase: Phase,
    pub l1_per_source: Vec<f64>,
    pub adversarial_g: f64,
    pub adversarial_d: f64,
    pub total_g: f64,
    pub lambda_used: f64,
}

impl LossReport {
    /// `total_g` is always derived here so the weighted-sum identity holds exactly.
    pub fn new(iteration: usize, phase: Phase, l1_per_source: Vec<f64>, adversarial_g: f64, adversarial_d: f64, lambda_used: f64) -> Self {
        let total_g = total_generator_loss(&l1_per_source, adversarial_g, lambda_used);
        Self {
            iteration,
            phase,
            l1_per_source,
            adversarial_g,
            adversarial_d,
            total_g,
            lambda_used,
        }
    }
}
