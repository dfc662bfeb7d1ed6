//! Differentiable versions of the training objectives.

use candle_core::Tensor;
use stainsep_core::losses::EPS;
use stainsep_core::AdversarialForm;

use crate::error::Result;

pub fn l1(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok((pred - target)?.abs()?.mean_all()?)
}

fn clamp(s: &Tensor) -> Result<Tensor> {
    Ok(s.clamp(EPS, 1.0 - EPS)?)
}

fn mean_log(s: &Tensor) -> Result<Tensor> {
    Ok(clamp(s)?.log()?.mean_all()?)
}

fn mean_log_complement(s: &Tensor) -> Result<Tensor> {
    Ok(clamp(s)?.affine(-1.0, 1.0)?.log()?.mean_all()?)
}

pub fn discriminator_loss(score_real: &Tensor, score_fake: &Tensor) -> Result<Tensor> {
    Ok((mean_log(score_real)? + mean_log_complement(score_fake)?)?.neg()?)
}

pub fn generator_adversarial(score_fake: &Tensor, form: AdversarialForm) -> Result<Tensor> {
    match form {
        AdversarialForm::Minimax => mean_log_complement(score_fake),
        AdversarialForm::NonSaturating => Ok(mean_log(score_fake)?.neg()?),
    }
}
