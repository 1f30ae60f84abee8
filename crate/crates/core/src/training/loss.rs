use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Mean absolute pixel difference.
pub fn reconstruction_loss<T: Element>(hr: &Tensor<T>, sr: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(sr.sub(hr)?.abs().mean())
}

/// Discriminator objective as a loss to minimize:
/// `-(mean log D(real) + mean log(1 - D(fake)))`, from logits.
pub fn adversarial_loss_d<T: Element>(real_logit: &Tensor<T>, fake_logit: &Tensor<T>) -> Result<Tensor<T>> {
    real_logit
        .bce_with_logits(1.0)
        .mean()
        .add(&fake_logit.bce_with_logits(0.0).mean())
}

/// Terms of the generator objective.
#[derive(Debug, Clone)]
pub struct GeneratorLoss<T: Element = f32> {
    pub total: Tensor<T>,
    /// `-mean log D(fake)` (non-saturating form).
    pub adversarial: Tensor<T>,
    pub reconstruction: Tensor<T>,
}

/// `lambda_adv * (-mean log D(fake)) + lambda_rec * L1(hr, sr)`.
pub fn generator_loss<T: Element>(
    fake_logit: &Tensor<T>,
    hr: &Tensor<T>,
    sr: &Tensor<T>,
    lambda_adv: f64,
    lambda_rec: f64,
) -> Result<GeneratorLoss<T>> {
    let adversarial = fake_logit.bce_with_logits(1.0).mean();
    let reconstruction = reconstruction_loss(hr, sr)?;
    let total = adversarial.scale(lambda_adv).add(&reconstruction.scale(lambda_rec))?;
    Ok(GeneratorLoss {
        total,
        adversarial,
        reconstruction,
    })
}
