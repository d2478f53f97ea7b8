//! Generator and discriminator objectives.
//!
//! The generator minimizes `lambda * mse + adv`, with the non-saturating
//! adversarial term `-ln D(G(x))` averaged over the batch. The discriminator
//! minimizes `-mean ln D(real) - mean ln(1 - D(fake))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// A scalar loss with its breakdown. Components are `None` when not part of
/// the objective that produced the value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub mse: Option<f64>,
    pub adversarial: Option<f64>,
}

/// Loss plus its gradient with respect to the single tensor it was computed from.
#[derive(Clone, Debug)]
pub struct ScalarLoss {
    pub value: f64,
    pub grad: Tensor,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorLoss {
    pub value: f64,
    pub grad_real: Tensor,
    pub grad_fake: Tensor,
}

#[derive(Clone, Debug)]
pub struct GeneratorLoss {
    pub value: LossValue,
    /// `lambda * d(mse)/d(gen)`; the adversarial part still has to go
    /// through the discriminator.
    pub grad_gen: Tensor,
    /// `d(adv)/d(D(G(x)))`.
    pub grad_d_fake: Tensor,
}

/// `lambda * mse + adv`.
pub fn combine(lambda: f64, mse: f64, adversarial: f64) -> f64 {
    lambda * mse + adversarial
}

pub fn mse_loss(gen: &Tensor, target: &Tensor) -> Result<ScalarLoss> {
    if gen.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse between {} and {}",
            gen.shape(),
            target.shape()
        )));
    }
    let count = gen.len() as f64;
    let mut sum = 0.0f64;
    let scale = 2.0 / count;
    let grad: Vec<f32> = gen
        .data()
        .iter()
        .zip(target.data())
        .map(|(&g, &t)| {
            let d = g as f64 - t as f64;
            sum += d * d;
            (scale * d) as f32
        })
        .collect();
    Ok(ScalarLoss {
        value: sum / count,
        grad: Tensor::from_vec(gen.shape(), grad)?,
    })
}

fn check_probabilities(t: &Tensor, what: &str) -> Result<()> {
    if t.is_empty() {
        return Err(Error::shape(format!("{what}: empty probability batch")));
    }
    if let Some((i, v)) = t
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0 && v < 1.0))
    {
        return Err(Error::Numeric(format!(
            "{what}: entry {i} = {v} is outside (0, 1)"
        )));
    }
    Ok(())
}

pub fn adv_generator_loss(d_on_fake: &Tensor) -> Result<ScalarLoss> {
    check_probabilities(d_on_fake, "generator adversarial loss")?;
    let n = d_on_fake.len() as f64;
    let value = d_on_fake.data().iter().map(|&d| -(d as f64).ln()).sum::<f64>() / n;
    let grad = d_on_fake.map(|d| (-1.0 / (n * d as f64)) as f32);
    Ok(ScalarLoss { value, grad })
}

/// `-mean ln D(real)`, the real-image half of the discriminator objective.
pub fn discriminator_real_term(d_on_real: &Tensor) -> Result<ScalarLoss> {
    check_probabilities(d_on_real, "discriminator loss (real)")?;
    let n = d_on_real.len() as f64;
    let value = d_on_real.data().iter().map(|&d| -(d as f64).ln()).sum::<f64>() / n;
    Ok(ScalarLoss {
        value,
        grad: d_on_real.map(|d| (-1.0 / (n * d as f64)) as f32),
    })
}

/// `-mean ln(1 - D(fake))`.
pub fn discriminator_fake_term(d_on_fake: &Tensor) -> Result<ScalarLoss> {
    check_probabilities(d_on_fake, "discriminator loss (fake)")?;
    let n = d_on_fake.len() as f64;
    let value = d_on_fake
        .data()
        .iter()
        .map(|&d| -(1.0 - d as f64).ln())
        .sum::<f64>()
        / n;
    Ok(ScalarLoss {
        value,
        grad: d_on_fake.map(|d| (1.0 / (n * (1.0 - d as f64))) as f32),
    })
}

pub fn discriminator_loss(d_on_real: &Tensor, d_on_fake: &Tensor) -> Result<DiscriminatorLoss> {
    let real = discriminator_real_term(d_on_real)?;
    let fake = discriminator_fake_term(d_on_fake)?;
    Ok(DiscriminatorLoss {
        value: real.value + fake.value,
        grad_real: real.grad,
        grad_fake: fake.grad,
    })
}

pub fn combined_generator_loss(
    gen: &Tensor,
    target: &Tensor,
    d_on_fake: &Tensor,
    cfg: LossConfig,
) -> Result<GeneratorLoss> {
    cfg.validate()?;
    let mse = mse_loss(gen, target)?;
    let adv = adv_generator_loss(d_on_fake)?;
    let lambda = cfg.lambda as f32;
    Ok(GeneratorLoss {
        value: LossValue {
            total: combine(cfg.lambda, mse.value, adv.value),
            mse: Some(mse.value),
            adversarial: Some(adv.value),
        },
        grad_gen: mse.grad.map(|g| lambda * g),
        grad_d_fake: adv.grad,
    })
}
