use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Sigmoid outputs are clamped to `[SIGMOID_CLAMP, 1 - SIGMOID_CLAMP]` so that
/// both `ln(p)` and `ln(1 - p)` stay finite.
pub const SIGMOID_CLAMP: f32 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { alpha: f32 },
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
            }
        }
    }

    /// Derivative expressed through the output `y`. For the rectifiers
    /// `y > 0` exactly when the input was positive (`alpha > 0`), so the kink
    /// at zero takes the negative-side slope.
    fn derivative(self, y: f32) -> f32 {
        match self {
            Activation::LeakyRelu { alpha } => {
                if y > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|v| kind.apply(v))
}

/// Gradient w.r.t. the input, given the forward output.
pub fn activation_backward(output: &Tensor, grad_out: &Tensor, kind: Activation) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "activation backward: output {}, grad {}",
            output.shape(),
            grad_out.shape()
        )));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * kind.derivative(y))
        .collect();
    Tensor::from_vec(output.shape(), data)
}
