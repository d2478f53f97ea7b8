use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    /// Number of training batches folded in; zero means uninitialized.
    pub tracked: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            tracked: 0,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.tracked > 0
    }
}

/// What the backward pass needs from a train-mode forward.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    normalized: Vec<f32>,
    inv_std: Vec<f64>,
    mode: BnMode,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

pub fn batch_norm2d(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    stats: &mut RunningStats,
    mode: BnMode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor, BatchNormCache)> {
    let s = input.shape();
    let c = s.c();
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(Error::shape(format!(
            "batch norm over {c} channels got gamma {}, beta {}, stats {}",
            gamma.len(),
            beta.len(),
            stats.mean.len()
        )));
    }
    let plane = s.plane();
    let count = s.n() * plane;
    let x = input.data();

    let (mean, var) = match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(Error::shape(format!(
                    "train-mode batch norm needs at least 2 values per channel, got {count}"
                )));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut sum = 0.0f64;
                for n in 0..s.n() {
                    let base = (n * c + ch) * plane;
                    sum += x[base..base + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mu = sum / count as f64;
                let mut sq = 0.0f64;
                for n in 0..s.n() {
                    let base = (n * c + ch) * plane;
                    sq += x[base..base + plane]
                        .iter()
                        .map(|&v| (v as f64 - mu).powi(2))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / count as f64;
            }
            let unbias = count as f64 / (count - 1) as f64;
            for ch in 0..c {
                let rm = stats.mean[ch] as f64;
                let rv = stats.var[ch] as f64;
                stats.mean[ch] = ((1.0 - momentum) * rm + momentum * mean[ch]) as f32;
                stats.var[ch] = ((1.0 - momentum) * rv + momentum * var[ch] * unbias) as f32;
            }
            stats.tracked += 1;
            (mean, var)
        }
        BnMode::Eval => {
            if !stats.is_initialized() {
                return Err(Error::State(
                    "eval-mode batch norm requested before any running statistics were collected"
                        .into(),
                ));
            }
            (
                stats.mean.iter().map(|&v| v as f64).collect(),
                stats.var.iter().map(|&v| v as f64).collect(),
            )
        }
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    for n in 0..s.n() {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            let (mu, is) = (mean[ch], inv_std[ch]);
            let (g, b) = (gamma[ch] as f64, beta[ch] as f64);
            for i in base..base + plane {
                let xh = (x[i] as f64 - mu) * is;
                normalized[i] = xh as f32;
                out[i] = (g * xh + b) as f32;
            }
        }
    }
    Ok((
        Tensor::from_vec(s, out)?,
        BatchNormCache {
            normalized,
            inv_std,
            mode,
        },
    ))
}

pub fn batch_norm2d_backward(
    grad_out: &Tensor,
    gamma: &[f32],
    cache: &BatchNormCache,
) -> Result<BatchNormGrads> {
    let s = grad_out.shape();
    let c = s.c();
    if cache.normalized.len() != grad_out.len() || gamma.len() != c {
        return Err(Error::shape(format!(
            "batch norm backward: grad {s} does not match cached forward"
        )));
    }
    let plane = s.plane();
    let count = (s.n() * plane) as f64;
    let dy = grad_out.data();
    let xh = &cache.normalized;

    let mut d_gamma = vec![0.0f64; c];
    let mut d_beta = vec![0.0f64; c];
    for n in 0..s.n() {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            for i in base..base + plane {
                d_beta[ch] += dy[i] as f64;
                d_gamma[ch] += dy[i] as f64 * xh[i] as f64;
            }
        }
    }

    let mut dx = vec![0.0f32; dy.len()];
    for n in 0..s.n() {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            let scale = gamma[ch] as f64 * cache.inv_std[ch];
            match cache.mode {
                BnMode::Train => {
                    let (sum_dy, sum_dy_xh) = (d_beta[ch], d_gamma[ch]);
                    for i in base..base + plane {
                        let v = count * dy[i] as f64 - sum_dy - xh[i] as f64 * sum_dy_xh;
                        dx[i] = (scale * v / count) as f32;
                    }
                }
                BnMode::Eval => {
                    for i in base..base + plane {
                        dx[i] = (scale * dy[i] as f64) as f32;
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::from_vec(s, dx)?,
        gamma: d_gamma.into_iter().map(|v| v as f32).collect(),
        beta: d_beta.into_iter().map(|v| v as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Rng, Shape};

    fn run(input: &Tensor, gamma: f32, beta: f32, stats: &mut RunningStats, mode: BnMode) -> Result<Tensor> {
        let c = input.shape().c();
        batch_norm2d(input, &vec![gamma; c], &vec![beta; c], stats, mode, BN_MOMENTUM, BN_EPS)
            .map(|(t, _)| t)
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full(Shape::new(3, 2, 4, 4), 3.7);
        let mut st = RunningStats::new(2);
        let y = run(&x, 1.0, 0.0, &mut st, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn random_input_is_standardized() {
        let mut rng = Rng::new(11);
        let x = Tensor::randn(Shape::new(4, 3, 5, 5), 2.5, &mut rng).map(|v| v + 1.0);
        let mut st = RunningStats::new(3);
        let y = run(&x, 1.0, 0.0, &mut st, BnMode::Train).unwrap();
        let plane = 25;
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.data()[(n * 3 + ch) * plane..(n * 3 + ch + 1) * plane].to_vec())
                .map(|v| v as f64)
                .collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mu.abs() < 1e-5, "mean {mu}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut rng = Rng::new(12);
        let x = Tensor::randn(Shape::new(2, 2, 3, 3), 1.0, &mut rng);
        let mut st = RunningStats::new(2);
        let y = run(&x, 0.0, 5.0, &mut st, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn eval_before_train_is_rejected() {
        let x = Tensor::zeros(Shape::new(1, 2, 2, 2));
        let mut st = RunningStats::new(2);
        assert!(matches!(run(&x, 1.0, 0.0, &mut st, BnMode::Eval), Err(Error::State(_))));
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let x = Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut st = RunningStats::new(1);
        run(&x, 1.0, 0.0, &mut st, BnMode::Train).unwrap();
        // batch mean 2.5, unbiased var 5/3
        assert!((st.mean[0] - 0.25).abs() < 1e-7);
        assert!((st.var[0] as f64 - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
        assert_eq!(st.tracked, 1);
        let y = run(&x, 1.0, 0.0, &mut st, BnMode::Eval).unwrap();
        let want = (1.0 - 0.25) / (st.var[0] as f64 + BN_EPS).sqrt();
        assert!((y.data()[0] as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn single_value_per_channel_rejected_in_train() {
        let x = Tensor::zeros(Shape::new(1, 2, 1, 1));
        let mut st = RunningStats::new(2);
        assert!(run(&x, 1.0, 0.0, &mut st, BnMode::Train).is_err());
    }
}
