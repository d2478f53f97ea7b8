use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AffineGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

fn dims(input: &Tensor, weight: &Tensor, bias_len: usize) -> Result<(usize, usize, usize)> {
    let n = input.shape().n();
    let k = input.shape().item_len();
    let ws = weight.shape();
    // weights are stored as (1, 1, k, m)
    if ws.n() != 1 || ws.c() != 1 || ws.h() != k {
        return Err(Error::shape(format!(
            "affine weight {ws} incompatible with input {} ({k} features)",
            input.shape()
        )));
    }
    let m = ws.w();
    if bias_len != m {
        return Err(Error::shape(format!(
            "affine bias has {bias_len} entries, expected {m}"
        )));
    }
    Ok((n, k, m))
}

/// `input` is flattened to `(n, k)`; the result has shape `(n, m, 1, 1)`.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (n, _, m) = dims(input, weight, bias.len())?;
    let w = weight.data();
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let row = input.item(i);
        for j in 0..m {
            let mut acc = bias[j] as f64;
            for (l, &x) in row.iter().enumerate() {
                acc += x as f64 * w[l * m + j] as f64;
            }
            out.push(acc as f32);
        }
    }
    Tensor::from_vec(Shape::new(n, m, 1, 1), out)
}

pub fn affine_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<AffineGrads> {
    let m = weight.shape().w();
    let (n, k, m) = dims(input, weight, m)?;
    if grad_out.shape() != Shape::new(n, m, 1, 1) {
        return Err(Error::shape(format!(
            "affine grad_out {} does not match ({n}, {m}, 1, 1)",
            grad_out.shape()
        )));
    }
    let w = weight.data();
    let g = grad_out.data();
    let mut d_input = vec![0.0f32; n * k];
    let mut d_weight = vec![0.0f64; k * m];
    let mut d_bias = vec![0.0f64; m];
    for i in 0..n {
        let row = input.item(i);
        let gi = &g[i * m..(i + 1) * m];
        for l in 0..k {
            let mut acc = 0.0f64;
            for j in 0..m {
                acc += gi[j] as f64 * w[l * m + j] as f64;
                d_weight[l * m + j] += row[l] as f64 * gi[j] as f64;
            }
            d_input[i * k + l] = acc as f32;
        }
        for j in 0..m {
            d_bias[j] += gi[j] as f64;
        }
    }
    Ok(AffineGrads {
        input: Tensor::from_vec(input.shape(), d_input)?,
        weight: d_weight.into_iter().map(|v| v as f32).collect(),
        bias: d_bias.into_iter().map(|v| v as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn identity_weight() {
        let x = Tensor::from_vec(Shape::new(2, 3, 1, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::from_vec(Shape::new(1, 1, 3, 3), eye).unwrap();
        let y = affine(&x, &w, &[0.0; 3]).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn spot_value() {
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(Shape::new(1, 1, 2, 1), vec![1.0, 1.0]).unwrap();
        let y = affine(&x, &w, &[0.5]).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = Rng::new(9);
        let x = Tensor::randn(Shape::new(3, 2, 2, 2), 1.0, &mut rng);
        let w = Tensor::randn(Shape::new(1, 1, 8, 5), 1.0, &mut rng);
        let b: Vec<f32> = (0..5).map(|i| i as f32 - 2.0).collect();
        let y = affine(&x, &w, &b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = b[j] as f64;
                for l in 0..8 {
                    acc += x.data()[i * 8 + l] as f64 * w.data()[l * 5 + j] as f64;
                }
                assert!((y.data()[i * 5 + j] as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_mismatch() {
        let x = Tensor::zeros(Shape::new(1, 3, 1, 1));
        let w = Tensor::zeros(Shape::new(1, 1, 2, 1));
        assert!(affine(&x, &w, &[0.0]).is_err());
        let w = Tensor::zeros(Shape::new(1, 1, 3, 1));
        assert!(affine(&x, &w, &[0.0, 0.0]).is_err());
    }
}
