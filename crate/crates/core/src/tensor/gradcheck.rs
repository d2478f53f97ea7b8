//! Central finite-difference verification of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};

/// Result of one evaluation of the function under test: a loss (which must
/// be a single scalar) and the analytic gradient w.r.t. each input.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: Vec<f64>,
    pub grads: Vec<Tensor>,
    /// Which side of every kink (e.g. each ReLU input) the evaluation was on.
    /// Probes whose pattern differs from the unperturbed one straddle a
    /// non-differentiable point and are skipped.
    pub region: Vec<bool>,
}

impl Evaluation {
    pub fn scalar(loss: f64, grads: Vec<Tensor>) -> Self {
        Evaluation {
            loss: vec![loss],
            grads,
            region: Vec::new(),
        }
    }

    pub fn with_region(mut self, region: Vec<bool>) -> Self {
        self.region = region;
        self
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Coordinates whose finite-difference stencil crossed a kink.
    pub skipped: usize,
    pub passed: bool,
}

/// Relative errors are taken against `max(|analytic|, |numeric|, floor)`, where
/// `floor` is this fraction of the largest analytic gradient magnitude over
/// all inputs. Without it, coordinates whose true gradient is ~0 (e.g. a bias
/// feeding batch norm) would be judged purely on 32-bit rounding noise.
const FLOOR_FRACTION: f64 = 0.1;

pub fn grad_check<F>(mut f: F, inputs: &[Tensor], h: f32, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<Evaluation>,
{
    if h <= 0.0 {
        return Err(Error::config(format!("finite-difference step must be > 0, got {h}")));
    }
    let base = f(inputs)?;
    scalar_loss(&base)?;
    if base.grads.len() != inputs.len() {
        return Err(Error::shape(format!(
            "{} analytic gradients for {} inputs",
            base.grads.len(),
            inputs.len()
        )));
    }
    for (g, x) in base.grads.iter().zip(inputs) {
        if g.shape() != x.shape() {
            return Err(Error::shape(format!(
                "analytic gradient {} does not match input {}",
                g.shape(),
                x.shape()
            )));
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        skipped: 0,
        passed: true,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    let floor = FLOOR_FRACTION
        * base
            .grads
            .iter()
            .flat_map(|g| g.data())
            .fold(0.0f64, |m, &g| m.max((g as f64).abs()))
            .max(1e-6);
    for (which, grad) in base.grads.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = probe[which].data()[i];
            probe[which].data_mut()[i] = orig + h;
            let plus = f(&probe)?;
            probe[which].data_mut()[i] = orig - h;
            let minus = f(&probe)?;
            probe[which].data_mut()[i] = orig;
            report.coordinates += 1;
            if plus.region != base.region || minus.region != base.region {
                report.skipped += 1;
                continue;
            }
            let (plus, minus) = (scalar_loss(&plus)?, scalar_loss(&minus)?);
            let step = (orig + h) as f64 - (orig - h) as f64;
            let numeric = (plus - minus) / step;
            let analytic = grad.data()[i] as f64;
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let rel = (analytic - numeric).abs() / denom;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (which, i);
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

fn scalar_loss(e: &Evaluation) -> Result<f64> {
    match e.loss.as_slice() {
        [v] => Ok(*v),
        other => Err(Error::shape(format!(
            "gradient check needs a scalar loss, got {} values",
            other.len()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn linear(inputs: &[Tensor], scale: f32) -> Result<Evaluation> {
        let x = &inputs[0];
        let coeffs: Vec<f32> = (0..x.len()).map(|i| i as f32 - 1.5).collect();
        let loss = x
            .data()
            .iter()
            .zip(&coeffs)
            .map(|(&a, &c)| a as f64 * c as f64)
            .sum();
        let grad = coeffs.iter().map(|c| c * scale).collect();
        Ok(Evaluation::scalar(loss, vec![Tensor::from_vec(x.shape(), grad)?]))
    }

    #[test]
    fn linear_function_agrees() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![0.5, 0.25, -1.0, 2.0]).unwrap();
        let r = grad_check(|xs| linear(xs, 1.0), &[x], 1e-3, 1e-2).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![0.5, 0.25, -1.0, 2.0]).unwrap();
        let r = grad_check(|xs| linear(xs, 1.1), &[x], 1e-3, 1e-2).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let x = Tensor::zeros(Shape::new(1, 1, 1, 2));
        let f = |xs: &[Tensor]| -> Result<Evaluation> {
            Ok(Evaluation {
                loss: vec![0.0, 1.0],
                grads: vec![xs[0].clone()],
                region: Vec::new(),
            })
        };
        assert!(grad_check(f, &[x], 1e-3, 1e-2).is_err());
    }

    #[test]
    fn probes_across_a_kink_are_skipped() {
        // relu(x) near 0: the stencil of the first coordinate straddles the kink.
        let relu = |xs: &[Tensor]| -> Result<Evaluation> {
            let x = xs[0].data();
            let loss = x.iter().map(|&v| v.max(0.0) as f64).sum();
            let grad = x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
            let region = x.iter().map(|&v| v > 0.0).collect();
            Ok(Evaluation::scalar(loss, vec![Tensor::from_vec(xs[0].shape(), grad)?]).with_region(region))
        };
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![2e-4, 0.5, -0.5]).unwrap();
        let r = grad_check(relu, &[x], 1e-3, 1e-2).unwrap();
        assert_eq!((r.coordinates, r.skipped), (3, 1));
        assert!(r.passed);
    }
}
