//! Finite-difference gradient verification.
//!
//! Central differences with h = 1e-5 against a caller-supplied analytic
//! gradient. The relative error per coordinate is |fd - an| scaled by
//! max(1e-6, |fd| + |an|). The floor matters: double-precision evaluation of
//! an O(1) objective leaves ~1e-11 of absolute noise in each central
//! difference, so coordinates whose true gradient is tinier than the floor
//! would otherwise report noise as error.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error between the analytic gradient and central finite
/// differences of `f` at `x`.
pub fn grad_check<F>(f: F, x: &Tensor, analytic: &Tensor) -> Result<f64>
where
    F: Fn(&Tensor) -> f64,
{
    if x.shape() != analytic.shape() {
        return Err(Error::Shape(format!(
            "grad_check point {:?} vs gradient {:?}",
            x.shape(),
            analytic.shape()
        )));
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let an = analytic.data()[i];
        let err = (fd - an).abs() / f64::max(1e-6, fd.abs() + an.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;
    use crate::numerics::tensor::{cross_entropy, softmax, softmax_xent_grad, Tensor};

    #[test]
    fn sum_of_squares_gradient_verifies() {
        let mut rng = Rng::new(17);
        let x = Tensor::vector((0..8).map(|_| rng.uniform(-2.0, 2.0)).collect());
        let analytic = Tensor::vector(x.data().iter().map(|v| 2.0 * v).collect());
        let err = grad_check(|t| t.data().iter().map(|v| v * v).sum(), &x, &analytic).unwrap();
        assert!(err < 1e-7, "max relative error {err}");
    }

    #[test]
    fn softmax_cross_entropy_gradient_verifies() {
        let mut rng = Rng::new(23);
        for case in 0..10 {
            let n = 3 + rng.below(6);
            let target = rng.below(n);
            let logits = Tensor::vector((0..n).map(|_| rng.uniform(-2.0, 2.0)).collect());
            let analytic = Tensor::vector(softmax_xent_grad(logits.data(), target));
            let f = |t: &Tensor| cross_entropy(&softmax(t).unwrap(), target).unwrap();
            let err = grad_check(f, &logits, &analytic).unwrap();
            assert!(err < 1e-6, "case {case}: max relative error {err}");
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(grad_check(|t| t.data().iter().sum(), &x, &g).is_err());
    }

    #[test]
    fn a_wrong_gradient_is_flagged() {
        let x = Tensor::vector(vec![0.3, -0.7]);
        let wrong = Tensor::vector(vec![1.0, 1.0]);
        let err = grad_check(|t| t.data().iter().map(|v| v * v).sum(), &x, &wrong).unwrap();
        assert!(err > 0.1, "expected a large error, got {err}");
    }
}
