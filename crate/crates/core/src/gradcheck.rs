//! Central finite-difference checks of tape gradients.

use crate::autograd::{Tape, Var};
use crate::tensor::Tensor;

/// Relative disagreement between two derivative estimates.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Max relative error over coordinates between the tape gradient of `f` at
/// `point` and central differences with step `eps`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> f64
where
    F: for<'t> Fn(Var<'t>) -> Var<'t>,
{
    let all: Vec<usize> = (0..point.numel()).collect();
    grad_check_at(f, point, eps, &all)
}

/// Like [`grad_check`], but only probes the listed coordinates.
pub fn grad_check_at<F>(f: F, point: &Tensor, eps: f64, coords: &[usize]) -> f64
where
    F: for<'t> Fn(Var<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let x = tape.leaf(point.clone());
    let grads = tape.backward(f(x)).expect("grad_check needs a scalar function");
    let analytic = grads
        .wrt(x)
        .unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));
    let eval = |p: Tensor| {
        let tape = Tape::new();
        f(tape.constant(p)).item()
    };
    coords
        .iter()
        .map(|&k| {
            let mut plus = point.clone();
            plus.data_mut()[k] += eps;
            let mut minus = point.clone();
            minus.data_mut()[k] -= eps;
            relative_error(analytic.data()[k], (eval(plus) - eval(minus)) / (2.0 * eps))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let p = Tensor::from_fn([7], |i| i as f64 * 0.37 - 1.1);
        assert!(grad_check(|x| x.square().sum(), &p, 1e-5) < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 0.5).abs() < 1e-15);
    }
}
