//! Boundary-weighted BCE plus soft IoU for supervising detection maps.

use crate::autograd::{Tape, Var};
use crate::error::{HclError, Result};
use crate::pcc::PROB_CLAMP;
use crate::tensor::Tensor;

pub const BOUNDARY_WINDOW: usize = 31;
pub const BOUNDARY_GAIN: f64 = 5.0;

/// Box mean over a `k×k` window with zero padding, always divided by `k²`.
pub fn local_mean(map: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for i in 0..h {
        for j in 0..w {
            integral[(i + 1) * (w + 1) + j + 1] =
                map[i * w + j] + integral[i * (w + 1) + j + 1] + integral[(i + 1) * (w + 1) + j] - integral[i * (w + 1) + j];
        }
    }
    let clip = |v: isize, hi: usize| v.clamp(0, hi as isize) as usize;
    let norm = (k * k) as f64;
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let (i0, i1) = (clip(i - r, h), clip(i + r + 1, h));
            let (j0, j1) = (clip(j - r, w), clip(j + r + 1, w));
            let s = integral[i1 * (w + 1) + j1] - integral[i0 * (w + 1) + j1] - integral[i1 * (w + 1) + j0]
                + integral[i0 * (w + 1) + j0];
            out[i as usize * w + j as usize] = s / norm;
        }
    }
    out
}

/// Per-pixel weights `1 + 5·|mean₃₁(gt) − gt|`.
pub fn boundary_weights(gt: &Tensor) -> Result<Tensor> {
    let (h, w) = match *gt.shape() {
        [h, w] | [1, h, w] => (h, w),
        _ => return Err(HclError::shape("structure_loss", format!("gt {:?}", gt.shape()))),
    };
    let mean = local_mean(gt.data(), h, w, BOUNDARY_WINDOW);
    let data = mean
        .iter()
        .zip(gt.data())
        .map(|(m, g)| 1.0 + BOUNDARY_GAIN * (m - g).abs())
        .collect();
    Tensor::new([h, w], data)
}

/// Structure loss of a probability map (`H×W` or `1×H×W`) against a binary
/// mask.
pub fn structure_loss_var<'t>(pred: Var<'t>, gt: &Tensor) -> Var<'t> {
    let weit = boundary_weights(gt).unwrap_or_else(|e| panic!("{e}"));
    let s = weit.shape().to_vec();
    assert_eq!(pred.value().numel(), weit.numel(), "prediction and mask sizes differ");
    let p = pred.reshape(&s).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let g = Tensor::new(s.clone(), gt.data().to_vec()).unwrap();
    let wsum = weit.sum();
    let bce = (p.log().mul_const(g.clone()) + p.neg().add_scalar(1.0).log().mul_const(g.map(|v| 1.0 - v))).neg();
    let wbce = bce.mul_const(weit.clone()).sum().scale(1.0 / wsum);
    let inter = p.mul_const(g.mul(&weit).unwrap()).sum();
    let union = p.mul_const(weit.clone()).sum().add_scalar(g.mul(&weit).unwrap().sum());
    let wiou = (inter.add_scalar(1.0) / (union - inter).add_scalar(1.0)).neg().add_scalar(1.0);
    wbce + wiou
}

pub fn structure_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.numel() != gt.numel() {
        return Err(HclError::shape(
            "structure_loss",
            format!("{:?} vs {:?}", pred.shape(), gt.shape()),
        ));
    }
    boundary_weights(gt)?;
    let tape = Tape::new();
    Ok(structure_loss_var(tape.constant(pred.clone()), gt).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let gt = Tensor::from_fn([16, 16], |k| if (k / 16) > 5 && (k % 16) < 9 { 1.0 } else { 0.0 });
        assert!(structure_loss(&gt, &gt).unwrap() <= 1e-5);
    }

    #[test]
    fn uniform_half_on_empty_mask() {
        let (h, w) = (8, 8);
        let gt = Tensor::zeros([h, w]);
        let loss = structure_loss(&Tensor::full([h, w], 0.5), &gt).unwrap();
        let union = 0.5 * (h * w) as f64;
        let expect = 2f64.ln() + 1.0 - 1.0 / (union + 1.0);
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn local_mean_of_constant_interior() {
        let m = local_mean(&[1.0; 49], 7, 7, 3);
        assert!((m[3 * 7 + 3] - 1.0).abs() < 1e-15);
        assert!((m[0] - 4.0 / 9.0).abs() < 1e-15);
    }
}
