//! Slow reference implementations used as independent oracles.

use std::f64::consts::PI;

use crate::tensor::Tensor;

/// Direct `O(H²W²)` DFT of a `C×H×W` image as `(re, im)`, unnormalized.
pub fn naive_dft2(image: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let x = image.data();
    let mut re = vec![0.0; c * h * w];
    let mut im = vec![0.0; c * h * w];
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for m in 0..h {
                    for n in 0..w {
                        let phase = -2.0 * PI * ((u * m) as f64 / h as f64 + (v * n) as f64 / w as f64);
                        let val = x[(ch * h + m) * w + n];
                        sr += val * phase.cos();
                        si += val * phase.sin();
                    }
                }
                re[(ch * h + u) * w + v] = sr;
                im[(ch * h + u) * w + v] = si;
            }
        }
    }
    (re, im)
}

/// Row-major multi-index of flat position `k` in `shape`.
fn unravel(mut k: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = k % shape[d];
        k /= shape[d];
    }
    idx
}

/// Elementwise `f(a, b)` under numpy broadcasting, one output at a time.
pub fn broadcast_loop(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Option<Tensor> {
    let nd = a.ndim().max(b.ndim());
    let pad = |s: &[usize]| {
        let mut v = vec![1; nd - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (sa, sb) = (pad(a.shape()), pad(b.shape()));
    let mut out = Vec::with_capacity(nd);
    for d in 0..nd {
        out.push(match (sa[d], sb[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        });
    }
    let flat = |idx: &[usize], s: &[usize]| idx.iter().zip(s).fold(0, |acc, (&i, &n)| acc * n + if n == 1 { 0 } else { i });
    let n: usize = out.iter().product();
    let data = (0..n)
        .map(|k| {
            let idx = unravel(k, &out);
            f(a.data()[flat(&idx, &sa)], b.data()[flat(&idx, &sb)])
        })
        .collect();
    Tensor::new(out, data).ok()
}

/// Mean absolute error by an explicit loop.
pub fn mae_loop(pred: &[f64], gt: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        let g = if gt[i] >= 0.5 { 1.0 } else { 0.0 };
        total += (pred[i] - g).abs();
    }
    total / pred.len() as f64
}

/// Squared distance to the nearest foreground pixel by exhaustive search.
pub fn nearest_foreground_loop(gt: &[bool], w: usize) -> Vec<f64> {
    let fg: Vec<usize> = (0..gt.len()).filter(|&k| gt[k]).collect();
    (0..gt.len())
        .map(|k| {
            fg.iter()
                .map(|&f| {
                    let di = (f / w) as f64 - (k / w) as f64;
                    let dj = (f % w) as f64 - (k % w) as f64;
                    di * di + dj * dj
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Binary entropy of a probability.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_dft_of_constant() {
        let t = Tensor::full([1, 3, 5], 2.0);
        let (re, im) = naive_dft2(&t);
        assert!((re[0] - 30.0).abs() < 1e-12);
        assert!(re[1..].iter().chain(&im).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn nearest_foreground_of_a_single_pixel() {
        let mut gt = vec![false; 12];
        gt[5] = true;
        let d = nearest_foreground_loop(&gt, 4);
        assert_eq!(d[5], 0.0);
        assert_eq!(d[0], 2.0);
        assert_eq!(d[11], 5.0);
    }

    #[test]
    fn broadcast_loop_rules() {
        let a = Tensor::from_fn([2, 1, 3], |i| i as f64);
        let b = Tensor::from_fn([4, 1], |i| 10.0 * i as f64);
        let c = broadcast_loop(&a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.shape(), [2, 4, 3]);
        assert_eq!(c.data()[(1 * 4 + 2) * 3 + 1], 4.0 + 20.0);
        assert!(broadcast_loop(&Tensor::zeros([2]), &Tensor::zeros([3]), |x, _| x).is_none());
    }
}
