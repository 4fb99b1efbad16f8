//! Saliency-style evaluation: structure measure, mean enhanced-alignment
//! measure, weighted F-measure and MAE.
//!
//! With an all-background mask, `S_m = 1 − mean(pred)`, `E_m` scores the
//! fraction of predicted background and `F^w_β = 0`.

use crate::error::{HclError, Result};
use crate::tensor::Tensor;

pub const S_ALPHA: f64 = 0.5;
pub const F_BETA2: f64 = 0.3;
pub const E_THRESHOLDS: usize = 256;
const EPS: f64 = f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub s_measure: f64,
    pub e_measure: f64,
    pub wfbeta: f64,
    pub mae: f64,
}

impl Metrics {
    pub fn mean(rows: &[Metrics]) -> Option<Metrics> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let f = |g: fn(&Metrics) -> f64| rows.iter().map(g).sum::<f64>() / n;
        Some(Metrics {
            s_measure: f(|m| m.s_measure),
            e_measure: f(|m| m.e_measure),
            wfbeta: f(|m| m.wfbeta),
            mae: f(|m| m.mae),
        })
    }
}

fn plane(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(HclError::shape("evaluate_metrics", format!("{what} {:?}", t.shape()))),
    }
}

pub fn evaluate_metrics(pred: &Tensor, gt: &Tensor) -> Result<Metrics> {
    let (h, w) = plane(pred, "prediction")?;
    if plane(gt, "mask")? != (h, w) {
        return Err(HclError::shape("evaluate_metrics", format!("{:?} vs {:?}", pred.shape(), gt.shape())));
    }
    if pred.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(HclError::Domain {
            op: "evaluate_metrics",
            detail: "prediction outside [0,1]".into(),
        });
    }
    let p = pred.data();
    let g: Vec<bool> = gt.data().iter().map(|&v| v >= 0.5).collect();
    Ok(Metrics {
        s_measure: s_measure(p, &g, h, w),
        e_measure: mean_e_measure(p, &g),
        wfbeta: weighted_f_measure(p, &g, h, w),
        mae: mae(p, &g),
    })
}

pub fn mae(pred: &[f64], gt: &[bool]) -> f64 {
    pred.iter().zip(gt).map(|(p, &g)| (p - if g { 1.0 } else { 0.0 }).abs()).sum::<f64>() / pred.len() as f64
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn object_score(x: &[f64]) -> f64 {
    let (m, s) = mean_std(x);
    2.0 * m / (m * m + 1.0 + s + EPS)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = pred.iter().sum::<f64>() / nf;
    let y = gt.iter().sum::<f64>() / nf;
    let d = (nf - 1.0).max(1.0);
    let sx = pred.iter().map(|v| (v - x).powi(2)).sum::<f64>() / d;
    let sy = gt.iter().map(|v| (v - y).powi(2)).sum::<f64>() / d;
    let sxy = pred.iter().zip(gt).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / d;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let n = pred.len() as f64;
    let fg = gt.iter().filter(|&&g| g).count();
    let y = fg as f64 / n;
    if fg == 0 {
        return 1.0 - pred.iter().sum::<f64>() / n;
    }
    if fg == gt.len() {
        return pred.iter().sum::<f64>() / n;
    }
    let fg_vals: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(p, _)| *p).collect();
    let bg_vals: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(p, _)| 1.0 - p).collect();
    let object = y * object_score(&fg_vals) + (1.0 - y) * object_score(&bg_vals);

    // centroid split, 1-based as in the reference formulation
    let (mut si, mut sj) = (0.0, 0.0);
    for (k, &g) in gt.iter().enumerate() {
        if g {
            si += (k / w) as f64;
            sj += (k % w) as f64;
        }
    }
    let cy = (si / fg as f64) as usize + 1;
    let cx = (sj / fg as f64) as usize + 1;
    let (cy, cx) = (cy.min(h), cx.min(w));
    let area = n;
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let weights = [
        (cx * cy) as f64 / area,
        ((w - cx) * cy) as f64 / area,
        (cx * (h - cy)) as f64 / area,
    ];
    let weights = [weights[0], weights[1], weights[2], 1.0 - weights[0] - weights[1] - weights[2]];
    let mut region = 0.0;
    for ((i0, i1, j0, j1), wq) in quads.into_iter().zip(weights) {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for i in i0..i1 {
            for j in j0..j1 {
                p.push(pred[i * w + j]);
                g.push(if gt[i * w + j] { 1.0 } else { 0.0 });
            }
        }
        region += wq * ssim(&p, &g);
    }
    (S_ALPHA * object + (1.0 - S_ALPHA) * region).max(0.0)
}

/// Enhanced-alignment score of a binary map against the mask.
pub fn e_measure_binary(bin: &[bool], gt: &[bool]) -> f64 {
    let n = gt.len();
    let gt_fg = gt.iter().filter(|&&g| g).count();
    let pred_fg = bin.iter().filter(|&&b| b).count();
    let sum = if gt_fg == 0 {
        (n - pred_fg) as f64
    } else if gt_fg == n {
        pred_fg as f64
    } else {
        let mp = pred_fg as f64 / n as f64;
        let mg = gt_fg as f64 / n as f64;
        let mut counts = [0usize; 4];
        for (&b, &g) in bin.iter().zip(gt) {
            counts[(!b as usize) * 2 + (!g as usize)] += 1;
        }
        let dp = [1.0 - mp, -mp];
        let dg = [1.0 - mg, -mg];
        (0..4)
            .map(|k| {
                let (a, b) = (dp[k / 2], dg[k % 2]);
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0).powi(2) / 4.0 * counts[k] as f64
            })
            .sum()
    };
    sum / n as f64
}

/// Mean of the enhanced-alignment score over 256 thresholds at bin centres
/// `(k + ½)/256`.
pub fn mean_e_measure(pred: &[f64], gt: &[bool]) -> f64 {
    (0..E_THRESHOLDS)
        .map(|k| {
            let t = (k as f64 + 0.5) / E_THRESHOLDS as f64;
            let bin: Vec<bool> = pred.iter().map(|&p| p >= t).collect();
            e_measure_binary(&bin, gt)
        })
        .sum::<f64>()
        / E_THRESHOLDS as f64
}

/// Lower envelope of the parabolas `(p − q)² + f(q)` over the finite
/// entries of `f`; writes the minimum and its site. Ties go to the lower
/// site.
fn envelope_1d(f: &[f64], d: &mut [f64], site: &mut [usize]) {
    let mut v: Vec<usize> = Vec::with_capacity(f.len());
    let mut z: Vec<f64> = Vec::with_capacity(f.len());
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        while let Some(&p) = v.last() {
            let s = ((fq + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= *z.last().expect("one boundary per site") {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    if v.is_empty() {
        d.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for p in 0..f.len() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        d[p] = ((p as f64) - q as f64).powi(2) + f[q];
        site[p] = q;
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest
/// foreground pixel, and that pixel's index. Needs a non-empty foreground.
pub fn nearest_foreground(gt: &[bool], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let n = h * w;
    let mut col_d = vec![0.0; n];
    let mut col_row = vec![0usize; n];
    let (mut f, mut d, mut site) = (vec![0.0; h], vec![0.0; h], vec![0usize; h]);
    for j in 0..w {
        for i in 0..h {
            f[i] = if gt[i * w + j] { 0.0 } else { f64::INFINITY };
        }
        envelope_1d(&f, &mut d, &mut site);
        for i in 0..h {
            col_d[i * w + j] = d[i];
            col_row[i * w + j] = site[i];
        }
    }
    let mut out_d = vec![0.0; n];
    let mut out_idx = vec![0usize; n];
    let (mut d, mut site) = (vec![0.0; w], vec![0usize; w]);
    for i in 0..h {
        let row = &col_d[i * w..(i + 1) * w];
        envelope_1d(row, &mut d, &mut site);
        for j in 0..w {
            out_d[i * w + j] = d[j];
            out_idx[i * w + j] = col_row[i * w + site[j]] * w + site[j];
        }
    }
    (out_d, out_idx)
}

/// 7×7 Gaussian with σ = 5, normalized.
fn dependency_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut s = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / 50.0).exp();
            s += *v;
        }
    }
    for row in &mut k {
        for v in row {
            *v /= s;
        }
    }
    k
}

pub fn weighted_f_measure(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let fg: Vec<usize> = (0..gt.len()).filter(|&k| gt[k]).collect();
    if fg.is_empty() {
        return 0.0;
    }
    let e: Vec<f64> = pred.iter().zip(gt).map(|(p, &g)| (p - if g { 1.0 } else { 0.0 }).abs()).collect();
    // background pixels inherit the error of their nearest foreground pixel
    let (d2, nearest) = nearest_foreground(gt, h, w);
    let et: Vec<f64> = nearest.iter().map(|&f| e[f]).collect();
    let dist: Vec<f64> = d2.iter().map(|v| v.sqrt()).collect();
    let kern = dependency_kernel();
    let mut ea = vec![0.0; gt.len()];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for (a, row) in kern.iter().enumerate() {
                let ii = i as isize + a as isize - 3;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for (b, kv) in row.iter().enumerate() {
                    let jj = j as isize + b as isize - 3;
                    if jj >= 0 && jj < w as isize {
                        s += kv * et[ii as usize * w + jj as usize];
                    }
                }
            }
            ea[i * w + j] = s;
        }
    }
    let (mut tp, mut fp, mut err_fg) = (fg.len() as f64, 0.0, 0.0);
    for k in 0..gt.len() {
        let min_e = if gt[k] && ea[k] < e[k] { ea[k] } else { e[k] };
        let b = if gt[k] { 1.0 } else { 2.0 - ((0.5f64).ln() / 5.0 * dist[k]).exp() };
        let ew = min_e * b;
        if gt[k] {
            err_fg += ew;
        } else {
            fp += ew;
        }
    }
    tp -= err_fg;
    let r = 1.0 - err_fg / fg.len() as f64;
    let p = tp / (tp + fp + EPS);
    (1.0 + F_BETA2) * r * p / (r + F_BETA2 * p + EPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(h: usize, w: usize) -> Tensor {
        Tensor::from_fn([h, w], |k| {
            let (i, j) = ((k / w) as f64 - 6.0, (k % w) as f64 - 7.0);
            if i * i + j * j < 16.0 { 1.0 } else { 0.0 }
        })
    }

    #[test]
    fn perfect_prediction() {
        let gt = disk(14, 16);
        let m = evaluate_metrics(&gt, &gt).unwrap();
        assert_eq!(m.mae, 0.0);
        for v in [m.s_measure, m.e_measure, m.wfbeta] {
            assert!((v - 1.0).abs() < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn inverted_prediction() {
        let gt = disk(14, 16);
        let m = evaluate_metrics(&gt.map(|v| 1.0 - v), &gt).unwrap();
        assert_eq!(m.mae, 1.0);
        assert!(m.s_measure < 0.1 && m.wfbeta < 1e-9);
    }

    #[test]
    fn e_measure_of_all_foreground_guess() {
        // a constant map has zero demeaned prediction, so every alignment term is 1/4
        let gt = vec![true, false, false, false];
        assert!((e_measure_binary(&[true; 4], &gt) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn e_measure_hand_computed() {
        // pred fg mean 1/2, gt fg mean 1/4; counts tp=1 fp=1 fn=0 tn=2
        let gt = [true, false, false, false];
        let bin = [true, true, false, false];
        let term = |a: f64, b: f64| (2.0 * a * b / (a * a + b * b) + 1.0).powi(2) / 4.0;
        let expect = (term(0.5, 0.75) + term(0.5, -0.25) + 2.0 * term(-0.5, -0.25)) / 4.0;
        assert!((e_measure_binary(&bin, &gt) - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_conventions() {
        let gt = Tensor::zeros([6, 6]);
        let m = evaluate_metrics(&Tensor::full([6, 6], 0.25), &gt).unwrap();
        assert!((m.s_measure - 0.75).abs() < 1e-12);
        assert_eq!(m.wfbeta, 0.0);
        assert!((evaluate_metrics(&gt, &gt).unwrap().e_measure - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatch_and_range() {
        assert!(evaluate_metrics(&Tensor::zeros([4, 4]), &Tensor::zeros([4, 5])).is_err());
        assert!(evaluate_metrics(&Tensor::full([4, 4], 1.5), &Tensor::zeros([4, 4])).is_err());
    }
}
