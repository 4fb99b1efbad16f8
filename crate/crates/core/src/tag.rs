//! Task affinity guidance: channel non-local affinities of the detection and
//! reconstruction features are fused by a two-token self-attention, filtered
//! to the strongest positions and used to correct the detection feature.

use crate::autograd::{Tape, Var};
use crate::error::{HclError, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Row-stochastic `C×C` channel affinity.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMap {
    pub channels: usize,
    pub matrix: Tensor,
}

/// Fusion weights after Top-K filtering; dropped positions are zero in both.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    pub w1: Tensor,
    pub w2: Tensor,
    pub keep_fraction: f64,
    pub retained: Vec<bool>,
}

/// Elementwise affine projections of the fusion attention, shared by both
/// tokens. `T` is a parameter id, a tape variable or a plain tensor.
#[derive(Clone, Copy, Debug)]
pub struct Projection<T> {
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
}

impl Projection<ParamId> {
    /// Registers `prefix.{wq,bq,wk,bk,wv,bv}`, each `C×C`.
    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize, init: &mut impl FnMut(usize) -> f64) -> Self {
        let mut add = |name: &str, kind: ParamKind, weight: bool| {
            let t = if weight {
                Tensor::from_fn([channels, channels], &mut *init)
            } else {
                Tensor::zeros([channels, channels])
            };
            store.add(format!("{prefix}.{name}"), kind, t)
        };
        Projection {
            wq: add("wq", ParamKind::Weight, true),
            bq: add("bq", ParamKind::Bias, false),
            wk: add("wk", ParamKind::Weight, true),
            bk: add("bk", ParamKind::Bias, false),
            wv: add("wv", ParamKind::Weight, true),
            bv: add("bv", ParamKind::Bias, false),
        }
    }

    pub fn vars<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Projection<Var<'t>> {
        let p = |id| tape.param(store, id);
        Projection {
            wq: p(self.wq),
            bq: p(self.bq),
            wk: p(self.wk),
            bk: p(self.bk),
            wv: p(self.wv),
            bv: p(self.bv),
        }
    }

    pub fn ids(&self) -> [ParamId; 6] {
        [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv]
    }
}

impl Projection<Tensor> {
    /// Projection with every weight equal to `w` and zero biases.
    pub fn uniform(channels: usize, w: f64) -> Self {
        let wt = Tensor::full([channels, channels], w);
        let zero = Tensor::zeros([channels, channels]);
        Projection {
            wq: wt.clone(),
            bq: zero.clone(),
            wk: wt.clone(),
            bk: zero.clone(),
            wv: wt,
            bv: zero,
        }
    }

    pub fn vars<'t>(&self, tape: &'t Tape) -> Projection<Var<'t>> {
        let c = |t: &Tensor| tape.constant(t.clone());
        Projection {
            wq: c(&self.wq),
            bq: c(&self.bq),
            wk: c(&self.wk),
            bk: c(&self.bk),
            wv: c(&self.wv),
            bv: c(&self.bv),
        }
    }
}

/// `A = softmax_rows(X_f X_fᵀ / sqrt(HW))` and `X̂ = A · X_f` reshaped back.
pub fn channel_nonlocal_var<'t>(x: Var<'t>) -> (Var<'t>, Var<'t>) {
    let s = x.shape();
    assert_eq!(s.len(), 3, "channel_nonlocal expects C×H×W, got {s:?}");
    let (c, hw) = (s[0], s[1] * s[2]);
    let xf = x.reshape(&[c, hw]);
    let a = xf.matmul(xf.t()).scale(1.0 / (hw as f64).sqrt()).softmax(1);
    let x_hat = a.matmul(xf).reshape(&s);
    (x_hat, a)
}

pub fn channel_nonlocal(x: &Tensor) -> Result<(Tensor, AffinityMap)> {
    if x.ndim() != 3 || x.shape()[0] == 0 {
        return Err(HclError::shape("channel_nonlocal", format!("{:?}", x.shape())));
    }
    let tape = Tape::new();
    let (x_hat, a) = channel_nonlocal_var(tape.constant(x.clone()));
    Ok((
        (*x_hat.value()).clone(),
        AffinityMap {
            channels: x.shape()[0],
            matrix: (*a.value()).clone(),
        },
    ))
}

/// Indicator of the `round(keep · n)` largest scores; ties keep the earlier
/// position.
pub fn top_k_mask(scores: &[f64], keep_fraction: f64) -> Vec<bool> {
    let n = scores.len();
    let k = ((keep_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = vec![false; n];
    for &i in &order[..k] {
        keep[i] = true;
    }
    keep
}

/// Two-token self-attention over the flattened affinities followed by a
/// branch-wise softmax and Top-K filtering. Returns `(W¹, W²)` as `C×C`
/// vars and the retained-position indicator.
pub fn fuse_affinities_var<'t>(
    a: Var<'t>,
    a_rec: Var<'t>,
    keep_fraction: f64,
    proj: &Projection<Var<'t>>,
) -> (Var<'t>, Var<'t>, Vec<bool>) {
    let c = a.shape()[0];
    assert_eq!(a.shape(), a_rec.shape(), "affinity shapes differ");
    assert!(
        keep_fraction > 0.0 && keep_fraction <= 1.0,
        "keep fraction must lie in (0,1], got {keep_fraction}"
    );
    let n = c * c;
    let tokens = Var::concat(&[a.reshape(&[1, n]), a_rec.reshape(&[1, n])], 0).scale(c as f64);
    let flat = |v: Var<'t>| v.reshape(&[n]);
    let q = tokens * flat(proj.wq) + flat(proj.bq);
    let k = tokens * flat(proj.wk) + flat(proj.bk);
    let v = tokens * flat(proj.wv) + flat(proj.bv);
    let attn = q.matmul(k.t()).scale(1.0 / (n as f64).sqrt()).softmax(1);
    let w = attn.matmul(v).softmax(0);
    let (w1, w2) = (w.slice(0, 0, 1), w.slice(0, 1, 2));
    let w1v = w1.value();
    let w2v = w2.value();
    let rank: Vec<f64> = w1v.data().iter().zip(w2v.data()).map(|(x, y)| x.max(*y)).collect();
    let retained = top_k_mask(&rank, keep_fraction);
    let mask = Tensor::new([1, n], retained.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect())
        .expect("mask shape");
    let w1 = w1.mul_const(mask.clone()).reshape(&[c, c]);
    let w2 = w2.mul_const(mask).reshape(&[c, c]);
    (w1, w2, retained)
}

pub fn fuse_affinities(
    a: &AffinityMap,
    a_rec: &AffinityMap,
    keep_fraction: f64,
    proj: &Projection<Tensor>,
) -> Result<FusionWeights> {
    if a.channels != a_rec.channels {
        return Err(HclError::shape(
            "fuse_affinities",
            format!("{} vs {} channels", a.channels, a_rec.channels),
        ));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(HclError::contract(format!(
            "keep fraction must lie in (0,1], got {keep_fraction}"
        )));
    }
    let tape = Tape::new();
    let (w1, w2, retained) = fuse_affinities_var(
        tape.constant(a.matrix.clone()),
        tape.constant(a_rec.matrix.clone()),
        keep_fraction,
        &proj.vars(&tape),
    );
    Ok(FusionWeights {
        w1: (*w1.value()).clone(),
        w2: (*w2.value()).clone(),
        keep_fraction,
        retained,
    })
}

/// `X + reshape((W¹⊙A + W²⊙A_rec) · flatten(X̂))`.
pub fn apply_guidance_var<'t>(
    x: Var<'t>,
    x_hat: Var<'t>,
    a: Var<'t>,
    a_rec: Var<'t>,
    w1: Var<'t>,
    w2: Var<'t>,
) -> Var<'t> {
    let s = x.shape();
    let (c, hw) = (s[0], s[1] * s[2]);
    let a_upd = w1 * a + w2 * a_rec;
    x + a_upd.matmul(x_hat.reshape(&[c, hw])).reshape(&s)
}

pub fn apply_guidance(
    x: &Tensor,
    x_hat: &Tensor,
    a: &AffinityMap,
    a_rec: &AffinityMap,
    weights: &FusionWeights,
) -> Result<Tensor> {
    let c = a.channels;
    if x.ndim() != 3 || x.shape()[0] != c || x.shape() != x_hat.shape() || weights.w1.shape() != [c, c] {
        return Err(HclError::shape("apply_guidance", format!("{:?}", x.shape())));
    }
    let tape = Tape::new();
    let k = |t: &Tensor| tape.constant(t.clone());
    let out = apply_guidance_var(
        k(x),
        k(x_hat),
        k(&a.matrix),
        k(&a_rec.matrix),
        k(&weights.w1),
        k(&weights.w2),
    );
    Ok((*out.value()).clone())
}

/// One guidance step: `x` is corrected with the affinity of `x_rec`.
pub fn tag_guide<'t>(x: Var<'t>, x_rec: Var<'t>, keep_fraction: f64, proj: &Projection<Var<'t>>) -> Var<'t> {
    let (x_hat, a) = channel_nonlocal_var(x);
    let (_, a_rec) = channel_nonlocal_var(x_rec);
    let (w1, w2, _) = fuse_affinities_var(a, a_rec, keep_fraction, proj);
    apply_guidance_var(x, x_hat, a, a_rec, w1, w2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_is_identity() {
        let x = Tensor::from_fn([1, 3, 3], |i| i as f64 * 0.2 - 0.5);
        let (x_hat, a) = channel_nonlocal(&x).unwrap();
        assert_eq!(a.matrix.data(), &[1.0]);
        assert!(x_hat.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn identical_channels_average() {
        let ch: Vec<f64> = (0..4).map(|i| i as f64 * 0.3).collect();
        let x = Tensor::new([2, 2, 2], [ch.clone(), ch.clone()].concat()).unwrap();
        let (x_hat, a) = channel_nonlocal(&x).unwrap();
        assert!(a.matrix.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(x_hat.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn top_k_rank_selection() {
        assert_eq!(top_k_mask(&[0.1, 0.9, 0.4, 0.6], 0.5), [false, true, false, true]);
        assert_eq!(top_k_mask(&[0.3; 4], 1.0), [true; 4]);
    }

    #[test]
    fn equal_affinities_split_evenly() {
        let x = Tensor::from_fn([3, 2, 2], |i| ((i * 7) % 5) as f64 * 0.1);
        let (_, a) = channel_nonlocal(&x).unwrap();
        let w = fuse_affinities(&a, &a, 0.7, &Projection::uniform(3, 0.8)).unwrap();
        let kept = w.retained.iter().filter(|r| **r).count();
        assert_eq!(kept, 6);
        for (i, &r) in w.retained.iter().enumerate() {
            let expect = if r { 0.5 } else { 0.0 };
            assert!((w.w1.data()[i] - expect).abs() < 1e-12);
            assert!((w.w2.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_leave_feature_unchanged() {
        let x = Tensor::from_fn([2, 2, 3], |i| i as f64 - 4.0);
        let (x_hat, a) = channel_nonlocal(&x).unwrap();
        let w = FusionWeights {
            w1: Tensor::zeros([2, 2]),
            w2: Tensor::zeros([2, 2]),
            keep_fraction: 1.0,
            retained: vec![false; 4],
        };
        assert_eq!(apply_guidance(&x, &x_hat, &a, &a, &w).unwrap(), x);
    }
}
