//! Parameterized layers over the tape: linear, convolution, instance and
//! layer normalization, and a two-layer perceptron.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

/// Seeded source of initial parameter values.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `U(−1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape.to_vec(), |_| self.rng.random_range(-bound..bound))
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape.to_vec(), |_| dist.sample(&mut self.rng))
    }

    pub fn uniform_scalar(&mut self, bound: f64) -> f64 {
        self.rng.random_range(-bound..bound)
    }
}

/// Tape plus the store its parameters are read from.
#[derive(Clone, Copy)]
pub struct Ctx<'t, 's> {
    pub tape: &'t Tape,
    pub store: &'s ParamStore,
}

impl<'t, 's> Ctx<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Ctx { tape, store }
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        self.tape.param(self.store, id)
    }
}

/// `y = x W + b` on `N×in` rows.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: store.add(format!("{name}.weight"), ParamKind::Weight, init.fan_in(&[d_in, d_out], d_in)),
            b: store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros([d_out])),
        }
    }

    pub fn forward<'t>(&self, cx: Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        x.matmul(cx.p(self.w)) + cx.p(self.b)
    }
}

/// Linear, ReLU, linear.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Mlp {
            l1: Linear::new(store, init, &format!("{name}.fc1"), d_in, hidden),
            l2: Linear::new(store, init, &format!("{name}.fc2"), hidden, d_out),
        }
    }

    pub fn forward<'t>(&self, cx: Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        self.l2.forward(cx, self.l1.forward(cx, x).relu())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan = c_in * kernel * kernel;
        Conv {
            w: store.add(
                format!("{name}.weight"),
                ParamKind::Weight,
                init.fan_in(&[c_out, c_in, kernel, kernel], fan),
            ),
            b: store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros([c_out])),
            stride,
            padding,
        }
    }

    pub fn forward<'t>(&self, cx: Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        x.conv2d(cx.p(self.w), Some(cx.p(self.b)), self.stride, self.padding)
    }
}

/// Per-channel normalization over the spatial extent of one sample, with a
/// learnable affine.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Norm {
            scale: store.add(format!("{name}.scale"), ParamKind::NormScale, Tensor::ones([channels, 1])),
            shift: store.add(format!("{name}.shift"), ParamKind::NormShift, Tensor::zeros([channels, 1])),
        }
    }

    pub fn forward<'t>(&self, cx: Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        let s = x.shape();
        let (c, hw) = (s[0], s[1] * s[2]);
        let flat = x.reshape(&[c, hw]);
        let centered = flat - flat.mean_axis(1, true);
        let var = centered.square().mean_axis(1, true);
        let normed = centered / var.add_scalar(NORM_EPS).sqrt();
        (normed * cx.p(self.scale) + cx.p(self.shift)).reshape(&s)
    }
}

/// Layer normalization over the last axis of `N×E` rows.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.scale"), ParamKind::NormScale, Tensor::ones([dim])),
            beta: store.add(format!("{name}.shift"), ParamKind::NormShift, Tensor::zeros([dim])),
        }
    }

    pub fn forward<'t>(&self, cx: Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        let centered = x - x.mean_axis(1, true);
        let var = centered.square().mean_axis(1, true);
        centered / var.add_scalar(NORM_EPS).sqrt() * cx.p(self.gamma) + cx.p(self.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_output_is_standardized() {
        let mut store = ParamStore::new();
        let norm = Norm::new(&mut store, "n", 2);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([2, 3, 3], |i| (i * i) as f64 * 0.1));
        let y = norm.forward(Ctx::new(&tape, &store), x).value();
        for c in 0..2 {
            let ch = &y.data()[c * 9..(c + 1) * 9];
            let mean = ch.iter().sum::<f64>() / 9.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn norm_is_invariant_to_contrast() {
        let mut store = ParamStore::new();
        let norm = Norm::new(&mut store, "n", 1);
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &store);
        let x = Tensor::from_fn([1, 4, 4], |i| ((i * 5) % 7) as f64);
        let a = norm.forward(cx, tape.constant(x.clone())).value();
        let b = norm.forward(cx, tape.constant(x.map(|v| 0.5 * v + 2.0))).value();
        assert!(a.max_abs_diff(&b) < 1e-5);
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(Init::new(4).fan_in(&[3, 3], 9), Init::new(4).fan_in(&[3, 3], 9));
    }
}
