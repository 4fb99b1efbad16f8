//! Dense row-major `f64` tensors.

pub mod kernels;

use crate::error::{HclError, Result};
use kernels::ConvGeometry;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(HclError::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Like [`Tensor::new`] for callers that have already sized `data`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise binary map with broadcasting.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        let out = kernels::broadcast_shape(&self.shape, &other.shape).ok_or_else(|| {
            HclError::shape(
                "broadcast",
                format!("{:?} vs {:?}", self.shape, other.shape),
            )
        })?;
        let sa = kernels::broadcast_strides(&self.shape, &out);
        let sb = kernels::broadcast_strides(&other.shape, &out);
        let mut data = vec![0.0; out.iter().product()];
        kernels::for_each_broadcast(&out, &sa, &sb, |i, a, b| {
            data[i] = f(self.data[a], other.data[b]);
        });
        Ok(Tensor::from_parts(out, data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|v| **v < 0.0 || v.is_nan()) {
            return Err(HclError::Domain {
                op: "log",
                detail: format!("argument {v}"),
            });
        }
        Ok(self.map(f64::ln))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|v| **v < 0.0 || v.is_nan()) {
            return Err(HclError::Domain {
                op: "sqrt",
                detail: format!("argument {v}"),
            });
        }
        Ok(self.map(f64::sqrt))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.check_axis(axis, "sum_axis")?;
        let data = kernels::sum_axis(&self.data, &self.shape, axis);
        Ok(Tensor::from_parts(reduced_shape(&self.shape, axis, keepdim), data))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis, "softmax")?;
        let data = kernels::softmax_axis(&self.data, &self.shape, axis);
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// 2-D `[m×k]·[k×n]` or batched 3-D `[b×m×k]·[b×k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (batch, m, k, n) = matmul_dims(&self.shape, &other.shape)?;
        let mut data = Vec::with_capacity(batch * m * n);
        for bi in 0..batch {
            let a = &self.data[bi * m * k..(bi + 1) * m * k];
            let b = &other.data[bi * k * n..(bi + 1) * k * n];
            data.extend(kernels::gemm_nn(a, b, m, k, n));
        }
        let shape = if self.ndim() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        check_permutation(axes, self.ndim())?;
        let (data, shape) = kernels::permute(&self.data, &self.shape, axes);
        Ok(Tensor::from_parts(shape, data))
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(HclError::shape("transpose", format!("{:?}", self.shape)));
        }
        self.permute(&[1, 0])
    }

    /// `x[C×H×W] ⊛ w[O×C×kh×kw] (+ bias[O])`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let g = conv_geometry(&self.shape, &weight.shape, stride, padding)?;
        let out_c = weight.shape[0];
        if let Some(b) = bias {
            if b.shape != [out_c] {
                return Err(HclError::shape("conv2d", format!("bias {:?}", b.shape)));
            }
        }
        let cols = kernels::im2col(&self.data, &g);
        let hw = g.out_h() * g.out_w();
        let mut out = kernels::gemm_nn(&weight.data, &cols, out_c, g.patch_len(), hw);
        if let Some(b) = bias {
            for (o, chunk) in out.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b.data[o]);
            }
        }
        Ok(Tensor::from_parts(vec![out_c, g.out_h(), g.out_w()], out))
    }

    /// Channel `c` of a `C×H×W` tensor as an `H×W` tensor.
    pub fn channel(&self, c: usize) -> Tensor {
        assert_eq!(self.ndim(), 3);
        let hw = self.shape[1] * self.shape[2];
        Tensor::from_parts(
            vec![self.shape[1], self.shape[2]],
            self.data[c * hw..(c + 1) * hw].to_vec(),
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| HclError::contract("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(HclError::shape("stack", format!("{:?} vs {:?}", p.shape, first.shape)));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.ndim() {
            return Err(HclError::shape(op, format!("axis {axis} for shape {:?}", self.shape)));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((1, *m, *k, *n)),
        ([ba, m, k], [bb, k2, n]) if k == k2 && ba == bb => Ok((*ba, *m, *k, *n)),
        _ => Err(HclError::shape("matmul", format!("{a:?} · {b:?}"))),
    }
}

pub(crate) fn check_permutation(axes: &[usize], ndim: usize) -> Result<()> {
    let mut seen = vec![false; ndim];
    if axes.len() != ndim {
        return Err(HclError::shape("permute", format!("{axes:?} for rank {ndim}")));
    }
    for &a in axes {
        if a >= ndim || seen[a] {
            return Err(HclError::shape("permute", format!("{axes:?} is not a permutation")));
        }
        seen[a] = true;
    }
    Ok(())
}

pub(crate) fn conv_geometry(
    x: &[usize],
    w: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let ([c, h, wd], [_, wc, kh, kw]) = (x, w) else {
        return Err(HclError::shape("conv2d", format!("input {x:?}, weight {w:?}")));
    };
    if c != wc || stride == 0 || h + 2 * padding < *kh || wd + 2 * padding < *kw {
        return Err(HclError::shape(
            "conv2d",
            format!("input {x:?}, weight {w:?}, stride {stride}, padding {padding}"),
        ));
    }
    Ok(ConvGeometry {
        channels: *c,
        height: *h,
        width: *wd,
        kernel_h: *kh,
        kernel_w: *kw,
        stride,
        padding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn constant_conv_interior_is_nine_c() {
        let c = 0.7;
        let x = Tensor::full([1, 5, 5], c);
        let w = Tensor::ones([1, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        for v in y.data() {
            assert!((v - 9.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn log_and_sqrt_of_negative_are_domain_errors() {
        let x = Tensor::new([2], vec![1.0, -1.0]).unwrap();
        assert!(matches!(x.log(), Err(HclError::Domain { .. })));
        assert!(matches!(x.sqrt(), Err(HclError::Domain { .. })));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Tensor::new([2], vec![3.0, 3.0]).unwrap();
        assert_eq!(x.softmax(0).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn broadcast_mismatch_is_an_error() {
        let a = Tensor::zeros([2, 3]);
        let b = Tensor::zeros([2]);
        assert!(matches!(a.add(&b), Err(HclError::Shape { .. })));
    }
}
