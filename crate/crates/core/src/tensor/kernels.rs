//! Slice-level numeric kernels shared by the eager tensor API and the tape.
//!
//! Everything here is single-threaded with a fixed accumulation order so that
//! identical inputs always give bit-identical outputs.

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// `c[m×n] = a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut c[i * n..(i + 1) * n];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += api * bj;
            }
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }
}

/// Unfolds `x[C×H×W]` into columns `[C·kh·kw × Ho·Wo]`, zero padded.
pub fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let cols = ho * wo;
    let mut out = vec![0.0; g.patch_len() * cols];
    for c in 0..g.channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oi in 0..ho {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let src = &x[(c * g.height + ii as usize) * g.width..];
                    for oj in 0..wo {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        if jj >= 0 && jj < g.width as isize {
                            dst[oi * wo + oj] = src[jj as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
pub fn col2im(cols_data: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let cols = ho * wo;
    let mut out = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols_data[row * cols..(row + 1) * cols];
                for oi in 0..ho {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let base = (c * g.height + ii as usize) * g.width;
                    for oj in 0..wo {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        if jj >= 0 && jj < g.width as isize {
                            out[base + jj as usize] += src[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Numpy-style broadcast of two shapes (trailing alignment, size-1 expansion).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Element strides of `shape` viewed inside the broadcast shape `out`;
/// broadcast dimensions get stride 0.
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let mut strides = vec![0; n];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + n - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every index of `out`, passing the linear output index and the
/// matching offsets into two broadcast operands.
pub fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let nd = out.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for i in 0..total {
        f(i, oa, ob);
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums a tensor of shape `from` down to the broadcast-compatible `to`.
pub fn reduce_to_shape(data: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return data.to_vec();
    }
    let numel: usize = to.iter().product();
    let mut out = vec![0.0; numel];
    let st = broadcast_strides(to, from);
    let zero = vec![0; from.len()];
    for_each_broadcast(from, &st, &zero, |i, o, _| out[o] += data[i]);
    out
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_axis(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for k in 0..len {
                mx = mx.max(data[at(k)]);
            }
            let mut s = 0.0;
            for k in 0..len {
                let e = (data[at(k)] - mx).exp();
                out[at(k)] = e;
                s += e;
            }
            for k in 0..len {
                out[at(k)] /= s;
            }
        }
    }
    out
}

pub fn sum_axis(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let src = &data[(o * len + k) * inner..(o * len + k + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

pub fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let nd = shape.len();
    let mut in_strides = vec![1; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let zero = vec![0; nd];
    let mut out = vec![0.0; data.len()];
    for_each_broadcast(&out_shape, &src_strides, &zero, |i, o, _| out[i] = data[o]);
    (out, out_shape)
}

/// Inverse permutation of `axes`.
pub fn invert_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[3, 1], &[4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 - 2.5).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect(); // 3×4
        let c = gemm_nn(&a, &b, 2, 3, 4);
        let (bt, _) = permute(&b, &[3, 4], &[1, 0]);
        assert_eq!(c, gemm_nt(&a, &bt, 2, 3, 4));
        let (at, _) = permute(&a, &[2, 3], &[1, 0]);
        let c2 = gemm_tn(&at, &b, 2, 3, 4);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry {
            channels: 2,
            height: 5,
            width: 4,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 / 3.0).collect();
        let cols = im2col(&x, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 5) % 13) as f64 - 6.0).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, &g);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
