//! 2-D Fourier transforms, radius-based spectrum splitting, conjugate-symmetric
//! random frequency masking and the focal frequency loss.
//!
//! Spectra use the unshifted layout: DC sits at `(0, 0)`. Centering only
//! matters for the low/high radius test, which measures the distance of
//! `(min(u, H-u), min(v, W-v))` from the origin.

pub mod fft;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::data::io::write_pgm;
use crate::error::{HclError, Result};
use crate::tensor::Tensor;

/// Complex per-channel 2-D Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    channels: usize,
    height: usize,
    width: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrum {
    pub fn new(channels: usize, height: usize, width: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n = channels * height * width;
        if re.len() != n || im.len() != n {
            return Err(HclError::shape(
                "Spectrum::new",
                format!("{channels}×{height}×{width} needs {n} coefficients"),
            ));
        }
        Ok(Spectrum {
            channels,
            height,
            width,
            re,
            im,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        let n = channels * height * width;
        Spectrum {
            channels,
            height,
            width,
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    fn index(&self, c: usize, u: usize, v: usize) -> usize {
        (c * self.height + u) * self.width + v
    }

    /// Coefficient `F_c(u, v)` as `(re, im)`.
    pub fn get(&self, c: usize, u: usize, v: usize) -> (f64, f64) {
        let i = self.index(c, u, v);
        (self.re[i], self.im[i])
    }

    pub fn set(&mut self, c: usize, u: usize, v: usize, value: (f64, f64)) {
        let i = self.index(c, u, v);
        self.re[i] = value.0;
        self.im[i] = value.1;
    }

    /// `Σ |F|²` over all channels and bins.
    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).sum()
    }

    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        self.check_same(other, "Spectrum::add")?;
        Ok(Spectrum {
            re: self.re.iter().zip(&other.re).map(|(a, b)| a + b).collect(),
            im: self.im.iter().zip(&other.im).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Multiplies every channel by the same real `H×W` grid.
    pub fn mask(&self, grid: &[f64]) -> Result<Spectrum> {
        let plane = self.height * self.width;
        if grid.len() != plane {
            return Err(HclError::shape("Spectrum::mask", format!("grid of {} for {plane} bins", grid.len())));
        }
        let mut out = self.clone();
        for c in 0..self.channels {
            for k in 0..plane {
                out.re[c * plane + k] *= grid[k];
                out.im[c * plane + k] *= grid[k];
            }
        }
        Ok(out)
    }

    /// Largest `|F(u,v) − conj(F(−u,−v))|` over all bins; zero for spectra of
    /// real images.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut worst: f64 = 0.0;
        for c in 0..self.channels {
            for u in 0..h {
                for v in 0..w {
                    let (r, i) = self.get(c, u, v);
                    let (pr, pi) = self.get(c, (h - u) % h, (w - v) % w);
                    worst = worst.max((r - pr).abs()).max((i + pi).abs());
                }
            }
        }
        worst
    }

    /// `[2, C, H, W]` tensor holding real then imaginary planes.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = self.re.clone();
        data.extend_from_slice(&self.im);
        Tensor::from_parts(vec![2, self.channels, self.height, self.width], data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Spectrum> {
        let [2, c, h, w] = t.shape() else {
            return Err(HclError::shape("Spectrum::from_tensor", format!("{:?}", t.shape())));
        };
        let n = c * h * w;
        Spectrum::new(*c, *h, *w, t.data()[..n].to_vec(), t.data()[n..].to_vec())
    }

    fn check_same(&self, other: &Spectrum, op: &'static str) -> Result<()> {
        if (self.channels, self.height, self.width) != (other.channels, other.height, other.width) {
            return Err(HclError::shape(
                op,
                format!(
                    "{}×{}×{} vs {}×{}×{}",
                    self.channels, self.height, self.width, other.channels, other.height, other.width
                ),
            ));
        }
        Ok(())
    }

    /// Writes log-magnitude views of the real and imaginary planes of one
    /// channel as `<stem>_re.pgm` and `<stem>_im.pgm`, DC centered.
    pub fn dump_pgm(&self, channel: usize, stem: &Path) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        for (suffix, part) in [("re", &self.re), ("im", &self.im)] {
            let vals: Vec<f64> = part[channel * plane..(channel + 1) * plane]
                .iter()
                .map(|v| v.abs().ln_1p())
                .collect();
            let (lo, hi) = vals
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let span = if hi > lo { hi - lo } else { 1.0 };
            let mut pixels = vec![0u8; plane];
            for u in 0..h {
                for v in 0..w {
                    let su = (u + h / 2) % h;
                    let sv = (v + w / 2) % w;
                    pixels[su * w + sv] = (255.0 * (vals[u * w + v] - lo) / span).round() as u8;
                }
            }
            let name = format!("{}_{suffix}.pgm", stem.display());
            write_pgm(Path::new(&name), w, h, &pixels)?;
        }
        Ok(())
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
        [h, w] if h > 0 && w > 0 => Ok((1, h, w)),
        _ => Err(HclError::shape("dft2", format!("expected C×H×W or H×W, got {:?}", image.shape()))),
    }
}

/// Per-channel forward DFT with no normalization.
pub fn dft2(image: &Tensor) -> Result<Spectrum> {
    let (c, h, w) = image_dims(image)?;
    let plane = h * w;
    let mut re = image.data().to_vec();
    let mut im = vec![0.0; c * plane];
    for ci in 0..c {
        fft::fft2_inplace(
            &mut re[ci * plane..(ci + 1) * plane],
            &mut im[ci * plane..(ci + 1) * plane],
            h,
            w,
            false,
        );
    }
    Spectrum::new(c, h, w, re, im)
}

/// Inverse DFT with `1/(HW)` normalization, returning real and imaginary
/// planes as `C×H×W` tensors.
pub fn idft2_complex(spec: &Spectrum) -> (Tensor, Tensor) {
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let plane = h * w;
    let mut re = spec.re.clone();
    let mut im = spec.im.clone();
    for ci in 0..c {
        fft::fft2_inplace(
            &mut re[ci * plane..(ci + 1) * plane],
            &mut im[ci * plane..(ci + 1) * plane],
            h,
            w,
            true,
        );
    }
    let scale = 1.0 / plane as f64;
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= scale);
    (
        Tensor::from_parts(vec![c, h, w], re),
        Tensor::from_parts(vec![c, h, w], im),
    )
}

/// Real part of the normalized inverse DFT.
pub fn idft2(spec: &Spectrum) -> Tensor {
    idft2_complex(spec).0
}

/// Distance of bin `(u, v)` from DC after fftshift-style centering.
pub fn centered_distance(u: usize, v: usize, h: usize, w: usize) -> f64 {
    let du = u.min(h - u) as f64;
    let dv = v.min(w - v) as f64;
    (du * du + dv * dv).sqrt()
}

/// Default low/high threshold: a quarter of the half-extent.
pub fn default_radius(h: usize, w: usize) -> f64 {
    0.25 * (h.min(w) as f64 / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FreqRegion {
    Low,
    High,
}

impl FreqRegion {
    pub fn contains(self, u: usize, v: usize, h: usize, w: usize, radius: f64) -> bool {
        let low = centered_distance(u, v, h, w) <= radius;
        match self {
            FreqRegion::Low => low,
            FreqRegion::High => !low,
        }
    }

    /// `H×W` indicator grid of the region.
    pub fn grid(self, h: usize, w: usize, radius: f64) -> Vec<f64> {
        let mut g = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                if self.contains(u, v, h, w, radius) {
                    g[u * w + v] = 1.0;
                }
            }
        }
        g
    }
}

/// Splits a spectrum into bins within `radius` of DC and the rest.
pub fn split_spectrum(spec: &Spectrum, radius: f64) -> Result<(Spectrum, Spectrum)> {
    if radius.is_nan() || radius < 0.0 {
        return Err(HclError::contract(format!("radius must be >= 0, got {radius}")));
    }
    let (h, w) = (spec.height, spec.width);
    let low = spec.mask(&FreqRegion::Low.grid(h, w, radius))?;
    let high = spec.mask(&FreqRegion::High.grid(h, w, radius))?;
    Ok((low, high))
}

/// Binary frequency mask that zeroes random conjugate-symmetric pairs inside
/// one region and keeps every bin outside it.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqMask {
    pub height: usize,
    pub width: usize,
    pub region: FreqRegion,
    pub ratio: f64,
    pub radius: f64,
    pub seed: u64,
    /// Number of conjugate pairs in the region and how many were zeroed.
    pub pairs: usize,
    pub zeroed_pairs: usize,
    pub grid: Vec<f64>,
}

impl FreqMask {
    /// Fraction of region bins set to zero.
    pub fn zero_fraction_in_region(&self) -> f64 {
        let (mut total, mut zeros) = (0usize, 0usize);
        for u in 0..self.height {
            for v in 0..self.width {
                if self.region.contains(u, v, self.height, self.width, self.radius) {
                    total += 1;
                    if self.grid[u * self.width + v] == 0.0 {
                        zeros += 1;
                    }
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    }
}

pub fn make_freq_mask(
    h: usize,
    w: usize,
    region: FreqRegion,
    ratio: f64,
    radius: f64,
    seed: u64,
) -> Result<FreqMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(HclError::contract(format!("mask ratio must lie in [0,1], got {ratio}")));
    }
    if h == 0 || w == 0 {
        return Err(HclError::contract("frequency mask needs H, W >= 1"));
    }
    let mut reps = Vec::new();
    for u in 0..h {
        for v in 0..w {
            if !region.contains(u, v, h, w, radius) {
                continue;
            }
            let i = u * w + v;
            let partner = ((h - u) % h) * w + (w - v) % w;
            if i <= partner {
                reps.push((i, partner));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reps.shuffle(&mut rng);
    let n_zero = (ratio * reps.len() as f64).round() as usize;
    let mut grid = vec![1.0; h * w];
    for &(i, p) in &reps[..n_zero] {
        grid[i] = 0.0;
        grid[p] = 0.0;
    }
    Ok(FreqMask {
        height: h,
        width: w,
        region,
        ratio,
        radius,
        seed,
        pairs: reps.len(),
        zeroed_pairs: n_zero,
        grid,
    })
}

/// Degrades `image` by masking one frequency region:
/// `F̂ = F_region ⊙ M + F_rest`, inverted back to a real image.
pub fn apply_spectrum_mask(image: &Tensor, mask: &FreqMask) -> Result<Tensor> {
    let spec = dft2(image)?;
    if (spec.height, spec.width) != (mask.height, mask.width) {
        return Err(HclError::shape(
            "apply_spectrum_mask",
            format!(
                "image {}×{} vs mask {}×{}",
                spec.height, spec.width, mask.height, mask.width
            ),
        ));
    }
    let (low, high) = split_spectrum(&spec, mask.radius)?;
    let degraded = match mask.region {
        FreqRegion::Low => low.mask(&mask.grid)?.add(&high)?,
        FreqRegion::High => low.add(&high.mask(&mask.grid)?)?,
    };
    let out = idft2(&degraded);
    Ok(if image.ndim() == 2 {
        out.reshape(image.shape().to_vec())?
    } else {
        out
    })
}

/// Focal frequency loss: `(1/HW) Σ γ^β · γ²` with `γ = |F − F_gt|`, averaged
/// over channels.
pub fn focal_frequency_loss(spec: &Spectrum, gt: &Spectrum, beta: f64) -> Result<f64> {
    spec.check_same(gt, "focal_frequency_loss")?;
    if beta.is_nan() || beta < 0.0 {
        return Err(HclError::contract(format!("beta must be >= 0, got {beta}")));
    }
    let p = (beta + 2.0) / 2.0;
    let total: f64 = spec
        .re
        .iter()
        .zip(&spec.im)
        .zip(gt.re.iter().zip(&gt.im))
        .map(|((r, i), (rg, ig))| ((r - rg).powi(2) + (i - ig).powi(2)).powf(p))
        .sum();
    Ok(total / spec.re.len() as f64)
}

/// Differentiable focal frequency loss on `[2, C, H, W]` spectra produced by
/// [`Var::dft2`]. `region`, when given, is an `H×W` indicator restricting the
/// comparison to that part of the spectrum; the normalization stays `1/HW`.
pub fn focal_frequency_loss_var<'t>(
    spec: Var<'t>,
    gt: Var<'t>,
    beta: f64,
    region: Option<&[f64]>,
) -> Var<'t> {
    let shape = spec.shape();
    assert_eq!(shape, gt.shape(), "focal_frequency_loss_var shape mismatch");
    let diff = spec - gt;
    let mut dist2 = diff.square().sum_axis(0, false);
    if let Some(grid) = region {
        let (h, w) = (shape[2], shape[3]);
        let mask = Tensor::new([h, w], grid.to_vec()).expect("region grid must be H×W");
        dist2 = dist2.mul_const(mask);
    }
    dist2.powf((beta + 2.0) / 2.0).mean()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_transforms_to_ones() {
        let mut x = Tensor::zeros([1, 4, 4]);
        x.data_mut()[0] = 1.0;
        let s = dft2(&x).unwrap();
        assert!(s.re().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(s.im().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.3;
        let s = dft2(&Tensor::full([1, 4, 4], c)).unwrap();
        assert!((s.get(0, 0, 0).0 - 16.0 * c).abs() < 1e-12);
        for u in 0..4 {
            for v in 0..4 {
                if (u, v) != (0, 0) {
                    let (r, i) = s.get(0, u, v);
                    assert!(r.abs() < 1e-12 && i.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dc_only_inverse_is_constant_one() {
        let mut s = Spectrum::zeros(1, 4, 6);
        s.set(0, 0, 0, (24.0, 0.0));
        let x = idft2(&s);
        assert!(x.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn split_boundaries() {
        let x = Tensor::from_fn([1, 8, 8], |i| ((i * 37) % 11) as f64);
        let s = dft2(&x).unwrap();
        let (low, high) = split_spectrum(&s, 0.0).unwrap();
        for u in 0..8 {
            for v in 0..8 {
                let l = low.get(0, u, v);
                if (u, v) == (0, 0) {
                    assert_eq!(l, s.get(0, 0, 0));
                    assert_eq!(high.get(0, 0, 0), (0.0, 0.0));
                } else {
                    assert_eq!(l, (0.0, 0.0));
                }
            }
        }
        let (low, high) = split_spectrum(&s, 100.0).unwrap();
        assert_eq!(low, s);
        assert_eq!(high.energy(), 0.0);
        assert!(split_spectrum(&s, -1.0).is_err());
    }

    #[test]
    fn freq_mask_edge_ratios() {
        let m = make_freq_mask(16, 16, FreqRegion::Low, 0.0, 4.0, 1).unwrap();
        assert!(m.grid.iter().all(|&g| g == 1.0));
        let m = make_freq_mask(16, 16, FreqRegion::Low, 1.0, 4.0, 1).unwrap();
        for u in 0..16 {
            for v in 0..16 {
                let inside = FreqRegion::Low.contains(u, v, 16, 16, 4.0);
                assert_eq!(m.grid[u * 16 + v], if inside { 0.0 } else { 1.0 });
            }
        }
        assert!(make_freq_mask(8, 8, FreqRegion::High, 1.5, 2.0, 0).is_err());
        assert!(make_freq_mask(8, 8, FreqRegion::High, -0.1, 2.0, 0).is_err());
    }

    #[test]
    fn freq_mask_is_deterministic_and_symmetric() {
        let a = make_freq_mask(32, 32, FreqRegion::High, 0.25, 4.0, 99).unwrap();
        let b = make_freq_mask(32, 32, FreqRegion::High, 0.25, 4.0, 99).unwrap();
        assert_eq!(a, b);
        for u in 0..32 {
            for v in 0..32 {
                assert_eq!(a.grid[u * 32 + v], a.grid[((32 - u) % 32) * 32 + (32 - v) % 32]);
            }
        }
    }

    #[test]
    fn ffl_closed_forms() {
        let a = Spectrum::new(1, 1, 1, vec![3.0], vec![4.0]).unwrap();
        let z = Spectrum::zeros(1, 1, 1);
        assert_eq!(focal_frequency_loss(&a, &z, 1.0).unwrap(), 125.0);
        assert_eq!(focal_frequency_loss(&a, &a, 1.0).unwrap(), 0.0);
        let b = Spectrum::new(1, 1, 2, vec![1.0, 0.0], vec![0.0, 2.0]).unwrap();
        let z2 = Spectrum::zeros(1, 1, 2);
        assert_eq!(focal_frequency_loss(&b, &z2, 0.0).unwrap(), 2.5);
    }
}
