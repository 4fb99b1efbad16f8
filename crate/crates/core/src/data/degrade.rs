//! Test-time corruptions: additive Gaussian noise, Gaussian blur and
//! contrast reduction at five severities.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{HclError, Result};
use crate::tensor::Tensor;

pub const NOISE_SIGMA: [f64; 5] = [0.02, 0.04, 0.08, 0.12, 0.18];
pub const BLUR_SIGMA: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 4.0];
pub const CONTRAST: [f64; 5] = [0.8, 0.6, 0.4, 0.3, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationKind {
    Gn,
    Gb,
    Cr,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 3] = [DegradationKind::Gn, DegradationKind::Gb, DegradationKind::Cr];

    pub fn as_str(self) -> &'static str {
        match self {
            DegradationKind::Gn => "gn",
            DegradationKind::Gb => "gb",
            DegradationKind::Cr => "cr",
        }
    }

    /// Operator parameter for a severity in `1..=5`.
    pub fn parameter(self, severity: u8) -> Result<f64> {
        if !(1..=5).contains(&severity) {
            return Err(HclError::Usage(format!("severity must be in 1..=5, got {severity}")));
        }
        let i = severity as usize - 1;
        Ok(match self {
            DegradationKind::Gn => NOISE_SIGMA[i],
            DegradationKind::Gb => BLUR_SIGMA[i],
            DegradationKind::Cr => CONTRAST[i],
        })
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegradationKind {
    type Err = HclError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gn" => Ok(DegradationKind::Gn),
            "gb" => Ok(DegradationKind::Gb),
            "cr" => Ok(DegradationKind::Cr),
            other => Err(HclError::Usage(format!("unknown degradation `{other}` (expected gn, gb or cr)"))),
        }
    }
}

/// A degradation kind at a given severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Degradation {
    pub kind: DegradationKind,
    pub severity: u8,
}

impl Degradation {
    pub fn new(kind: DegradationKind, severity: u8) -> Result<Self> {
        kind.parameter(severity)?;
        Ok(Degradation { kind, severity })
    }

    pub fn apply(&self, image: &Tensor, seed: u64) -> Result<Tensor> {
        degrade(image, self.kind, self.severity, seed)
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, self.severity)
    }
}

/// Normalized 1-D Gaussian of length `2·ceil(3σ)+1`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mirror index without edge repetition (`-1 → 1`, `n → n-2`).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn blur(image: &Tensor, sigma: f64) -> Tensor {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = image.data();
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                tmp[base + i * w + j] = k
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * src[base + i * w + reflect(j as isize + t as isize - r, w)])
                    .sum();
            }
        }
        for i in 0..h {
            for j in 0..w {
                out[base + i * w + j] = k
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * tmp[base + reflect(i as isize + t as isize - r, h) * w + j])
                    .sum();
            }
        }
    }
    Tensor::new(s.to_vec(), out).unwrap()
}

/// Applies `kind` at `severity` to a `C×H×W` image in `[0,1]`. Only the
/// noise draw depends on `seed`.
pub fn degrade(image: &Tensor, kind: DegradationKind, severity: u8, seed: u64) -> Result<Tensor> {
    let p = kind.parameter(severity)?;
    if image.ndim() != 3 {
        return Err(HclError::shape("degrade", format!("expected C×H×W, got {:?}", image.shape())));
    }
    Ok(match kind {
        DegradationKind::Gn => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, p).unwrap();
            let data = image.data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
            Tensor::new(image.shape().to_vec(), data)?
        }
        DegradationKind::Gb => blur(image, p),
        DegradationKind::Cr => contrast(image, p),
    })
}

/// `x → (x − mean)·c + mean` with the mean over all channels.
pub fn contrast(image: &Tensor, c: f64) -> Tensor {
    let mean = image.mean();
    image.map(|x| (x - mean) * c + mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tensor {
        Tensor::from_fn([3, 12, 10], |k| ((k * 37) % 101) as f64 / 100.0)
    }

    #[test]
    fn kernel_is_normalized() {
        for s in BLUR_SIGMA {
            let k = gaussian_kernel(s);
            assert_eq!(k.len(), 2 * (3.0 * s).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_contrast_is_identity() {
        let x = ramp();
        assert!(contrast(&x, 1.0).max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn reflect_mirrors() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, [3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn blur_matches_direct_2d_sum() {
        let x = ramp();
        let y = degrade(&x, DegradationKind::Gb, 2, 0).unwrap();
        let k = gaussian_kernel(1.0);
        let r = (k.len() / 2) as isize;
        let (i, j) = (0usize, 9usize);
        let mut expect = 0.0;
        for (a, ka) in k.iter().enumerate() {
            for (b, kb) in k.iter().enumerate() {
                let ii = reflect(i as isize + a as isize - r, 12);
                let jj = reflect(j as isize + b as isize - r, 10);
                expect += ka * kb * x.data()[12 * 10 + ii * 10 + jj];
            }
        }
        assert!((y.data()[12 * 10 + i * 10 + j] - expect).abs() < 1e-12);
    }

    #[test]
    fn noise_is_seeded_and_centered() {
        let x = Tensor::full([1, 128, 128], 0.5);
        let a = degrade(&x, DegradationKind::Gn, 1, 9).unwrap();
        assert_eq!(a, degrade(&x, DegradationKind::Gn, 1, 9).unwrap());
        assert_ne!(a, degrade(&x, DegradationKind::Gn, 1, 10).unwrap());
        assert!((a.mean() - 0.5).abs() < 0.01);
    }

    #[test]
    fn rejects_unknown_kind_and_severity() {
        assert!(matches!("xx".parse::<DegradationKind>(), Err(HclError::Usage(_))));
        assert!(matches!(degrade(&ramp(), DegradationKind::Cr, 6, 0), Err(HclError::Usage(_))));
        assert!(matches!(Degradation::new(DegradationKind::Gb, 0), Err(HclError::Usage(_))));
    }
}
