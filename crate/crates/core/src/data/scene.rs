//! Synthetic camouflage scenes: a smooth random blob whose texture blends
//! into a band-limited background by a controllable amount.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{HclError, Result};
use crate::spectral::fft::fft2_inplace;
use crate::tensor::Tensor;

pub const MIN_COVERAGE: f64 = 0.05;
pub const MAX_COVERAGE: f64 = 0.60;
const MAX_RETRIES: usize = 100;

/// Background texture band, in cycles per pixel.
pub const BACKGROUND_BAND: (f64, f64) = (0.02, 0.09);
/// Band of the independent foreground texture.
pub const FOREGROUND_BAND: (f64, f64) = (0.14, 0.32);
const TEXTURE_AMPLITUDE: f64 = 0.14;
const TINT: f64 = 0.10;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    /// 0 gives a foreground indistinguishable from the background, 1 a
    /// fully independent foreground texture.
    pub camouflage: f64,
    /// Number of Fourier harmonics of the blob contour.
    pub harmonics: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(size: usize, camouflage: f64, seed: u64) -> Self {
        SceneSpec {
            size,
            camouflage,
            harmonics: 4,
            seed,
        }
    }
}

/// Zero-mean, unit-variance random texture whose spectrum is confined to
/// radial frequencies in `band` (cycles per pixel).
pub fn band_limited_texture(rng: &mut impl Rng, h: usize, w: usize, band: (f64, f64)) -> Vec<f64> {
    let mut re: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(rng)).collect();
    let mut im = vec![0.0; h * w];
    fft2_inplace(&mut re, &mut im, h, w, false);
    for u in 0..h {
        let fu = u.min(h - u) as f64 / h as f64;
        for v in 0..w {
            let fv = v.min(w - v) as f64 / w as f64;
            let f = (fu * fu + fv * fv).sqrt();
            if f < band.0 || f > band.1 {
                re[u * w + v] = 0.0;
                im[u * w + v] = 0.0;
            }
        }
    }
    fft2_inplace(&mut re, &mut im, h, w, true);
    let n = (h * w) as f64;
    let mean = re.iter().sum::<f64>() / n;
    let std = (re.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };
    re.iter().map(|v| (v - mean) / std).collect()
}

/// Closed contour `r(θ) = R₀(1 + Σ a_k cos(kθ + φ_k))` around a random
/// centre, rasterized as an inside indicator.
fn blob(rng: &mut impl Rng, size: usize, harmonics: usize) -> Vec<f64> {
    let s = size as f64;
    let r0 = rng.random_range(0.14..0.34) * s;
    let cx = rng.random_range(0.3..0.7) * s;
    let cy = rng.random_range(0.3..0.7) * s;
    let coeffs: Vec<(f64, f64)> = (1..=harmonics)
        .map(|k| (rng.random_range(0.0..0.25 / k as f64), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let mut mask = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
            let theta = dy.atan2(dx);
            let r = r0 * (1.0 + coeffs.iter().enumerate().map(|(k, (a, ph))| a * ((k + 1) as f64 * theta + ph).cos()).sum::<f64>());
            if (dx * dx + dy * dy).sqrt() <= r {
                mask[i * size + j] = 1.0;
            }
        }
    }
    mask
}

/// Generates `(image 3×S×S, mask S×S)`.
pub fn gen_scene(spec: &SceneSpec) -> Result<(Tensor, Tensor)> {
    if spec.size < 8 || !(0.0..=1.0).contains(&spec.camouflage) {
        return Err(HclError::contract(format!(
            "scene needs size >= 8 and camouflage in [0,1], got {} / {}",
            spec.size, spec.camouflage
        )));
    }
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mask = None;
    for _ in 0..MAX_RETRIES {
        let m = blob(&mut rng, n, spec.harmonics);
        let coverage = m.iter().sum::<f64>() / (n * n) as f64;
        if (MIN_COVERAGE..=MAX_COVERAGE).contains(&coverage) {
            mask = Some(m);
            break;
        }
    }
    let mask = mask.ok_or_else(|| {
        HclError::contract(format!("no blob with coverage in [5%, 60%] after {MAX_RETRIES} tries"))
    })?;

    let base: [f64; 3] = [
        rng.random_range(0.3..0.6),
        rng.random_range(0.35..0.65),
        rng.random_range(0.2..0.5),
    ];
    let tint_dir: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = tint_dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(1e-9);
    let bg_lum = band_limited_texture(&mut rng, n, n, BACKGROUND_BAND);
    let fg_lum = band_limited_texture(&mut rng, n, n, FOREGROUND_BAND);
    let mut image = vec![0.0; 3 * n * n];
    for c in 0..3 {
        let bg_chroma = band_limited_texture(&mut rng, n, n, BACKGROUND_BAND);
        let fg_color = base[c] + TINT * tint_dir[c] / norm;
        for k in 0..n * n {
            let bg = base[c] + TEXTURE_AMPLITUDE * (0.8 * bg_lum[k] + 0.2 * bg_chroma[k]);
            let fg = fg_color + TEXTURE_AMPLITUDE * fg_lum[k];
            let v = if mask[k] > 0.0 {
                (1.0 - spec.camouflage) * bg + spec.camouflage * fg
            } else {
                bg
            };
            image[c * n * n + k] = v.clamp(0.0, 1.0);
        }
    }
    Ok((Tensor::new([3, n, n], image)?, Tensor::new([n, n], mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec::new(32, 0.5, 17);
        let (a, ma) = gen_scene(&spec).unwrap();
        let (b, mb) = gen_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = gen_scene(&SceneSpec::new(32, 0.5, 18)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn texture_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = band_limited_texture(&mut rng, 32, 32, BACKGROUND_BAND);
        let mean = t.iter().sum::<f64>() / 1024.0;
        let var = t.iter().map(|v| v * v).sum::<f64>() / 1024.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_camouflage_hides_the_mask() {
        // the same background draw with and without a foreground differs only inside the blob
        let (hidden, mask) = gen_scene(&SceneSpec::new(32, 0.0, 5)).unwrap();
        let (shown, _) = gen_scene(&SceneSpec::new(32, 1.0, 5)).unwrap();
        let n = 32 * 32;
        for c in 0..3 {
            for k in 0..n {
                let (a, b) = (hidden.data()[c * n + k], shown.data()[c * n + k]);
                if mask.data()[k] == 0.0 {
                    assert_eq!(a, b);
                }
            }
        }
        assert!(hidden.max_abs_diff(&shown) > 0.05);
    }

    #[test]
    fn coverage_within_bounds() {
        for seed in 0..20 {
            let (_, mask) = gen_scene(&SceneSpec::new(32, 0.5, seed)).unwrap();
            let cov = mask.mean();
            assert!((MIN_COVERAGE..=MAX_COVERAGE).contains(&cov), "seed {seed}: {cov}");
        }
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(gen_scene(&SceneSpec::new(4, 0.5, 0)).is_err());
        assert!(gen_scene(&SceneSpec::new(32, 1.5, 0)).is_err());
    }
}
