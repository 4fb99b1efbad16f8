//! Hierarchical representation reconstruction: spatial patch masking, the
//! pixel loss and the combined spatial/low/high reconstruction objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::{HclError, Result};
use crate::spectral::{self, focal_frequency_loss_var, FreqRegion};
use crate::tensor::Tensor;

/// Random patch mask over an image; 1 keeps a pixel, 0 hides it.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMask {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub ratio: f64,
    pub seed: u64,
    /// Per-patch keep flags in row-major patch order.
    pub patch_keep: Vec<bool>,
    /// Per-pixel `H×W` grid.
    pub grid: Vec<f64>,
}

impl SpatialMask {
    pub fn grid_h(&self) -> usize {
        self.height / self.patch
    }

    pub fn grid_w(&self) -> usize {
        self.width / self.patch
    }

    pub fn masked_patches(&self) -> usize {
        self.patch_keep.iter().filter(|k| !**k).count()
    }

    /// `image ⊙ mask` for a `C×H×W` image.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        image.mul(&Tensor::from_parts(vec![self.height, self.width], self.grid.clone()))
    }
}

pub fn make_spatial_mask(h: usize, w: usize, patch: usize, ratio: f64, seed: u64) -> Result<SpatialMask> {
    if patch == 0 || !h.is_multiple_of(patch) || !w.is_multiple_of(patch) {
        return Err(HclError::contract(format!(
            "image {h}×{w} is not divisible into {patch}×{patch} patches"
        )));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(HclError::contract(format!("mask ratio must lie in [0,1], got {ratio}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let n = gh * gw;
    let n_mask = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut patch_keep = vec![true; n];
    for &p in &order[..n_mask] {
        patch_keep[p] = false;
    }
    let mut grid = vec![1.0; h * w];
    for i in 0..h {
        for j in 0..w {
            if !patch_keep[(i / patch) * gw + j / patch] {
                grid[i * w + j] = 0.0;
            }
        }
    }
    Ok(SpatialMask {
        height: h,
        width: w,
        patch,
        ratio,
        seed,
        patch_keep,
        grid,
    })
}

/// Pixels covered by the pixel loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelScope {
    /// Mean over every pixel of the image.
    #[default]
    Full,
    /// Mean over hidden pixels only; needs a spatial mask.
    MaskedOnly,
}

/// Mean squared error over all `C·H·W` positions.
pub fn pixel_loss<'t>(recon: Var<'t>, target: Var<'t>) -> Var<'t> {
    let (rs, ts) = (recon.shape(), target.shape());
    if rs != ts {
        panic!("{}", HclError::shape("pixel_loss", format!("{rs:?} vs {ts:?}")));
    }
    (recon - target).square().mean()
}

/// Squared error averaged over the pixels hidden by `mask` (all channels).
pub fn masked_pixel_loss<'t>(recon: Var<'t>, target: Var<'t>, mask: &SpatialMask) -> Var<'t> {
    let shape = recon.shape();
    let hidden: Vec<f64> = mask.grid.iter().map(|g| 1.0 - g).collect();
    let count = hidden.iter().sum::<f64>() * shape[0] as f64;
    let weights = Tensor::from_parts(vec![mask.height, mask.width], hidden);
    (recon - target).square().mul_const(weights).sum().scale(1.0 / count.max(1.0))
}

/// Eager pixel loss on plain tensors.
pub fn pixel_loss_value(recon: &Tensor, target: &Tensor) -> Result<f64> {
    if recon.shape() != target.shape() {
        return Err(HclError::shape(
            "pixel_loss",
            format!("{:?} vs {:?}", recon.shape(), target.shape()),
        ));
    }
    Ok(recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / recon.numel() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HrrWeights {
    pub lambda_low: f64,
    pub lambda_high: f64,
    /// Focal frequency exponent.
    pub beta: f64,
    /// Low/high threshold radius; `None` uses [`spectral::default_radius`].
    pub radius: Option<f64>,
    pub pixel_scope: PixelScope,
    /// Compare spectra scaled by `1/sqrt(HW)` so that frequency and pixel
    /// terms share a scale.
    pub orthonormal: bool,
}

impl Default for HrrWeights {
    fn default() -> Self {
        HrrWeights {
            lambda_low: 0.4,
            lambda_high: 0.6,
            beta: 1.0,
            radius: None,
            pixel_scope: PixelScope::Full,
            orthonormal: true,
        }
    }
}

/// Individual terms of the reconstruction objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HrrLossBreakdown {
    /// Pixel reconstruction of the spatial branch.
    pub pix_rec: f64,
    /// Full-spectrum constraint on the spatial branch.
    pub freq_con: f64,
    pub freq_rec_low: f64,
    pub freq_rec_high: f64,
    pub pix_con_low: f64,
    pub pix_con_high: f64,
    pub total: f64,
}

impl HrrLossBreakdown {
    /// Builds a breakdown from its six terms, composing the total.
    pub fn compose(terms: [f64; 6], weights: &HrrWeights) -> Self {
        let [pix_rec, freq_con, freq_rec_low, pix_con_low, freq_rec_high, pix_con_high] = terms;
        HrrLossBreakdown {
            pix_rec,
            freq_con,
            freq_rec_low,
            freq_rec_high,
            pix_con_low,
            pix_con_high,
            total: pix_rec
                + freq_con
                + weights.lambda_low * (freq_rec_low + pix_con_low)
                + weights.lambda_high * (freq_rec_high + pix_con_high),
        }
    }
}

/// Reconstructions from the three branches, each `C×H×W`.
#[derive(Clone, Copy, Debug)]
pub struct Reconstructions<'t> {
    pub spatial: Var<'t>,
    pub low: Var<'t>,
    pub high: Var<'t>,
}

/// Composes the spatial, low- and high-frequency reconstruction losses.
///
/// `spatial_mask` is only consulted for [`PixelScope::MaskedOnly`].
pub fn hrr_total_loss<'t>(
    recons: Reconstructions<'t>,
    image: &Tensor,
    spatial_mask: Option<&SpatialMask>,
    weights: &HrrWeights,
) -> Result<(Var<'t>, HrrLossBreakdown)> {
    let tape = recons.spatial.tape();
    let [_, h, w] = *image.shape() else {
        return Err(HclError::shape("hrr_total_loss", format!("{:?}", image.shape())));
    };
    for r in [recons.spatial, recons.low, recons.high] {
        if r.shape() != image.shape() {
            return Err(HclError::shape(
                "hrr_total_loss",
                format!("reconstruction {:?} vs image {:?}", r.shape(), image.shape()),
            ));
        }
    }
    let radius = weights.radius.unwrap_or_else(|| spectral::default_radius(h, w));
    let target = tape.constant(image.clone());
    let norm = if weights.orthonormal { 1.0 / ((h * w) as f64).sqrt() } else { 1.0 };
    let target_spec = tape.constant(spectral::dft2(image)?.to_tensor().scale(norm));
    let spectrum = |v: Var<'t>| v.dft2().scale(norm);
    let low_grid = FreqRegion::Low.grid(h, w, radius);
    let high_grid = FreqRegion::High.grid(h, w, radius);

    let pix_rec = match (weights.pixel_scope, spatial_mask) {
        (PixelScope::MaskedOnly, Some(m)) => masked_pixel_loss(recons.spatial, target, m),
        (PixelScope::MaskedOnly, None) => {
            return Err(HclError::contract("masked-only pixel loss needs the spatial mask"))
        }
        (PixelScope::Full, _) => pixel_loss(recons.spatial, target),
    };
    let freq_con = focal_frequency_loss_var(spectrum(recons.spatial), target_spec, weights.beta, None);
    let freq_rec_low =
        focal_frequency_loss_var(spectrum(recons.low), target_spec, weights.beta, Some(&low_grid));
    let pix_con_low = pixel_loss(recons.low, target);
    let freq_rec_high =
        focal_frequency_loss_var(spectrum(recons.high), target_spec, weights.beta, Some(&high_grid));
    let pix_con_high = pixel_loss(recons.high, target);

    let total = pix_rec
        + freq_con
        + (freq_rec_low + pix_con_low).scale(weights.lambda_low)
        + (freq_rec_high + pix_con_high).scale(weights.lambda_high);
    let mut breakdown = HrrLossBreakdown::compose(
        [
            pix_rec.item(),
            freq_con.item(),
            freq_rec_low.item(),
            pix_con_low.item(),
            freq_rec_high.item(),
            pix_con_high.item(),
        ],
        weights,
    );
    breakdown.total = total.item();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn spatial_mask_counts() {
        let m = make_spatial_mask(64, 64, 16, 0.0, 3).unwrap();
        assert!(m.grid.iter().all(|&g| g == 1.0));
        let m = make_spatial_mask(64, 64, 16, 0.25, 3).unwrap();
        assert_eq!(m.masked_patches(), 4);
        assert_eq!(m.grid.iter().filter(|&&g| g == 0.0).count(), 4 * 256);
        assert_eq!(m, make_spatial_mask(64, 64, 16, 0.25, 3).unwrap());
        assert!(make_spatial_mask(60, 64, 16, 0.25, 3).is_err());
    }

    #[test]
    fn spatial_mask_constant_within_patches() {
        let m = make_spatial_mask(32, 48, 8, 0.5, 11).unwrap();
        for i in 0..32 {
            for j in 0..48 {
                let corner = m.grid[(i / 8 * 8) * 48 + j / 8 * 8];
                assert_eq!(m.grid[i * 48 + j], corner);
            }
        }
    }

    #[test]
    fn pixel_loss_examples() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::new([1, 1, 2], vec![1.0, 0.0]).unwrap());
        let z = tape.constant(Tensor::zeros([1, 1, 2]));
        assert_eq!(pixel_loss(a, z).item(), 0.5);
        assert_eq!(pixel_loss(a, a).item(), 0.0);
        let x = Tensor::from_fn([2, 3, 3], |i| i as f64 * 0.1);
        let y = x.map(|v| v + 0.3);
        assert!((pixel_loss_value(&y, &x).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn unit_components_compose_to_four() {
        let b = HrrLossBreakdown::compose([1.0; 6], &HrrWeights::default());
        assert!((b.total - 4.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let tape = Tape::new();
        let img = Tensor::from_fn([3, 8, 8], |i| ((i * 13) % 7) as f64 / 7.0);
        let r = tape.leaf(img.clone());
        let recons = Reconstructions {
            spatial: r,
            low: r,
            high: r,
        };
        let (total, parts) = hrr_total_loss(recons, &img, None, &HrrWeights::default()).unwrap();
        assert_eq!(total.item(), 0.0);
        assert_eq!(parts, HrrLossBreakdown::default());
    }
}
