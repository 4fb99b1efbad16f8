//! The two-stage objective on one image: masked reconstruction with
//! affinity guidance, then prototype consistency between the image and its
//! reconstruction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{HclError, Result};
use crate::hrr::{hrr_total_loss, make_spatial_mask, HrrLossBreakdown, Reconstructions, SpatialMask};
use crate::model::{structure_loss_var, Branch, Detection, Model, STAGES};
use crate::nn::Ctx;
use crate::pcc::{
    binarize, edge_map, entropy_confidence, gaussian_noise, kl_loss_var, metric_consistency, point_estimate_fuse,
    prototype_losses, prototypes_var, variational_encode, variational_fuse, ConfidenceMap, Fused,
};
use crate::spectral::{apply_spectrum_mask, default_radius, make_freq_mask, FreqMask, FreqRegion};
use crate::tag::tag_guide;
use crate::tensor::Tensor;

use super::config::{FusionKind, HclConfig, LossWeights};

/// Random draws of one forward pass: the three masks and the latent noise
/// for both prototype views.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub spatial: SpatialMask,
    pub low: FreqMask,
    pub high: FreqMask,
    pub eta: [Tensor; 2],
}

impl MaskSet {
    pub fn sample(model: &Model, cfg: &HclConfig, seed: u64) -> Result<MaskSet> {
        let net = &model.config;
        let n = net.input_size;
        let radius = cfg.radius.unwrap_or_else(|| default_radius(n, n));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || rng.random::<u64>();
        Ok(MaskSet {
            spatial: make_spatial_mask(n, n, net.patch, cfg.spatial_ratio, next())?,
            low: make_freq_mask(n, n, FreqRegion::Low, cfg.low_ratio, radius, next())?,
            high: make_freq_mask(n, n, FreqRegion::High, cfg.high_ratio, radius, next())?,
            eta: [
                gaussian_noise(2, net.detect_channels, next()),
                gaussian_noise(2, net.detect_channels, next()),
            ],
        })
    }
}

/// Component values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub hrr: f64,
    pub hrr_parts: HrrLossBreakdown,
    pub kl: f64,
    pub pro: f64,
    pub pro_rec: f64,
    /// Detection supervision; absent without ground truth.
    pub dec: Option<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.hrr * self.hrr + w.kl * self.kl + w.pro * self.pro + w.pro_rec * self.pro_rec + self.dec.map_or(0.0, |d| w.dec * d)
    }

    pub fn is_finite(&self) -> bool {
        [self.hrr, self.kl, self.pro, self.pro_rec, self.total, self.dec.unwrap_or(0.0)]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub struct HclOutput<'t> {
    pub loss: Var<'t>,
    pub report: LossReport,
    /// Guided detection of the input image.
    pub detection: Detection<'t>,
    /// Detection of the reconstructed image.
    pub rec_detection: Detection<'t>,
    pub recons: Reconstructions<'t>,
    pub confidence: ConfidenceMap,
    pub fusion: Fused<'t>,
    /// Cosine similarity of the input view's features to the fused
    /// prototypes, `2×H×W`.
    pub similarity: Var<'t>,
}

fn check_image(model: &Model, image: &Tensor) -> Result<()> {
    let n = model.config.input_size;
    if image.shape() != [3, n, n] {
        return Err(HclError::shape("hcl", format!("expected [3, {n}, {n}], got {:?}", image.shape())));
    }
    Ok(())
}

struct Stage1<'t> {
    detection: Detection<'t>,
    spatial: Var<'t>,
    low: Var<'t>,
    high: Var<'t>,
}

/// Encodes the image and its three masked views and guides the deepest
/// feature with each masked view in turn.
fn guided_detection<'t>(
    model: &Model,
    cx: Ctx<'t, '_>,
    image: &Tensor,
    masks: &MaskSet,
    keep: f64,
) -> Result<Stage1<'t>> {
    let tape = cx.tape;
    let views = [
        masks.spatial.apply(image)?,
        apply_spectrum_mask(image, &masks.low)?,
        apply_spectrum_mask(image, &masks.high)?,
    ];
    let mut feats = model.encoder.forward(cx, tape.constant(image.clone()));
    let deep: Vec<Var<'t>> = views
        .into_iter()
        .map(|v| model.encoder.forward(cx, tape.constant(v))[STAGES - 1])
        .collect();
    let proj = model.tag.vars(tape, &model.store);
    let mut x = feats[STAGES - 1];
    for &x_rec in &deep {
        x = tag_guide(x, x_rec, keep, &proj);
    }
    feats[STAGES - 1] = x;
    Ok(Stage1 {
        detection: model.detector.forward(cx, &feats),
        spatial: deep[0],
        low: deep[1],
        high: deep[2],
    })
}

/// Evaluates the full objective. `gt` adds the detection supervision.
pub fn hcl_forward<'t>(
    model: &Model,
    tape: &'t Tape,
    image: &Tensor,
    gt: Option<&Tensor>,
    masks: &MaskSet,
    cfg: &HclConfig,
    weights: &LossWeights,
) -> Result<HclOutput<'t>> {
    check_image(model, image)?;
    let n = model.config.input_size;
    if let Some(g) = gt {
        if g.numel() != n * n {
            return Err(HclError::shape("hcl", format!("mask {:?} for a {n}×{n} image", g.shape())));
        }
    }
    let cx = model.ctx(tape);

    let s1 = guided_detection(model, cx, image, masks, cfg.keep_fraction)?;
    let recons = Reconstructions {
        spatial: model.decoder(Branch::Pixel).forward(cx, s1.spatial, Some(&masks.spatial)),
        low: model.decoder(Branch::Low).forward(cx, s1.low, None),
        high: model.decoder(Branch::High).forward(cx, s1.high, None),
    };
    let (hrr, hrr_parts) = hrr_total_loss(recons, image, Some(&masks.spatial), &cfg.hrr_weights())?;

    // second view: the reconstruction is a fixed input
    let i_rec = recons.spatial.detach();
    let rec_feats = model.encoder.forward(cx, i_rec);
    let rec_det = model.detector.forward(cx, &rec_feats);

    let det = s1.detection;
    let prob = det.coarse_probability().value();
    let prob_rec = rec_det.coarse_probability().value();
    let (h, w) = (prob.shape()[1], prob.shape()[2]);
    let labels = binarize(&prob);
    let labels_rec = binarize(&prob_rec);
    let edge = edge_map(&prob_rec)?;
    let confidence = entropy_confidence(&prob_rec, &edge, cfg.alpha)?;

    let (protos, _) = prototypes_var(det.feature, &labels, None, false);
    let (protos_rec, _) = prototypes_var(
        rec_det.feature,
        &labels_rec,
        Some(confidence.phi.data()),
        cfg.phi_normalized,
    );
    let lat_o = variational_encode(cx, &model.pcc.variational, protos, &masks.eta[0]);
    let lat_r = variational_encode(cx, &model.pcc.variational, protos_rec, &masks.eta[1]);
    let fusion = match cfg.fusion {
        FusionKind::Variational => variational_fuse(cx, &model.pcc.weight, lat_o.z, lat_r.z),
        FusionKind::Point => {
            let heads = model
                .pcc
                .point
                .as_ref()
                .ok_or_else(|| HclError::contract("point fusion needs a model built with point heads"))?;
            point_estimate_fuse(cx, heads, lat_o.z, lat_r.z)
        }
    };
    let kl = kl_loss_var(&[(lat_o.mu, lat_o.sigma), (lat_r.mu, lat_r.sigma)]);
    let (similarity, probs) = metric_consistency(det.feature, fusion.fused, cfg.tau);
    let (_, probs_rec) = metric_consistency(rec_det.feature, fusion.fused, cfg.tau);
    let as_map = |l: &[bool]| Tensor::new([h, w], l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
    let (pro, pro_rec) = prototype_losses(probs, &as_map(&labels)?, probs_rec, &as_map(&labels_rec)?, &confidence.phi);

    let dec = gt.map(|g| {
        (0..STAGES)
            .map(|s| structure_loss_var(det.probability(s, n), g))
            .reduce(|a, b| a + b)
            .unwrap()
    });

    let mut loss = hrr.scale(weights.hrr) + kl.scale(weights.kl) + pro.scale(weights.pro) + pro_rec.scale(weights.pro_rec);
    if let Some(d) = dec {
        loss = loss + d.scale(weights.dec);
    }
    let mut report = LossReport {
        hrr: hrr.item(),
        hrr_parts,
        kl: kl.item(),
        pro: pro.item(),
        pro_rec: pro_rec.item(),
        dec: dec.map(|d| d.item()),
        total: 0.0,
    };
    report.total = report.weighted_sum(weights);
    Ok(HclOutput {
        loss,
        report,
        detection: det,
        rec_detection: rec_det,
        recons,
        confidence,
        fusion,
        similarity,
    })
}

/// Confidence map of the reconstructed view and foreground similarity of
/// the input view, both `H×W` at detection resolution.
pub fn debug_maps(model: &Model, image: &Tensor, cfg: &HclConfig, seed: u64) -> Result<(Tensor, Tensor)> {
    let masks = MaskSet::sample(model, cfg, seed)?;
    let tape = Tape::new();
    let out = hcl_forward(model, &tape, image, None, &masks, cfg, &LossWeights::default())?;
    let sim = out.similarity.value();
    let (h, w) = (sim.shape()[1], sim.shape()[2]);
    let fg = Tensor::new([h, w], sim.data()[h * w..].to_vec())?;
    let phi = Tensor::new([h, w], out.confidence.phi.data().to_vec())?;
    Ok((phi, fg))
}

/// Differentiable full-resolution foreground probability `1×H×W` from
/// guided detection.
pub fn guided_probability<'t>(
    model: &Model,
    tape: &'t Tape,
    image: &Tensor,
    masks: &MaskSet,
    keep_fraction: f64,
) -> Result<Var<'t>> {
    check_image(model, image)?;
    let s1 = guided_detection(model, model.ctx(tape), image, masks, keep_fraction)?;
    Ok(s1.detection.probability(0, model.config.input_size))
}

pub fn predict(model: &Model, image: &Tensor, masks: &MaskSet, keep_fraction: f64) -> Result<Tensor> {
    let tape = Tape::new();
    let p = guided_probability(model, &tape, image, masks, keep_fraction)?;
    Ok((*p.value()).clone())
}
