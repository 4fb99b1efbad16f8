//! Supervised training with the full objective.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{HclError, Result};
use crate::model::Model;
use crate::optim::OptimizerState;

use super::config::{FusionKind, HclConfig, LossWeights, TrainConfig};
use super::hcl::{hcl_forward, LossReport, MaskSet};
use super::Sample;

/// Marks as trainable everything the objective reaches under `cfg`.
pub fn select_training_params(model: &mut Model, cfg: &HclConfig) {
    let point = cfg.fusion == FusionKind::Point;
    model
        .store
        .set_trainable(|p| point || !p.name.starts_with("pcc.point."));
}

/// One optimizer step on the mean objective of `batch`. Each sample is
/// differentiated on its own tape and the gradients are averaged.
pub fn train_step(
    model: &mut Model,
    opt: &mut OptimizerState,
    batch: &[Sample],
    cfg: &HclConfig,
    weights: &LossWeights,
    seed: u64,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(HclError::contract("empty training batch"));
    }
    select_training_params(model, cfg);
    model.store.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut reports = Vec::with_capacity(batch.len());
    for (k, sample) in batch.iter().enumerate() {
        let gt = sample
            .mask
            .as_ref()
            .ok_or_else(|| HclError::contract(format!("sample {} has no ground truth", sample.name)))?;
        let masks = MaskSet::sample(model, cfg, seed.wrapping_mul(1_000_003).wrapping_add(k as u64))?;
        let tape = Tape::new();
        let out = hcl_forward(model, &tape, &sample.image, Some(gt), &masks, cfg, weights)?;
        let grads = tape.backward(out.loss.scale(scale))?;
        model.store.accumulate(&grads);
        reports.push(out.report);
    }
    opt.step(&mut model.store)?;
    Ok(mean_report(&reports, weights))
}

/// Component-wise mean; the total stays the weighted sum of the means.
pub fn mean_report(reports: &[LossReport], weights: &LossWeights) -> LossReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut parts = reports[0].hrr_parts;
    parts.pix_rec = avg(|r| r.hrr_parts.pix_rec);
    parts.freq_con = avg(|r| r.hrr_parts.freq_con);
    parts.freq_rec_low = avg(|r| r.hrr_parts.freq_rec_low);
    parts.freq_rec_high = avg(|r| r.hrr_parts.freq_rec_high);
    parts.pix_con_low = avg(|r| r.hrr_parts.pix_con_low);
    parts.pix_con_high = avg(|r| r.hrr_parts.pix_con_high);
    parts.total = avg(|r| r.hrr_parts.total);
    let mut out = LossReport {
        hrr: avg(|r| r.hrr),
        hrr_parts: parts,
        kl: avg(|r| r.kl),
        pro: avg(|r| r.pro),
        pro_rec: avg(|r| r.pro_rec),
        dec: reports[0].dec.map(|_| avg(|r| r.dec.unwrap_or(0.0))),
        total: 0.0,
    };
    out.total = out.weighted_sum(weights);
    out
}

/// Trains for `cfg.epochs` passes over `samples` in a seeded shuffled
/// order. Returns the per-step reports.
pub fn train(
    model: &mut Model,
    samples: &[Sample],
    hcl: &HclConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossReport),
) -> Result<Vec<LossReport>> {
    if samples.is_empty() {
        return Err(HclError::Dataset("no training samples".into()));
    }
    cfg.validate()?;
    let weights = cfg.weights();
    let mut opt = OptimizerState::new(cfg.optimizer());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let step = trace.len();
            let report = train_step(model, &mut opt, &batch, hcl, &weights, cfg.seed ^ ((step as u64) << 16))?;
            on_step(step, &report);
            trace.push(report);
        }
        if let Some(last) = trace.last() {
            info!("epoch {} done, last total {:.4}", epoch + 1, last.total);
        }
    }
    model.trained = true;
    Ok(trace)
}
