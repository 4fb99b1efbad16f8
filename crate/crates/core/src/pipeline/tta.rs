//! Per-sample test-time adaptation and the entropy-minimization baseline.

use crate::autograd::Tape;
use crate::error::{HclError, Result};
use crate::model::Model;
use crate::optim::{AdamWConfig, OptimizerState};
use crate::params::Param;
use crate::pcc::PROB_CLAMP;
use crate::tensor::Tensor;

use super::config::{AdaptationConfig, FusionKind, HclConfig, ParamSubset};
use super::hcl::{guided_probability, hcl_forward, predict, LossReport, MaskSet};

#[derive(Clone, Debug)]
pub struct Adaptation {
    pub prediction: Tensor,
    /// One report per update, then one for the adapted parameters evaluated
    /// on the first iteration's draws.
    pub trace: Vec<LossReport>,
}

/// Mask seed used for predictions; adaptation iterations draw from the
/// following seeds.
pub fn prediction_masks(model: &Model, hcl: &HclConfig, seed: u64) -> Result<MaskSet> {
    MaskSet::sample(model, hcl, seed)
}

fn adapts(p: &Param, subset: ParamSubset, hcl: &HclConfig, heads: &[String]) -> bool {
    if heads.contains(&p.name) || (hcl.fusion != FusionKind::Point && p.name.starts_with("pcc.point.")) {
        return false;
    }
    match subset {
        ParamSubset::All => true,
        ParamSubset::Detection => Model::is_detection_param(&p.name),
        ParamSubset::NormAffine => p.kind.is_norm_affine(),
    }
}

fn trainable_flags(model: &Model) -> Vec<bool> {
    model.store.iter().map(|(_, p)| p.requires_grad).collect()
}

fn restore_flags(model: &mut Model, flags: &[bool]) {
    for (id, &f) in model.store.ids().collect::<Vec<_>>().into_iter().zip(flags) {
        model.store.get_mut(id).requires_grad = f;
    }
}

/// Adapts `model` to one unlabeled image and predicts it. In episodic mode
/// the parameters are restored bit-exactly afterwards.
pub fn tta_adapt(model: &mut Model, image: &Tensor, hcl: &HclConfig, cfg: &AdaptationConfig) -> Result<Adaptation> {
    if !model.trained {
        return Err(HclError::contract("test-time adaptation needs a trained model"));
    }
    cfg.validate()?;
    hcl.validate()?;
    let snapshot = model.store.snapshot();
    let flags = trainable_flags(model);
    let result = adapt_inner(model, image, hcl, cfg);
    restore_flags(model, &flags);
    if cfg.episodic {
        model.store.restore(&snapshot)?;
    }
    model.store.zero_grad();
    result
}

fn adapt_inner(model: &mut Model, image: &Tensor, hcl: &HclConfig, cfg: &AdaptationConfig) -> Result<Adaptation> {
    let heads: Vec<String> = model
        .head_params()
        .into_iter()
        .map(|id| model.store.get(id).name.clone())
        .collect();
    model.store.set_trainable(|p| adapts(p, cfg.subset, hcl, &heads));
    let weights = cfg.weights();
    let mut opt = OptimizerState::new(cfg.optimizer());
    let iteration_seed = |it: usize| {
        if cfg.resample_masks {
            cfg.seed.wrapping_add(1 + it as u64)
        } else {
            cfg.seed.wrapping_add(1)
        }
    };
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..cfg.iterations {
        let masks = MaskSet::sample(model, hcl, iteration_seed(it))?;
        let tape = Tape::new();
        let out = hcl_forward(model, &tape, image, None, &masks, hcl, &weights)?;
        let grads = tape.backward(out.loss)?;
        model.store.zero_grad();
        model.store.accumulate(&grads);
        opt.step(&mut model.store)?;
        trace.push(out.report);
    }
    if cfg.iterations > 0 {
        let masks = MaskSet::sample(model, hcl, iteration_seed(0))?;
        model.store.set_trainable(|_| false);
        let tape = Tape::new();
        trace.push(hcl_forward(model, &tape, image, None, &masks, hcl, &weights)?.report);
    }
    let prediction = predict(model, image, &prediction_masks(model, hcl, cfg.seed)?, hcl.keep_fraction)?;
    Ok(Adaptation { prediction, trace })
}

/// Mean binary entropy of a probability map.
pub fn mean_entropy(prob: &Tensor) -> f64 {
    prob.data()
        .iter()
        .map(|&p| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / prob.numel() as f64
}

/// Entropy minimization over the normalization affines of the detection
/// path, reset afterwards. Returns the prediction after `steps` updates.
pub fn tent_baseline(
    model: &mut Model,
    image: &Tensor,
    hcl: &HclConfig,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<Tensor> {
    let snapshot = model.store.snapshot();
    let flags = trainable_flags(model);
    let result = tent_inner(model, image, hcl, steps, lr, seed);
    restore_flags(model, &flags);
    model.store.restore(&snapshot)?;
    result
}

fn tent_inner(model: &mut Model, image: &Tensor, hcl: &HclConfig, steps: usize, lr: f64, seed: u64) -> Result<Tensor> {
    let masks = prediction_masks(model, hcl, seed)?;
    model
        .store
        .set_trainable(|p| p.kind.is_norm_affine() && Model::is_detection_param(&p.name));
    let mut opt = OptimizerState::new(AdamWConfig {
        lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    for _ in 0..steps {
        let tape = Tape::new();
        let p = guided_probability(model, &tape, image, &masks, hcl.keep_fraction)?.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let q = p.neg().add_scalar(1.0);
        let entropy = (p * p.log() + q * q.log()).neg().mean();
        let grads = tape.backward(entropy)?;
        model.store.zero_grad();
        model.store.accumulate(&grads);
        opt.step(&mut model.store)?;
    }
    predict(model, image, &masks, hcl.keep_fraction)
}
