//! The registered checks, one per module invariant.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::data::{degrade, evaluate_metrics, DegradationKind, Degradation};
use crate::error::Result;
use crate::hrr::{hrr_total_loss, make_spatial_mask, pixel_loss_value, HrrWeights, Reconstructions};
use crate::pcc::{edge_map, entropy_confidence, fusion_weights, kl_loss, metric_consistency};
use crate::pipeline::bench::{run_benchmark, BenchConfig, Mode};
use crate::pipeline::tta::prediction_masks;
use crate::pipeline::{hcl_forward, predict, tta_adapt, AdaptationConfig, HclConfig, LossWeights, MaskSet, Sample};
use crate::spectral::{default_radius, dft2, focal_frequency_loss, idft2, idft2_complex, make_freq_mask, FreqRegion, Spectrum};
use crate::tag::{apply_guidance, channel_nonlocal, fuse_affinities, FusionWeights, Projection};
use crate::tensor::Tensor;

use super::fixture::Fixture;
use super::gradients::{gradient_battery, GRADIENT_TOLERANCE};
use super::oracles::{broadcast_loop, naive_dft2};
use super::{Check, Property};

macro_rules! property {
    ($name:literal, $module:literal, $seed:literal, $heavy:literal, $check:path, $statement:literal) => {
        Property {
            name: $name,
            module: $module,
            statement: $statement,
            seed: $seed,
            needs_training: $heavy,
            check: $check,
        }
    };
}

pub(super) fn all() -> Vec<Property> {
    vec![
        property!("tensor.finite_differences", "tensor-core", 1, false, finite_differences,
            "analytic gradients of every loss match central differences"),
        property!("tensor.determinism", "tensor-core", 2, false, determinism,
            "identical seeds and inputs give bit-identical values and gradients"),
        property!("tensor.broadcast_oracle", "tensor-core", 3, false, broadcast_oracle,
            "broadcast arithmetic equals a loop oracle"),
        property!("spectral.naive_dft", "spectral", 10, false, naive_dft,
            "dft2 equals the direct DFT sum"),
        property!("spectral.round_trip", "spectral", 11, false, round_trip,
            "idft2(dft2(x)) recovers x"),
        property!("spectral.parseval", "spectral", 12, false, parseval,
            "spatial energy equals spectral energy over HW"),
        property!("spectral.linearity", "spectral", 13, false, linearity,
            "dft2 is linear"),
        property!("spectral.real_masking", "spectral", 14, false, real_masking,
            "symmetric masks keep real images real"),
        property!("spectral.focal_loss_sign", "spectral", 15, false, focal_loss_sign,
            "focal frequency loss is nonnegative and zero only on equal spectra"),
        property!("hrr.zero_iff_exact", "hrr", 20, false, hrr_zero_iff_exact,
            "reconstruction loss vanishes exactly on perfect reconstructions"),
        property!("hrr.gradient", "hrr", 21, false, hrr_gradient,
            "reconstruction loss gradient matches finite differences"),
        property!("hrr.monotone_masking", "hrr", 22, false, hrr_monotone_masking,
            "identity-reconstructor pixel loss grows with the mask ratio"),
        property!("tag.residual_identity", "tag", 30, false, tag_residual_identity,
            "zero fusion weights leave the feature unchanged"),
        property!("tag.partition_of_unity", "tag", 31, false, tag_partition,
            "fusion weights sum to one on retained positions"),
        property!("tag.channel_equivariance", "tag", 32, false, tag_equivariance,
            "permuting channels permutes the affinity and output"),
        property!("pcc.confidence_sum", "pcc", 40, false, confidence_sum,
            "confidence maps sum to (HW-1)/HW"),
        property!("pcc.fusion_weights", "pcc", 41, false, fusion_weight_order,
            "fusion weights sum to one and favour the lower-variance branch"),
        property!("pcc.kl_minimum", "pcc", 42, false, kl_minimum,
            "KL is minimal at zero mean and unit deviation"),
        property!("pcc.gradients", "pcc", 43, false, pcc_gradients,
            "KL, metric and prototype gradients match finite differences"),
        property!("pcc.cosine_scale_invariance", "pcc", 44, false, cosine_scale,
            "metric consistency ignores feature scale"),
        property!("model.snapshot_replay", "model", 50, false, snapshot_replay,
            "restoring a snapshot reproduces outputs bit-exactly"),
        property!("model.no_dead_parameters", "model", 51, false, no_dead_parameters,
            "every parameter gets a nonzero gradient from the total loss"),
        property!("model.shared_encoder", "model", 52, false, shared_encoder,
            "detection and reconstruction read the same encoder parameters"),
        property!("pipeline.ground_truth_blind", "pipeline", 60, false, ground_truth_blind,
            "adaptation output does not depend on ground truth"),
        property!("pipeline.episodic_isolation", "pipeline", 61, false, episodic_isolation,
            "adapting one sample leaves later frozen predictions unchanged"),
        property!("pipeline.loss_composition", "pipeline", 62, false, loss_composition,
            "zeroing a weight removes exactly that weighted component"),
        property!("pipeline.self_supervised_descent", "pipeline", 63, true, self_supervised_descent,
            "median reconstruction loss falls over 30 adaptation iterations"),
        property!("data.degrade_deterministic", "data-bench", 70, false, degrade_deterministic,
            "degradations are reproducible from (seed, severity)"),
        property!("data.degrade_range", "data-bench", 71, false, degrade_range,
            "degradations keep dimensions and the [0,1] range"),
        property!("data.metric_bounds", "data-bench", 72, false, metric_bounds,
            "metrics lie in [0,1] and are perfect only on exact predictions"),
        property!("data.monotone_difficulty", "data-bench", 73, true, monotone_difficulty,
            "frozen MAE does not decrease with severity"),
    ]
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn([c, h, w], |_| rng.random_range(0.0..1.0))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn battery_max(seed: u64, names: &[&str]) -> Check {
    let worst = gradient_battery(seed)
        .into_iter()
        .filter(|c| names.is_empty() || names.contains(&c.name))
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max);
    Check::below(worst, GRADIENT_TOLERANCE)
}

fn finite_differences(_: &mut Fixture, seed: u64) -> Result<Check> {
    Ok(battery_max(seed, &[]))
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn determinism(_: &mut Fixture, seed: u64) -> Result<Check> {
    let run = || -> Result<(u64, Vec<Vec<u64>>)> {
        let model = Fixture::small_model(seed)?;
        let s = Fixture::small_scene(seed)?;
        let hcl = HclConfig::default();
        let masks = MaskSet::sample(&model, &hcl, seed)?;
        let tape = Tape::new();
        let out = hcl_forward(&model, &tape, &s.image, s.mask.as_ref(), &masks, &hcl, &LossWeights::default())?;
        let grads = tape.backward(out.loss)?;
        let g = grads.param_grads().map(|(_, g)| g.iter().map(|v| v.to_bits()).collect()).collect();
        Ok((out.loss.item().to_bits(), g))
    };
    let (a, b) = (run()?, run()?);
    Ok(Check::violations(usize::from(a != b)))
}

fn broadcast_oracle(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let nd = r.random_range(1..=4);
        let full: Vec<usize> = (0..nd).map(|_| r.random_range(1..=4)).collect();
        let drop = r.random_range(0..nd);
        let b_shape: Vec<usize> = full[drop..].iter().map(|&n| if r.random_bool(0.4) { 1 } else { n }).collect();
        let a_shape: Vec<usize> = full.iter().map(|&n| if r.random_bool(0.2) { 1 } else { n }).collect();
        let a = Tensor::from_fn(a_shape, |_| r.random_range(-2.0..2.0));
        let b = Tensor::from_fn(b_shape, |_| r.random_range(0.5..2.0));
        let Some(sum) = broadcast_loop(&a, &b, |x, y| x + y) else { continue };
        let prod = broadcast_loop(&a, &b, |x, y| x * y).expect("same shapes broadcast");
        let quot = broadcast_loop(&a, &b, |x, y| x / y).expect("same shapes broadcast");
        let tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        for (got, want) in [((va + vb).value(), &sum), ((va * vb).value(), &prod), ((va / vb).value(), &quot)] {
            if got.shape() != want.shape() {
                return Ok(Check::violations(1));
            }
            worst = worst.max(max_diff(got.data(), want.data()));
        }
        worst = worst.max(max_diff(a.add(&b)?.data(), sum.data()));
    }
    Ok(Check::at_most(worst, 1e-12))
}

fn random_sizes(r: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (r.random_range(1..=3), r.random_range(8..=16), r.random_range(8..=16))
}

fn naive_dft(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (c, h, w) = random_sizes(&mut r);
        let x = random_image(&mut r, c, h, w);
        let s = dft2(&x)?;
        let (re, im) = naive_dft2(&x);
        worst = worst.max(max_diff(s.re(), &re)).max(max_diff(s.im(), &im));
    }
    Ok(Check::at_most(worst, 1e-9))
}

fn round_trip(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (c, h, w) = random_sizes(&mut r);
        let x = random_image(&mut r, c, h, w);
        worst = worst.max(idft2(&dft2(&x)?).max_abs_diff(&x));
    }
    Ok(Check::below(worst, 1e-6))
}

fn parseval(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (c, h, w) = random_sizes(&mut r);
        let x = random_image(&mut r, c, h, w);
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral = dft2(&x)?.energy() / (h * w) as f64;
        worst = worst.max((spatial - spectral).abs() / spatial);
    }
    Ok(Check::at_most(worst, 1e-6))
}

fn linearity(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (c, h, w) = random_sizes(&mut r);
        let (x, y) = (random_image(&mut r, c, h, w), random_image(&mut r, c, h, w));
        let (a, b) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let mix = x.scale(a).add(&y.scale(b))?;
        let (sx, sy, sm) = (dft2(&x)?, dft2(&y)?, dft2(&mix)?);
        for k in 0..sm.re().len() {
            worst = worst
                .max((sm.re()[k] - a * sx.re()[k] - b * sy.re()[k]).abs())
                .max((sm.im()[k] - a * sx.im()[k] - b * sy.im()[k]).abs());
        }
    }
    Ok(Check::at_most(worst, 1e-9))
}

fn real_masking(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (c, h, w) = random_sizes(&mut r);
        let x = random_image(&mut r, c, h, w);
        let region = if i % 2 == 0 { FreqRegion::Low } else { FreqRegion::High };
        let mask = make_freq_mask(h, w, region, r.random_range(0.0..=1.0), default_radius(h, w), seed + i)?;
        let (_, imag) = idft2_complex(&dft2(&x)?.mask(&mask.grid)?);
        worst = worst.max(imag.data().iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok(Check::below(worst, 1e-9))
}

fn focal_loss_sign(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut violations = 0;
    for _ in 0..20 {
        let (c, h, w) = random_sizes(&mut r);
        let mut spec = || {
            let n = c * h * w;
            let re = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
            let im = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
            Spectrum::new(c, h, w, re, im)
        };
        let (a, b) = (spec()?, spec()?);
        let beta = r.random_range(0.0..3.0);
        if focal_frequency_loss(&a, &b, beta)? <= 0.0 || focal_frequency_loss(&a, &a, beta)? != 0.0 {
            violations += 1;
        }
    }
    Ok(Check::violations(violations))
}

fn hrr_loss(recons: [&Tensor; 3], image: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let r = Reconstructions {
        spatial: tape.constant(recons[0].clone()),
        low: tape.constant(recons[1].clone()),
        high: tape.constant(recons[2].clone()),
    };
    Ok(hrr_total_loss(r, image, None, &HrrWeights::default())?.0.item())
}

fn hrr_zero_iff_exact(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut violations = 0;
    for _ in 0..10 {
        let x = random_image(&mut r, 3, 16, 16);
        worst = worst.max(hrr_loss([&x, &x, &x], &x)?.abs());
        for branch in 0..3 {
            let mut y = x.clone();
            y.data_mut()[r.random_range(0..x.numel())] += 0.01;
            let mut set = [&x, &x, &x];
            set[branch] = &y;
            if hrr_loss(set, &x)? <= 0.0 {
                violations += 1;
            }
        }
    }
    let mut c = Check::at_most(worst, 1e-9);
    c.passed &= violations == 0;
    Ok(c)
}

fn hrr_gradient(_: &mut Fixture, seed: u64) -> Result<Check> {
    Ok(battery_max(seed, &["pixel", "frequency", "hrr_total"]))
}

fn hrr_monotone_masking(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let ratios = [0.0, 0.25, 0.5, 1.0];
    let mut mean = [0.0; 4];
    for trial in 0..20 {
        let x = random_image(&mut r, 3, 32, 32);
        for (k, &ratio) in ratios.iter().enumerate() {
            let m = make_spatial_mask(32, 32, 8, ratio, seed * 1000 + trial)?;
            mean[k] += pixel_loss_value(&m.apply(&x)?, &x)? / 20.0;
        }
    }
    let violations = mean.windows(2).filter(|p| p[1] < p[0]).count();
    Ok(Check::violations(violations))
}

fn tag_residual_identity(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let c = r.random_range(1..=6);
        let x = Tensor::from_fn([c, 4, 4], |_| r.random_range(-1.0..1.0));
        let (x_hat, a) = channel_nonlocal(&x)?;
        let zero = Tensor::zeros([c, c]);
        let weights = FusionWeights {
            w1: zero.clone(),
            w2: zero,
            keep_fraction: 1.0,
            retained: vec![true; c * c],
        };
        worst = worst.max(apply_guidance(&x, &x_hat, &a, &a, &weights)?.max_abs_diff(&x));
    }
    Ok(Check::at_most(worst, 0.0))
}

fn tag_partition(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let c = r.random_range(2..=6);
        let mut feat = || Tensor::from_fn([c, 3, 3], |_| r.random_range(-1.0..1.0));
        let (x, x_rec) = (feat(), feat());
        let (_, a) = channel_nonlocal(&x)?;
        let (_, a_rec) = channel_nonlocal(&x_rec)?;
        let mut p = || Tensor::from_fn([c, c], |_| r.random_range(-1.0..1.0));
        let proj = Projection {
            wq: p(),
            bq: p(),
            wk: p(),
            bk: p(),
            wv: p(),
            bv: p(),
        };
        let keep = r.random_range(0.1..=1.0);
        let fw = fuse_affinities(&a, &a_rec, keep, &proj)?;
        for (k, &kept) in fw.retained.iter().enumerate() {
            let s = fw.w1.data()[k] + fw.w2.data()[k];
            worst = worst.max(if kept { (s - 1.0).abs() } else { s.abs() });
        }
    }
    Ok(Check::at_most(worst, 1e-12))
}

fn tag_equivariance(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (c, hw) = (r.random_range(2..=6), 9);
        let x = Tensor::from_fn([c, 3, 3], |_| r.random_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut r);
        let xp = Tensor::from_fn([c, 3, 3], |k| x.data()[perm[k / hw] * hw + k % hw]);
        let (x_hat, a) = channel_nonlocal(&x)?;
        let (xp_hat, ap) = channel_nonlocal(&xp)?;
        for i in 0..c {
            for j in 0..c {
                let d = ap.matrix.data()[i * c + j] - a.matrix.data()[perm[i] * c + perm[j]];
                worst = worst.max(d.abs());
            }
            for k in 0..hw {
                worst = worst.max((xp_hat.data()[i * hw + k] - x_hat.data()[perm[i] * hw + k]).abs());
            }
        }
    }
    Ok(Check::at_most(worst, 1e-12))
}

fn confidence_sum(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (h, w) = (r.random_range(2..=16), r.random_range(2..=16));
        let prob = Tensor::from_fn([1, h, w], |_| r.random_range(0.0..1.0));
        let alpha = r.random_range(0.0..3.0);
        let conf = entropy_confidence(&prob, &edge_map(&prob)?, alpha)?;
        let n = (h * w) as f64;
        worst = worst.max((conf.phi.sum() - (n - 1.0) / n).abs());
    }
    Ok(Check::at_most(worst, 1e-9))
}

fn fusion_weight_order(_: &mut Fixture, _: u64) -> Result<Check> {
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
    let mut violations = 0;
    for &gamma in &[0.1, 1.0, 4.0] {
        for &s_r in &grid {
            let mut prev = None;
            // σ_o² decreasing
            for &s_o in grid.iter().rev() {
                let [a_o, a_r] = fusion_weights([s_o, s_r], gamma);
                if (a_o + a_r - 1.0).abs() > 1e-12 {
                    violations += 1;
                }
                if prev.is_some_and(|p| a_o <= p) {
                    violations += 1;
                }
                prev = Some(a_o);
            }
        }
    }
    Ok(Check::violations(violations))
}

fn kl_minimum(_: &mut Fixture, _: u64) -> Result<Check> {
    let at = |mu: f64, sigma: f64| kl_loss(&[(&[mu][..], &[sigma][..])]);
    let base = at(0.0, 1.0)?;
    let mut violations = usize::from(base != 0.0);
    for d in [1e-3, 1e-2, 0.1] {
        for (mu, sigma) in [(d, 1.0), (-d, 1.0), (0.0, 1.0 + d), (0.0, 1.0 - d), (d, 1.0 + d)] {
            if at(mu, sigma)? <= base {
                violations += 1;
            }
        }
    }
    Ok(Check::violations(violations))
}

fn pcc_gradients(_: &mut Fixture, seed: u64) -> Result<Check> {
    Ok(battery_max(
        seed,
        &["kl", "prototype", "prototype_rec", "metric_consistency", "variational_fusion"],
    ))
}

fn cosine_scale(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let d = r.random_range(2..=8);
        let feat = Tensor::from_fn([d, 4, 4], |_| r.random_range(-1.0..1.0));
        let protos = Tensor::from_fn([2, d], |_| r.random_range(-1.0..1.0));
        let tape = Tape::new();
        let (base, _) = metric_consistency(tape.constant(feat.clone()), tape.constant(protos.clone()), 0.1);
        for c in [0.5, 3.0, 100.0] {
            let (scaled, _) = metric_consistency(tape.constant(feat.scale(c)), tape.constant(protos.clone()), 0.1);
            worst = worst.max(scaled.value().max_abs_diff(&base.value()));
        }
    }
    Ok(Check::at_most(worst, 1e-9))
}

fn snapshot_replay(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut model = Fixture::small_model(seed)?;
    let s = Fixture::small_scene(seed)?;
    let hcl = HclConfig::default();
    let masks = MaskSet::sample(&model, &hcl, seed)?;
    let before = predict(&model, &s.image, &masks, hcl.keep_fraction)?;
    let snap = model.store.snapshot();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let v = model.store.value(id).map(|x| x + 0.01);
        model.store.set_value(id, v)?;
    }
    let perturbed = predict(&model, &s.image, &masks, hcl.keep_fraction)?;
    model.store.restore(&snap)?;
    let after = predict(&model, &s.image, &masks, hcl.keep_fraction)?;
    let violations = usize::from(bits(&before) != bits(&after)) + usize::from(bits(&before) == bits(&perturbed));
    Ok(Check::violations(violations))
}

/// Names of parameters with a nonzero gradient under `weights`.
fn reached(seed: u64, weights: &LossWeights) -> Result<(BTreeSet<String>, Vec<String>)> {
    let model = Fixture::small_model(seed)?;
    let s = Fixture::small_scene(seed)?;
    let hcl = HclConfig::default();
    let masks = MaskSet::sample(&model, &hcl, seed)?;
    let tape = Tape::new();
    let out = hcl_forward(&model, &tape, &s.image, s.mask.as_ref(), &masks, &hcl, weights)?;
    let grads = tape.backward(out.loss)?;
    let hit = grads
        .param_grads()
        .filter(|(_, g)| g.iter().any(|v| *v != 0.0))
        .map(|(id, _)| model.store.get(id).name.clone())
        .collect();
    let all = model.store.iter().map(|(_, p)| p.name.clone()).collect();
    Ok((hit, all))
}

fn no_dead_parameters(_: &mut Fixture, seed: u64) -> Result<Check> {
    let (hit, all) = reached(seed, &LossWeights::default())?;
    let dead: Vec<&String> = all.iter().filter(|n| !hit.contains(*n)).collect();
    if !dead.is_empty() {
        log::warn!("parameters without gradient: {dead:?}");
    }
    Ok(Check::violations(dead.len()))
}

fn shared_encoder(_: &mut Fixture, seed: u64) -> Result<Check> {
    let only = |f: fn(&mut LossWeights)| {
        let mut w = LossWeights {
            hrr: 0.0,
            kl: 0.0,
            pro: 0.0,
            pro_rec: 0.0,
            dec: 0.0,
        };
        f(&mut w);
        w
    };
    let (hrr, all) = reached(seed, &only(|w| w.hrr = 1.0))?;
    let (dec, _) = reached(seed, &only(|w| w.dec = 1.0))?;
    let encoder: Vec<&String> = all.iter().filter(|n| n.starts_with("enc.")).collect();
    let missing = encoder.iter().filter(|n| !hrr.contains(**n) || !dec.contains(**n)).count();
    Ok(Check::violations(if encoder.is_empty() { 1 } else { missing }))
}

fn small_adapt(iterations: usize) -> AdaptationConfig {
    AdaptationConfig {
        iterations,
        lr: 5e-3,
        ..AdaptationConfig::default()
    }
}

fn ground_truth_blind(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut model = Fixture::small_model(seed)?;
    let s = Fixture::small_scene(seed)?;
    let inverted = Sample {
        mask: s.mask.as_ref().map(|m| m.map(|v| 1.0 - v)),
        ..s.clone()
    };
    let cfg = BenchConfig {
        mode: Mode::Hcl,
        degradation: Some(Degradation::new(DegradationKind::Gb, 2)?),
        hcl: HclConfig::default(),
        adapt: small_adapt(2),
    };
    let a = run_benchmark(&mut model, &[s], &cfg)?;
    let b = run_benchmark(&mut model, &[inverted], &cfg)?;
    Ok(Check::violations(usize::from(bits(&a.records[0].prediction) != bits(&b.records[0].prediction))))
}

fn episodic_isolation(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut model = Fixture::small_model(seed)?;
    let (a, b) = (Fixture::small_scene(seed)?, Fixture::small_scene(seed + 1)?);
    let hcl = HclConfig::default();
    let masks = prediction_masks(&model, &hcl, 0)?;
    let first = predict(&model, &b.image, &masks, hcl.keep_fraction)?;
    tta_adapt(&mut model, &a.image, &hcl, &small_adapt(2))?;
    let second = predict(&model, &b.image, &masks, hcl.keep_fraction)?;
    Ok(Check::violations(usize::from(bits(&first) != bits(&second))))
}

fn loss_composition(_: &mut Fixture, seed: u64) -> Result<Check> {
    let model = Fixture::small_model(seed)?;
    let s = Fixture::small_scene(seed)?;
    let hcl = HclConfig::default();
    let masks = MaskSet::sample(&model, &hcl, seed)?;
    let mut r = rng(seed);
    let weights = LossWeights {
        hrr: r.random_range(0.5..2.0),
        kl: r.random_range(0.5..2.0),
        pro: r.random_range(0.5..2.0),
        pro_rec: r.random_range(0.5..2.0),
        dec: r.random_range(0.5..2.0),
    };
    let eval = |w: &LossWeights| -> Result<(f64, [f64; 5])> {
        let tape = Tape::new();
        let out = hcl_forward(&model, &tape, &s.image, s.mask.as_ref(), &masks, &hcl, w)?;
        let rep = out.report;
        Ok((out.loss.item(), [rep.hrr, rep.kl, rep.pro, rep.pro_rec, rep.dec.unwrap_or(0.0)]))
    };
    let (total, parts) = eval(&weights)?;
    let mut worst = 0.0f64;
    for k in 0..5 {
        let mut w = weights;
        let lambda = match k {
            0 => std::mem::replace(&mut w.hrr, 0.0),
            1 => std::mem::replace(&mut w.kl, 0.0),
            2 => std::mem::replace(&mut w.pro, 0.0),
            3 => std::mem::replace(&mut w.pro_rec, 0.0),
            _ => std::mem::replace(&mut w.dec, 0.0),
        };
        let (reduced, _) = eval(&w)?;
        worst = worst.max(((total - reduced) - lambda * parts[k]).abs() / total.abs());
    }
    Ok(Check::at_most(worst, 1e-9))
}

fn self_supervised_descent(fx: &mut Fixture, _: u64) -> Result<Check> {
    let profile = fx.profile.clone();
    let samples = profile.test_set(20)?;
    let model = fx.trained_model()?;
    let deg = Degradation::new(DegradationKind::Gb, 4)?;
    let mut deltas = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let image = deg.apply(&s.image, crate::pipeline::bench::degradation_seed(profile.adapt.seed, i))?;
        let out = tta_adapt(model, &image, &profile.hcl, &profile.adapt)?;
        if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
            deltas.push(last.hrr - first.hrr);
        }
    }
    deltas.sort_by(f64::total_cmp);
    let n = deltas.len();
    let median = if n % 2 == 1 { deltas[n / 2] } else { 0.5 * (deltas[n / 2 - 1] + deltas[n / 2]) };
    Ok(Check::below(median, 0.0))
}

fn degrade_deterministic(_: &mut Fixture, seed: u64) -> Result<Check> {
    let x = random_image(&mut rng(seed), 3, 24, 24);
    let mut violations = 0;
    for kind in DegradationKind::ALL {
        for sev in 1..=5 {
            if bits(&degrade(&x, kind, sev, seed)?) != bits(&degrade(&x, kind, sev, seed)?) {
                violations += 1;
            }
        }
    }
    Ok(Check::violations(violations))
}

fn degrade_range(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut violations = 0;
    for trial in 0..5 {
        let (h, w) = (r.random_range(4..=24), r.random_range(4..=24));
        let x = random_image(&mut r, 3, h, w);
        for kind in DegradationKind::ALL {
            for sev in 1..=5 {
                let y = degrade(&x, kind, sev, seed + trial)?;
                if y.shape() != x.shape() || y.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    violations += 1;
                }
            }
        }
    }
    Ok(Check::violations(violations))
}

fn metric_bounds(_: &mut Fixture, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut violations = 0;
    for i in 0..10 {
        let (_, gt) = crate::data::gen_scene(&crate::data::SceneSpec::new(32, 0.5, seed + i))?;
        let soft = Tensor::from_fn([32, 32], |_| r.random_range(0.0..1.0));
        let m = evaluate_metrics(&soft, &gt)?;
        if [m.s_measure, m.e_measure, m.wfbeta, m.mae].iter().any(|v| !(0.0..=1.0).contains(v)) {
            violations += 1;
        }
        let exact = evaluate_metrics(&gt, &gt)?;
        if [exact.s_measure, exact.e_measure, exact.wfbeta].iter().any(|v| (v - 1.0).abs() > 1e-12) || exact.mae != 0.0 {
            violations += 1;
        }
        let mut wrong = gt.clone();
        for _ in 0..r.random_range(1..=20) {
            let k = r.random_range(0..wrong.numel());
            wrong.data_mut()[k] = 1.0 - wrong.data()[k];
        }
        if bits(&wrong) != bits(&gt) {
            let m = evaluate_metrics(&wrong, &gt)?;
            if m.s_measure >= 1.0 || m.e_measure >= 1.0 || m.wfbeta >= 1.0 || m.mae <= 0.0 {
                violations += 1;
            }
        }
    }
    Ok(Check::violations(violations))
}

/// Allowed decrease of mean MAE between consecutive severities.
pub const DIFFICULTY_SLACK: f64 = 0.005;

fn monotone_difficulty(fx: &mut Fixture, _: u64) -> Result<Check> {
    let profile = fx.profile.clone();
    let samples = profile.test_set(50)?;
    let model = fx.trained_model()?;
    let mut worst_drop = f64::NEG_INFINITY;
    for kind in DegradationKind::ALL {
        let mut prev: Option<f64> = None;
        for sev in 1..=5 {
            let cfg = BenchConfig {
                mode: Mode::Frozen,
                degradation: Some(Degradation::new(kind, sev)?),
                hcl: profile.hcl.clone(),
                adapt: profile.adapt.clone(),
            };
            let mae = run_benchmark(model, &samples, &cfg)?.mean.mae;
            if let Some(p) = prev {
                worst_drop = worst_drop.max(p - mae);
            }
            prev = Some(mae);
        }
    }
    Ok(Check::at_most(worst_drop, DIFFICULTY_SLACK))
}
