use std::collections::HashSet;

use hcl_core::data::{gen_scene, Degradation, DegradationKind, SceneSpec};
use hcl_core::model::{Model, NetworkConfig};
use hcl_core::pipeline::bench::write_csv;
use hcl_core::pipeline::tta::prediction_masks;
use hcl_core::pipeline::{
    hcl_forward, mean_entropy, predict, run_benchmark, tent_baseline, tta_adapt, AdaptationConfig, BenchConfig,
    HclConfig, LossWeights, MaskSet, Mode, Sample,
};
use hcl_core::{HclError, Tape, Tensor};

fn tiny() -> NetworkConfig {
    NetworkConfig {
        input_size: 64,
        base_channels: 4,
        detect_channels: 4,
        embed_dim: 8,
        decoder_depth: 1,
        heads: 2,
        patch: 8,
        pcc_hidden: 4,
        ..NetworkConfig::default()
    }
}

fn model() -> Model {
    let mut m = Model::new(tiny()).unwrap();
    m.trained = true;
    m
}

fn scene(seed: u64) -> Sample {
    let (image, mask) = gen_scene(&SceneSpec::new(64, 0.7, seed)).unwrap();
    Sample {
        name: format!("s{seed}"),
        image,
        mask: Some(mask),
    }
}

fn adapt(iterations: usize) -> AdaptationConfig {
    AdaptationConfig {
        iterations,
        lr: 5e-3,
        ..AdaptationConfig::default()
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn zero_iterations_reproduce_the_frozen_prediction() {
    let mut m = model();
    let hcl = HclConfig::default();
    let s = scene(1);
    let frozen = predict(&m, &s.image, &prediction_masks(&m, &hcl, 0).unwrap(), hcl.keep_fraction).unwrap();
    let out = tta_adapt(&mut m, &s.image, &hcl, &adapt(0)).unwrap();
    assert_eq!(bits(&out.prediction), bits(&frozen));
    assert!(out.trace.is_empty());
}

#[test]
fn episodic_adaptation_restores_every_bit() {
    let mut m = model();
    let snap = m.store.snapshot();
    let hcl = HclConfig::default();
    let out = tta_adapt(&mut m, &scene(2).image, &hcl, &adapt(3)).unwrap();
    assert!(m.store.matches(&snap));
    assert_eq!(out.trace.len(), 4);

    let mut cfg = adapt(3);
    cfg.episodic = false;
    tta_adapt(&mut m, &scene(2).image, &hcl, &cfg).unwrap();
    assert!(!m.store.matches(&snap));
}

#[test]
fn adaptation_changes_the_prediction() {
    let mut m = model();
    let hcl = HclConfig::default();
    let s = scene(3);
    let frozen = tta_adapt(&mut m, &s.image, &hcl, &adapt(0)).unwrap().prediction;
    let adapted = tta_adapt(&mut m, &s.image, &hcl, &adapt(3)).unwrap().prediction;
    assert!(frozen.max_abs_diff(&adapted) > 0.0);
}

#[test]
fn adaptation_is_deterministic() {
    let mut m = model();
    let hcl = HclConfig::default();
    let s = scene(4);
    let a = tta_adapt(&mut m, &s.image, &hcl, &adapt(2)).unwrap();
    let b = tta_adapt(&mut m, &s.image, &hcl, &adapt(2)).unwrap();
    assert_eq!(bits(&a.prediction), bits(&b.prediction));
    assert_eq!(a.trace, b.trace);
}

#[test]
fn previous_samples_do_not_leak_into_later_ones() {
    let mut m = model();
    let hcl = HclConfig::default();
    let alone = tta_adapt(&mut m, &scene(6).image, &hcl, &adapt(2)).unwrap();
    let mut fresh = model();
    tta_adapt(&mut fresh, &scene(5).image, &hcl, &adapt(2)).unwrap();
    let after = tta_adapt(&mut fresh, &scene(6).image, &hcl, &adapt(2)).unwrap();
    assert_eq!(bits(&alone.prediction), bits(&after.prediction));
}

#[test]
fn untrained_model_is_refused() {
    let mut m = Model::new(tiny()).unwrap();
    let err = tta_adapt(&mut m, &scene(0).image, &HclConfig::default(), &adapt(1)).unwrap_err();
    assert!(matches!(err, HclError::Contract(_)));
}

#[test]
fn wrong_image_shape_is_a_shape_error() {
    let mut m = model();
    let err = tta_adapt(&mut m, &Tensor::zeros([3, 32, 32]), &HclConfig::default(), &adapt(1)).unwrap_err();
    assert!(matches!(err, HclError::Shape { .. }));
}

#[test]
fn trace_totals_are_weighted_sums() {
    let mut m = model();
    let hcl = HclConfig::default();
    let mut cfg = adapt(2);
    cfg.lambda_kl = 0.3;
    cfg.lambda_pro_rec = 2.0;
    let out = tta_adapt(&mut m, &scene(7).image, &hcl, &cfg).unwrap();
    for r in &out.trace {
        let oracle = r.hrr + 0.3 * r.kl + r.pro + 2.0 * r.pro_rec;
        assert!((r.total - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        assert!(r.dec.is_none());
        assert!(r.is_finite());
    }
}

#[test]
fn zero_weight_removes_exactly_one_component() {
    let m = model();
    let hcl = HclConfig::default();
    let s = scene(8);
    let masks = MaskSet::sample(&m, &hcl, 11).unwrap();
    let full = LossWeights::default();
    let tape = Tape::new();
    let all = hcl_forward(&m, &tape, &s.image, s.mask.as_ref(), &masks, &hcl, &full).unwrap();
    assert!((all.loss.item() - all.report.total).abs() <= 1e-9 * all.report.total.abs());
    let dec = all.report.dec.expect("supervised pass reports dec");

    let parts = [
        ("hrr", all.report.hrr),
        ("kl", all.report.kl),
        ("pro", all.report.pro),
        ("pro_rec", all.report.pro_rec),
        ("dec", dec),
    ];
    for (name, value) in parts {
        let mut w = full;
        match name {
            "hrr" => w.hrr = 0.0,
            "kl" => w.kl = 0.0,
            "pro" => w.pro = 0.0,
            "pro_rec" => w.pro_rec = 0.0,
            _ => w.dec = 0.0,
        }
        let tape = Tape::new();
        let out = hcl_forward(&m, &tape, &s.image, s.mask.as_ref(), &masks, &hcl, &w).unwrap();
        let expect = all.report.total - value;
        assert!(
            (out.loss.item() - expect).abs() <= 1e-9 * all.report.total.abs(),
            "{name}: {} vs {expect}",
            out.loss.item()
        );
    }
}

#[test]
fn unsupervised_objective_reaches_guidance_and_prototype_parameters() {
    let m = model();
    let hcl = HclConfig::default();
    let s = scene(9);
    let masks = MaskSet::sample(&m, &hcl, 3).unwrap();
    let tape = Tape::new();
    let out = hcl_forward(&m, &tape, &s.image, None, &masks, &hcl, &LossWeights::default()).unwrap();
    let grads = tape.backward(out.loss).unwrap();
    let reached: HashSet<String> = grads
        .param_grads()
        .filter(|(_, g)| g.iter().any(|v| *v != 0.0))
        .map(|(id, _)| m.store.get(id).name.clone())
        .collect();
    for prefix in ["tag.", "pcc.mu.", "pcc.sigma.", "pcc.weight.", "enc.", "det."] {
        assert!(reached.iter().any(|n| n.starts_with(prefix)), "no gradient reaches {prefix}*");
    }
    assert!(reached.contains("pcc.gamma"));
}

#[test]
fn benchmark_ignores_ground_truth_while_adapting() {
    let mut m = model();
    let samples: Vec<Sample> = (20..22).map(scene).collect();
    let corrupted: Vec<Sample> = samples
        .iter()
        .map(|s| Sample {
            mask: s.mask.as_ref().map(|g| g.map(|v| 1.0 - v)),
            ..s.clone()
        })
        .collect();
    let cfg = BenchConfig {
        mode: Mode::Hcl,
        degradation: Some(Degradation::new(DegradationKind::Gn, 2).unwrap()),
        hcl: HclConfig::default(),
        adapt: adapt(2),
    };
    let a = run_benchmark(&mut m, &samples, &cfg).unwrap();
    let b = run_benchmark(&mut m, &corrupted, &cfg).unwrap();
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(bits(&x.prediction), bits(&y.prediction));
    }
    assert!((a.mean.mae + b.mean.mae - 1.0).abs() < 1e-12);
}

#[test]
fn benchmark_csv_is_reproducible() {
    let samples: Vec<Sample> = (30..32).map(scene).collect();
    let render = || {
        let mut m = model();
        let snap = m.store.snapshot();
        let cfg = BenchConfig {
            mode: Mode::Hcl,
            degradation: Some(Degradation::new(DegradationKind::Gb, 3).unwrap()),
            hcl: HclConfig::default(),
            adapt: adapt(1),
        };
        let result = run_benchmark(&mut m, &samples, &cfg).unwrap();
        assert!(m.store.matches(&snap));
        let mut buf = Vec::new();
        write_csv(&mut buf, &result).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let first = render();
    assert_eq!(first, render());
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "sample,mode,degradation,severity,s_measure,e_measure,wfbeta,mae");
    assert!(lines[1].starts_with("s30,hcl,gb,3,"));
    assert!(lines[3].starts_with("mean,hcl,gb,3,"));
}

#[test]
fn empty_benchmark_is_a_dataset_error() {
    let mut m = model();
    let cfg = BenchConfig {
        mode: Mode::Frozen,
        degradation: None,
        hcl: HclConfig::default(),
        adapt: adapt(0),
    };
    assert!(matches!(run_benchmark(&mut m, &[], &cfg), Err(HclError::Dataset(_))));
}

#[test]
fn entropy_baseline_sharpens_and_resets() {
    let mut m = model();
    let snap = m.store.snapshot();
    let hcl = HclConfig::default();
    let s = scene(40);
    let frozen = predict(&m, &s.image, &prediction_masks(&m, &hcl, 0).unwrap(), hcl.keep_fraction).unwrap();
    let same = tent_baseline(&mut m, &s.image, &hcl, 0, 1e-2, 0).unwrap();
    assert_eq!(bits(&same), bits(&frozen));
    let tent = tent_baseline(&mut m, &s.image, &hcl, 5, 1e-2, 0).unwrap();
    assert!(mean_entropy(&tent) < mean_entropy(&frozen));
    assert!(m.store.matches(&snap));
}

#[test]
fn mean_entropy_oracle() {
    let p = Tensor::new([1, 2], vec![0.5, 0.25]).unwrap();
    let h = |q: f64| -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
    assert!((mean_entropy(&p) - 0.5 * (h(0.5) + h(0.25))).abs() < 1e-15);
}
