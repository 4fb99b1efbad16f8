//! Evaluation of a dataset under one prediction mode.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::data::{evaluate_metrics, Degradation, Metrics};
use crate::error::{HclError, Result};
use crate::model::Model;
use crate::tensor::Tensor;

use super::config::{AdaptationConfig, HclConfig};
use super::tta::{prediction_masks, tent_baseline, tta_adapt};
use super::Sample;

pub const CSV_HEADER: [&str; 8] = ["sample", "mode", "degradation", "severity", "s_measure", "e_measure", "wfbeta", "mae"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Frozen,
    Hcl,
    Tent,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Frozen => "frozen",
            Mode::Hcl => "hcl",
            Mode::Tent => "tent",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = HclError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(Mode::Frozen),
            "hcl" => Ok(Mode::Hcl),
            "tent" => Ok(Mode::Tent),
            other => Err(HclError::Usage(format!("unknown mode `{other}` (expected frozen, hcl or tent)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub mode: Mode,
    /// Applied to every image before prediction.
    pub degradation: Option<Degradation>,
    pub hcl: HclConfig,
    /// Iterations, learning rate and seed also drive the entropy baseline.
    pub adapt: AdaptationConfig,
}

#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub sample: String,
    pub degradation: Option<Degradation>,
    pub prediction: Tensor,
    pub metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct BenchmarkResult {
    pub mode: Mode,
    pub records: Vec<SampleRecord>,
    pub mean: Metrics,
}

/// Seed of the noise draw for the `index`-th sample.
pub fn degradation_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

/// Predicts one (possibly degraded) image under `cfg.mode`.
pub fn predict_sample(model: &mut Model, image: &Tensor, cfg: &BenchConfig) -> Result<Tensor> {
    match cfg.mode {
        Mode::Frozen => {
            let masks = prediction_masks(model, &cfg.hcl, cfg.adapt.seed)?;
            super::hcl::predict(model, image, &masks, cfg.hcl.keep_fraction)
        }
        Mode::Hcl => Ok(tta_adapt(model, image, &cfg.hcl, &cfg.adapt)?.prediction),
        Mode::Tent => tent_baseline(model, image, &cfg.hcl, cfg.adapt.iterations, cfg.adapt.lr, cfg.adapt.seed),
    }
}

/// Evaluates every sample in order. Samples must carry ground truth.
pub fn run_benchmark(model: &mut Model, samples: &[Sample], cfg: &BenchConfig) -> Result<BenchmarkResult> {
    if samples.is_empty() {
        return Err(HclError::Dataset("no samples to evaluate".into()));
    }
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let gt = s
            .mask
            .as_ref()
            .ok_or_else(|| HclError::contract(format!("sample {} has no ground truth", s.name)))?;
        let image = match cfg.degradation {
            Some(d) => d.apply(&s.image, degradation_seed(cfg.adapt.seed, i))?,
            None => s.image.clone(),
        };
        let prediction = predict_sample(model, &image, cfg)?;
        let metrics = evaluate_metrics(&prediction, gt)?;
        log::debug!("{} {}: mae {:.4}", cfg.mode, s.name, metrics.mae);
        records.push(SampleRecord {
            sample: s.name.clone(),
            degradation: cfg.degradation,
            prediction,
            metrics,
        });
    }
    let rows: Vec<Metrics> = records.iter().map(|r| r.metrics).collect();
    Ok(BenchmarkResult {
        mode: cfg.mode,
        mean: Metrics::mean(&rows).expect("non-empty"),
        records,
    })
}

fn degradation_fields(d: Option<Degradation>) -> (String, String) {
    match d {
        Some(d) => (d.kind.to_string(), d.severity.to_string()),
        None => ("none".into(), "0".into()),
    }
}

fn metric_fields(m: &Metrics) -> [String; 4] {
    [m.s_measure, m.e_measure, m.wfbeta, m.mae].map(|v| format!("{v:.6}"))
}

/// Per-sample rows followed by a `mean` row.
pub fn write_csv<W: Write>(out: W, result: &BenchmarkResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let mode = result.mode.as_str();
    for r in &result.records {
        let (deg, sev) = degradation_fields(r.degradation);
        let [s, e, f, m] = metric_fields(&r.metrics);
        w.write_record([r.sample.as_str(), mode, &deg, &sev, &s, &e, &f, &m])?;
    }
    let (deg, sev) = degradation_fields(result.records.first().and_then(|r| r.degradation));
    let [s, e, f, m] = metric_fields(&result.mean);
    w.write_record(["mean", mode, &deg, &sev, &s, &e, &f, &m])?;
    w.flush().map_err(|e| HclError::Dataset(format!("writing csv: {e}")))?;
    Ok(())
}
