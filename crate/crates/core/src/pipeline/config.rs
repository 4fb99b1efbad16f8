//! Run configuration. Files are flat `key = value` lines grouped under
//! `[network]`, `[hcl]`, `[train]` and `[adapt]` headers (a TOML subset);
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HclError, Result};
use crate::hrr::{HrrWeights, PixelScope};
use crate::model::NetworkConfig;
use crate::optim::AdamWConfig;

/// How the two prototype latents are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    #[default]
    Variational,
    /// Deterministic softmax weights from linear projections.
    Point,
}

/// Hyperparameters of the self-supervised objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HclConfig {
    pub spatial_ratio: f64,
    pub low_ratio: f64,
    pub high_ratio: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    /// Focal frequency exponent.
    pub beta: f64,
    /// Low/high split radius; derived from the image size when absent.
    pub radius: Option<f64>,
    pub pixel_scope: PixelScope,
    /// Frequency terms on `1/sqrt(HW)`-scaled spectra.
    pub orthonormal_spectra: bool,
    /// Fraction of affinity positions kept by guidance.
    pub keep_fraction: f64,
    /// Edge emphasis in the entropy weighting.
    pub alpha: f64,
    pub tau: f64,
    /// Divide confidence-weighted prototypes by the confidence mass
    /// instead of the pixel count.
    pub phi_normalized: bool,
    pub fusion: FusionKind,
}

impl Default for HclConfig {
    fn default() -> Self {
        let hrr = HrrWeights::default();
        HclConfig {
            spatial_ratio: 0.25,
            low_ratio: 0.25,
            high_ratio: 0.25,
            lambda_low: hrr.lambda_low,
            lambda_high: hrr.lambda_high,
            beta: hrr.beta,
            radius: hrr.radius,
            pixel_scope: hrr.pixel_scope,
            orthonormal_spectra: hrr.orthonormal,
            keep_fraction: 0.7,
            alpha: 1.0,
            tau: 0.1,
            phi_normalized: false,
            fusion: FusionKind::Variational,
        }
    }
}

impl HclConfig {
    pub fn hrr_weights(&self) -> HrrWeights {
        HrrWeights {
            lambda_low: self.lambda_low,
            lambda_high: self.lambda_high,
            beta: self.beta,
            radius: self.radius,
            pixel_scope: self.pixel_scope,
            orthonormal: self.orthonormal_spectra,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("spatial_ratio", self.spatial_ratio),
            ("low_ratio", self.low_ratio),
            ("high_ratio", self.high_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(HclError::Config(format!("{name} must lie in [0,1], got {r}")));
            }
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(HclError::Config(format!("keep_fraction must lie in (0,1], got {}", self.keep_fraction)));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(HclError::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        for (name, v) in [
            ("lambda_low", self.lambda_low),
            ("lambda_high", self.lambda_high),
            ("beta", self.beta),
            ("alpha", self.alpha),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(HclError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if let Some(r) = self.radius {
            if r.is_nan() || r <= 0.0 {
                return Err(HclError::Config(format!("radius must be > 0, got {r}")));
            }
        }
        Ok(())
    }
}

/// Weights of the objective's components. `dec` only applies with ground
/// truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub hrr: f64,
    pub kl: f64,
    pub pro: f64,
    pub pro_rec: f64,
    pub dec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            hrr: 1.0,
            kl: 1.0,
            pro: 1.0,
            pro_rec: 1.0,
            dec: 1.0,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_hrr", self.hrr),
            ("lambda_kl", self.kl),
            ("lambda_pro", self.pro),
            ("lambda_pro_rec", self.pro_rec),
            ("lambda_dec", self.dec),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(HclError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which parameters receive updates at test time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSubset {
    #[default]
    All,
    /// Encoder and detection decoder only.
    Detection,
    /// Normalization scales and shifts only.
    NormAffine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Restore the trained parameters after every sample.
    pub episodic: bool,
    /// Draw fresh masks and noise at every iteration.
    pub resample_masks: bool,
    pub subset: ParamSubset,
    pub lambda_hrr: f64,
    pub lambda_kl: f64,
    pub lambda_pro: f64,
    pub lambda_pro_rec: f64,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        AdaptationConfig {
            iterations: 30,
            lr: 1e-3,
            weight_decay: AdamWConfig::default().weight_decay,
            episodic: true,
            resample_masks: true,
            subset: ParamSubset::All,
            lambda_hrr: w.hrr,
            lambda_kl: w.kl,
            lambda_pro: w.pro,
            lambda_pro_rec: w.pro_rec,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            hrr: self.lambda_hrr,
            kl: self.lambda_kl,
            pro: self.lambda_pro,
            pro_rec: self.lambda_pro_rec,
            dec: 0.0,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(HclError::Config(format!("adapt.lr must be > 0, got {}", self.lr)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(HclError::Config(format!("adapt.weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        self.weights().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda_hrr: f64,
    pub lambda_kl: f64,
    pub lambda_pro: f64,
    pub lambda_pro_rec: f64,
    pub lambda_dec: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            lr: 1e-3,
            weight_decay: AdamWConfig::default().weight_decay,
            lambda_hrr: w.hrr,
            lambda_kl: w.kl,
            lambda_pro: w.pro,
            lambda_pro_rec: w.pro_rec,
            lambda_dec: w.dec,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            hrr: self.lambda_hrr,
            kl: self.lambda_kl,
            pro: self.lambda_pro,
            pro_rec: self.lambda_pro_rec,
            dec: self.lambda_dec,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HclError::Config("train.batch_size must be >= 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(HclError::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        self.weights().validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub network: NetworkConfig,
    pub hcl: HclConfig,
    pub train: TrainConfig,
    pub adapt: AdaptationConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| HclError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| HclError::io(path, e))?;
        Config::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.hcl.validate()?;
        self.train.validate()?;
        self.adapt.validate()
    }

    /// Every setting in the file format accepted by [`Config::parse`].
    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = Config::parse("[adapt]\niterations = 5\nsubset = \"detection\"\n\n[hcl]\ntau = 0.2\n").unwrap();
        assert_eq!(cfg.adapt.iterations, 5);
        assert_eq!(cfg.adapt.subset, ParamSubset::Detection);
        assert_eq!(cfg.hcl.tau, 0.2);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(Config::parse("[adapt]\nitersations = 5\n"), Err(HclError::Config(_))));
        assert!(matches!(Config::parse("[bogus]\nx = 1\n"), Err(HclError::Config(_))));
        assert!(matches!(Config::parse("[adapt]\nlr = 0.0\n"), Err(HclError::Config(_))));
        assert!(matches!(Config::parse("[hcl]\nkeep_fraction = 0.0\n"), Err(HclError::Config(_))));
        assert!(matches!(Config::parse("[train]\nlambda_kl = -1.0\n"), Err(HclError::Config(_))));
    }

    #[test]
    fn adaptation_never_weights_supervision() {
        assert_eq!(AdaptationConfig::default().weights().dec, 0.0);
    }
}
