use std::path::PathBuf;

use log::info;

use crate::data::{gen_scene, SceneSpec};
use crate::error::{HclError, Result};
use crate::model::{Model, NetworkConfig};
use crate::pipeline::{train, AdaptationConfig, HclConfig, Sample, TrainConfig};

/// Network, training recipe and synthetic data of a verification run.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub network: NetworkConfig,
    pub hcl: HclConfig,
    pub train: TrainConfig,
    pub adapt: AdaptationConfig,
    pub train_scenes: usize,
    pub camouflage: f64,
    /// First scene seed of the test split; training uses `0..train_scenes`.
    pub test_seed: u64,
}

impl Profile {
    /// Desk-scale profile: 64×64 inputs, narrow widths, a few minutes of
    /// training on one core.
    pub fn compact() -> Self {
        Profile {
            network: NetworkConfig {
                input_size: 64,
                base_channels: 16,
                detect_channels: 16,
                embed_dim: 32,
                decoder_depth: 2,
                heads: 2,
                pcc_hidden: 16,
                ..NetworkConfig::default()
            },
            hcl: HclConfig::default(),
            train: TrainConfig {
                epochs: 8,
                batch_size: 4,
                ..TrainConfig::default()
            },
            adapt: AdaptationConfig {
                iterations: 30,
                lr: 5e-4,
                ..AdaptationConfig::default()
            },
            train_scenes: 200,
            camouflage: 0.7,
            test_seed: 10_000,
        }
    }

    pub fn scene(&self, seed: u64) -> Result<Sample> {
        let (image, mask) = gen_scene(&SceneSpec::new(self.network.input_size, self.camouflage, seed))?;
        Ok(Sample {
            name: format!("scene{seed:05}"),
            image,
            mask: Some(mask),
        })
    }

    pub fn train_set(&self) -> Result<Vec<Sample>> {
        (0..self.train_scenes as u64).map(|s| self.scene(s)).collect()
    }

    pub fn test_set(&self, n: usize) -> Result<Vec<Sample>> {
        (0..n as u64).map(|i| self.scene(self.test_seed + i)).collect()
    }
}

/// Shared state of a verification run: the profile and a lazily trained
/// model, optionally cached in a checkpoint file.
pub struct Fixture {
    pub profile: Profile,
    pub checkpoint: Option<PathBuf>,
    pub allow_training: bool,
    model: Option<Model>,
}

impl Fixture {
    pub fn new(profile: Profile) -> Self {
        Fixture {
            profile,
            checkpoint: None,
            allow_training: true,
            model: None,
        }
    }

    pub fn with_checkpoint(mut self, path: PathBuf, allow_training: bool) -> Self {
        self.checkpoint = Some(path);
        self.allow_training = allow_training;
        self
    }

    /// Loads the checkpoint when present, otherwise trains (and saves when a
    /// checkpoint path is set).
    pub fn trained_model(&mut self) -> Result<&mut Model> {
        if self.model.is_none() {
            let mut model = Model::new(self.profile.network.clone())?;
            match &self.checkpoint {
                Some(path) if path.exists() => {
                    info!("loading checkpoint {}", path.display());
                    model.load_checkpoint(path)?;
                }
                _ if !self.allow_training => {
                    return Err(HclError::contract(match &self.checkpoint {
                        Some(p) => format!("checkpoint {} missing and training disabled", p.display()),
                        None => "no checkpoint given and training disabled".into(),
                    }));
                }
                _ => {
                    let samples = self.profile.train_set()?;
                    info!("training on {} scenes for {} epochs", samples.len(), self.profile.train.epochs);
                    train(&mut model, &samples, &self.profile.hcl, &self.profile.train, |_, _| {})?;
                    if let Some(path) = &self.checkpoint {
                        model.save_checkpoint(path)?;
                    }
                }
            }
            self.model = Some(model);
        }
        Ok(self.model.as_mut().expect("model set above"))
    }

    /// Untrained model of a small width, marked trained so the adaptation
    /// entry points accept it.
    pub fn small_model(seed: u64) -> Result<Model> {
        let mut m = Model::new(NetworkConfig {
            input_size: 64,
            base_channels: 4,
            detect_channels: 4,
            embed_dim: 8,
            decoder_depth: 1,
            heads: 2,
            patch: 8,
            pcc_hidden: 4,
            seed,
            ..NetworkConfig::default()
        })?;
        m.trained = true;
        Ok(m)
    }

    pub fn small_scene(seed: u64) -> Result<Sample> {
        let (image, mask) = gen_scene(&SceneSpec::new(64, 0.7, seed))?;
        Ok(Sample {
            name: format!("small{seed}"),
            image,
            mask: Some(mask),
        })
    }
}
