//! Training, test-time adaptation and benchmarking.

pub mod bench;
pub mod config;
pub mod hcl;
pub mod report;
pub mod train;
pub mod tta;

use std::path::Path;

use log::warn;

use crate::data::Dataset;
use crate::error::{HclError, Result};
use crate::tensor::Tensor;

pub use bench::{run_benchmark, BenchConfig, BenchmarkResult, Mode, SampleRecord};
pub use config::{AdaptationConfig, Config, FusionKind, HclConfig, LossWeights, ParamSubset, TrainConfig};
pub use hcl::{debug_maps, hcl_forward, predict, HclOutput, LossReport, MaskSet};
pub use train::{train, train_step};
pub use tta::{mean_entropy, tent_baseline, tta_adapt, Adaptation};

/// An image with its optional ground-truth mask.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub image: Tensor,
    pub mask: Option<Tensor>,
}

/// Reads every pair of a dataset directory. Unreadable pairs are skipped
/// with a warning and their names returned.
pub fn load_samples(root: &Path) -> Result<(Vec<Sample>, Vec<String>)> {
    let ds = Dataset::open(root)?;
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (name, pair) in ds.iter() {
        match pair {
            Ok((image, mask)) if image.shape()[1..] == *mask.shape() => samples.push(Sample {
                name,
                image,
                mask: Some(mask),
            }),
            Ok(_) => {
                warn!("skipping {name}: image and mask sizes differ");
                skipped.push(name);
            }
            Err(e) => {
                warn!("skipping {name}: {e}");
                skipped.push(name);
            }
        }
    }
    if samples.is_empty() {
        return Err(HclError::Dataset(format!("no readable samples in {}", root.display())));
    }
    Ok((samples, skipped))
}
