//! Inputs shared by the benchmarks.

use hcl_core::data::{gen_scene, SceneSpec};
use hcl_core::model::{Model, NetworkConfig};
use hcl_core::Tensor;

/// Synthetic `3×size×size` scene.
pub fn scene(size: usize, seed: u64) -> Tensor {
    gen_scene(&SceneSpec::new(size, 0.7, seed)).expect("valid scene spec").0
}

/// Untrained network at the desk-scale widths, marked trained so the
/// adaptation entry points accept it.
pub fn compact_model() -> Model {
    let mut m = Model::new(NetworkConfig {
        input_size: 64,
        base_channels: 16,
        detect_channels: 16,
        embed_dim: 32,
        decoder_depth: 2,
        heads: 2,
        pcc_hidden: 16,
        ..NetworkConfig::default()
    })
    .expect("valid network");
    m.trained = true;
    m
}
