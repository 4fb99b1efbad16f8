//! Convolutional encoder, top-down detection decoder, reconstruction
//! decoders and the learned guidance/prototype heads, all sharing one
//! [`ParamStore`].

pub mod loss;
pub mod recon;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{HclError, Result};
use crate::nn::{Conv, Ctx, Init, Norm};
use crate::params::{ParamId, ParamStore};
use crate::pcc::PccHeads;
use crate::tag::Projection;

pub use loss::{structure_loss, structure_loss_var};
pub use recon::{Branch, ReconDecoder};

pub const STAGES: usize = 4;

/// Architecture hyperparameters. The encoder is a small convolutional
/// network trained from scratch, not a pretrained backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub base_channels: usize,
    /// Channels of the detection decoder.
    pub detect_channels: usize,
    pub embed_dim: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    /// Hidden width of the prototype heads.
    pub pcc_hidden: usize,
    /// Registers point-estimate fusion heads for the ablation baseline.
    pub point_estimate: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 128,
            base_channels: 32,
            detect_channels: 32,
            embed_dim: 64,
            decoder_depth: 4,
            heads: 4,
            mlp_ratio: 2,
            patch: 16,
            pcc_hidden: 32,
            point_estimate: false,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn full_scale() -> Self {
        NetworkConfig {
            input_size: 384,
            embed_dim: 512,
            ..Default::default()
        }
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn deepest_channels(&self) -> usize {
        self.stage_channels(STAGES - 1)
    }

    /// Spatial size of encoder stage `stage` (0-based).
    pub fn stage_size(&self, stage: usize) -> usize {
        self.input_size >> (stage + 2)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HclError::Config(m));
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return err(format!("input size {} must be a positive multiple of 32", self.input_size));
        }
        if self.patch == 0 || 32 % self.patch != 0 || !self.input_size.is_multiple_of(self.patch) {
            return err(format!("patch size {} must divide 32 and the input size", self.patch));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return err(format!("embedding dim {} must be divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.base_channels == 0 || self.detect_channels == 0 || self.pcc_hidden == 0 || self.mlp_ratio == 0 {
            return err("channel widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvNorm {
    conv: Conv,
    norm: Norm,
}

impl ConvNorm {
    #[allow(clippy::too_many_arguments)]
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, c_in: usize, c_out: usize, k: usize, s: usize, p: usize) -> Self {
        ConvNorm {
            conv: Conv::new(store, init, &format!("{name}.conv"), c_in, c_out, k, s, p),
            norm: Norm::new(store, &format!("{name}.norm"), c_out),
        }
    }

    fn pre_activation<'t>(&self, cx: Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        self.norm.forward(cx, self.conv.forward(cx, x))
    }

    fn forward<'t>(&self, cx: Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        self.pre_activation(cx, x).relu()
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stages: Vec<[ConvNorm; 2]>,
}

impl Encoder {
    fn new(store: &mut ParamStore, init: &mut Init, cfg: &NetworkConfig) -> Self {
        let stages = (0..STAGES)
            .map(|i| {
                let c = cfg.stage_channels(i);
                let (c_in, k) = if i == 0 { (3, 4) } else { (cfg.stage_channels(i - 1), 2) };
                [
                    ConvNorm::new(store, init, &format!("enc.stage{}.down", i + 1), c_in, c, k, k, 0),
                    ConvNorm::new(store, init, &format!("enc.stage{}.body", i + 1), c, c, 3, 1, 1),
                ]
            })
            .collect();
        Encoder { stages }
    }

    /// Multi-scale features of a `3×H×W` image.
    pub fn forward<'t>(&self, cx: Ctx<'t, '_>, image: Var<'t>) -> [Var<'t>; STAGES] {
        let mut x = image;
        let mut out = Vec::with_capacity(STAGES);
        for [down, body] in &self.stages {
            x = body.forward(cx, down.forward(cx, x));
            out.push(x);
        }
        out.try_into().unwrap()
    }
}

/// Output of the detection decoder.
#[derive(Clone, Copy, Debug)]
pub struct Detection<'t> {
    /// Logits per decoder stage at that stage's resolution, finest first.
    pub logits: [Var<'t>; STAGES],
    /// Pre-activation feature of the finest decoder stage, `D×H/4×W/4`.
    pub feature: Var<'t>,
}

impl<'t> Detection<'t> {
    /// Probability map of `stage` upsampled to the input resolution.
    pub fn probability(&self, stage: usize, input_size: usize) -> Var<'t> {
        let l = self.logits[stage];
        let factor = input_size / l.shape()[1];
        let up = if factor > 1 { l.upsample_nearest(factor) } else { l };
        up.sigmoid()
    }

    /// Finest-stage probabilities at decoder resolution, `1×H/4×W/4`.
    pub fn coarse_probability(&self) -> Var<'t> {
        self.logits[0].sigmoid()
    }
}

#[derive(Clone, Debug)]
pub struct DetectDecoder {
    lateral: Vec<Conv>,
    fuse: Vec<ConvNorm>,
    pub heads: Vec<Conv>,
}

impl DetectDecoder {
    fn new(store: &mut ParamStore, init: &mut Init, cfg: &NetworkConfig) -> Self {
        let d = cfg.detect_channels;
        let mut lateral = Vec::new();
        let mut fuse = Vec::new();
        let mut heads = Vec::new();
        for i in 0..STAGES {
            let n = i + 1;
            lateral.push(Conv::new(store, init, &format!("det.lateral{n}"), cfg.stage_channels(i), d, 1, 1, 0));
            fuse.push(ConvNorm::new(store, init, &format!("det.fuse{n}"), d, d, 3, 1, 1));
            heads.push(Conv::new(store, init, &format!("det.head{n}"), d, 1, 1, 1, 0));
        }
        DetectDecoder { lateral, fuse, heads }
    }

    pub fn forward<'t>(&self, cx: Ctx<'t, '_>, feats: &[Var<'t>; STAGES]) -> Detection<'t> {
        let mut logits: Vec<Option<Var<'t>>> = vec![None; STAGES];
        let mut above: Option<Var<'t>> = None;
        let mut feature = None;
        for i in (0..STAGES).rev() {
            let mut d = self.lateral[i].forward(cx, feats[i]);
            if let Some(up) = above {
                d = d + up.upsample_nearest(2);
            }
            let pre = self.fuse[i].pre_activation(cx, d);
            let act = pre.relu();
            logits[i] = Some(self.heads[i].forward(cx, act));
            above = Some(act);
            if i == 0 {
                feature = Some(pre);
            }
        }
        Detection {
            logits: logits.into_iter().map(Option::unwrap).collect::<Vec<_>>().try_into().unwrap(),
            feature: feature.unwrap(),
        }
    }
}

/// Every learned component plus the parameter store they index into.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: NetworkConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub detector: DetectDecoder,
    pub recon: [ReconDecoder; 3],
    pub tag: Projection<ParamId>,
    pub pcc: PccHeads,
    /// Set once parameters come from training or a checkpoint.
    pub trained: bool,
}

impl Model {
    pub fn new(config: NetworkConfig) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(config.seed);
        let encoder = Encoder::new(&mut store, &mut init, &config);
        let detector = DetectDecoder::new(&mut store, &mut init, &config);
        let recon = Branch::ALL.map(|b| ReconDecoder::new(&mut store, &mut init, &config, b));
        let c = config.deepest_channels();
        let mut tag_init = |_| init.uniform_scalar(1.0);
        let tag = Projection::register(&mut store, "tag", c, &mut tag_init);
        let pcc = PccHeads::new(
            &mut store,
            &mut init,
            config.detect_channels,
            config.pcc_hidden,
            config.point_estimate,
        );
        Ok(Model {
            config,
            store,
            encoder,
            detector,
            recon,
            tag,
            pcc,
            trained: false,
        })
    }

    pub fn load_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        crate::checkpoint::load_into(&mut self.store, path)?;
        self.trained = true;
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        crate::checkpoint::save(&self.store, path)
    }

    pub fn ctx<'t, 's>(&'s self, tape: &'t crate::autograd::Tape) -> Ctx<'t, 's> {
        Ctx::new(tape, &self.store)
    }

    pub fn decoder(&self, branch: Branch) -> &ReconDecoder {
        &self.recon[Branch::ALL.iter().position(|b| *b == branch).unwrap()]
    }

    /// Parameters of the 1×1 logit heads. Without ground truth nothing
    /// downstream of them is differentiated.
    pub fn head_params(&self) -> Vec<ParamId> {
        self.detector.heads.iter().flat_map(|c| [c.w, c.b]).collect()
    }

    /// Parameters of the encoder and the detection decoder.
    pub fn is_detection_param(name: &str) -> bool {
        name.starts_with("enc.") || name.starts_with("det.")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::tensor::Tensor;

    fn small() -> NetworkConfig {
        NetworkConfig {
            input_size: 64,
            base_channels: 4,
            detect_channels: 4,
            embed_dim: 8,
            decoder_depth: 1,
            heads: 2,
            pcc_hidden: 4,
            ..Default::default()
        }
    }

    #[test]
    fn encoder_shapes() {
        let cfg = NetworkConfig {
            base_channels: 8,
            ..Default::default()
        };
        let m = Model::new(cfg).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::full([3, 128, 128], 0.5));
        let f = m.encoder.forward(m.ctx(&tape), x);
        let shapes: Vec<_> = f.iter().map(|v| v.shape()).collect();
        assert_eq!(shapes, [vec![8, 32, 32], vec![16, 16, 16], vec![32, 8, 8], vec![64, 4, 4]]);
    }

    #[test]
    fn detection_and_reconstruction_shapes() {
        let m = Model::new(small()).unwrap();
        let tape = Tape::new();
        let cx = m.ctx(&tape);
        let x = tape.constant(Tensor::from_fn([3, 64, 64], |i| ((i * 31) % 17) as f64 / 17.0));
        let f = m.encoder.forward(cx, x);
        let det = m.detector.forward(cx, &f);
        for s in 0..STAGES {
            let p = det.probability(s, 64).value();
            assert_eq!(p.shape(), [1, 64, 64]);
            assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert_eq!(det.feature.shape(), [4, 16, 16]);
        for b in Branch::ALL {
            assert_eq!(m.decoder(b).forward(cx, f[3], None).shape(), [3, 64, 64]);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Model::new(NetworkConfig { input_size: 100, ..small() }).is_err());
        assert!(Model::new(NetworkConfig { embed_dim: 9, ..small() }).is_err());
    }
}
