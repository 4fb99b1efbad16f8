//! Transformer reconstruction decoders for the spatial and spectral branches.

use crate::autograd::Var;
use crate::hrr::SpatialMask;
use crate::nn::{Ctx, Init, LayerNorm, Linear};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

use super::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Pixel,
    Low,
    High,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Pixel, Branch::Low, Branch::High];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Pixel => "pixel",
            Branch::Low => "low",
            Branch::High => "high",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct ReconDecoder {
    pub branch: Branch,
    embed: Linear,
    pub pos: ParamId,
    /// Inserted at hidden patches for the pixel branch; added to every
    /// token for the spectral branches.
    pub token: ParamId,
    blocks: Vec<Block>,
    ln: LayerNorm,
    head: Linear,
    heads: usize,
    patch: usize,
    grid: usize,
    image: usize,
}

impl ReconDecoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &NetworkConfig, branch: Branch) -> Self {
        let e = cfg.embed_dim;
        let name = format!("recon.{}", branch.name());
        let grid = cfg.input_size / cfg.patch;
        let lin = |store: &mut ParamStore, init: &mut Init, n: &str, a, b| Linear::new(store, init, &format!("{name}.{n}"), a, b);
        let embed = lin(store, init, "embed", cfg.deepest_channels(), e);
        let pos = store.add(format!("{name}.pos"), ParamKind::Token, init.normal(&[grid * grid, e], 0.02));
        let token = store.add(format!("{name}.token"), ParamKind::Token, init.normal(&[e], 0.02));
        let blocks = (0..cfg.decoder_depth)
            .map(|d| Block {
                ln1: LayerNorm::new(store, &format!("{name}.block{d}.ln1"), e),
                q: lin(store, init, &format!("block{d}.q"), e, e),
                k: lin(store, init, &format!("block{d}.k"), e, e),
                v: lin(store, init, &format!("block{d}.v"), e, e),
                o: lin(store, init, &format!("block{d}.o"), e, e),
                ln2: LayerNorm::new(store, &format!("{name}.block{d}.ln2"), e),
                fc1: lin(store, init, &format!("block{d}.fc1"), e, e * cfg.mlp_ratio),
                fc2: lin(store, init, &format!("block{d}.fc2"), e * cfg.mlp_ratio, e),
            })
            .collect();
        let ln = LayerNorm::new(store, &format!("{name}.ln"), e);
        let head = lin(store, init, "head", e, cfg.patch * cfg.patch * 3);
        ReconDecoder {
            branch,
            embed,
            pos,
            token,
            blocks,
            ln,
            head,
            heads: cfg.heads,
            patch: cfg.patch,
            grid,
            image: cfg.input_size,
        }
    }

    fn attention<'t>(&self, cx: Ctx<'t, '_>, b: &Block, x: Var<'t>) -> Var<'t> {
        let s = x.shape();
        let (n, e) = (s[0], s[1]);
        let dh = e / self.heads;
        let split = |v: Var<'t>| v.reshape(&[n, self.heads, dh]);
        let q = split(b.q.forward(cx, x)).permute(&[1, 0, 2]);
        let k = split(b.k.forward(cx, x)).permute(&[1, 2, 0]);
        let v = split(b.v.forward(cx, x)).permute(&[1, 0, 2]);
        let att = q.matmul(k).scale(1.0 / (dh as f64).sqrt()).softmax(2);
        let out = att.matmul(v).permute(&[1, 0, 2]).reshape(&[n, e]);
        b.o.forward(cx, out)
    }

    /// Decodes the deepest-stage feature of a masked view into a `3×H×W`
    /// image. `mask` marks the hidden patches for the pixel branch.
    pub fn forward<'t>(&self, cx: Ctx<'t, '_>, x4: Var<'t>, mask: Option<&SpatialMask>) -> Var<'t> {
        let s = x4.shape();
        let c = s[0];
        let factor = self.grid / s[1];
        let n = self.grid * self.grid;
        let up = if factor > 1 { x4.upsample_nearest(factor) } else { x4 };
        let mut tokens = self.embed.forward(cx, up.reshape(&[c, n]).t()) + cx.p(self.pos);
        let token = cx.p(self.token);
        tokens = match (self.branch, mask) {
            (Branch::Pixel, Some(m)) => {
                assert_eq!(m.patch_keep.len(), n, "mask grid does not match the patch grid");
                let keep: Vec<f64> = m.patch_keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
                let hide = Tensor::new([n, 1], keep.iter().map(|k| 1.0 - k).collect()).unwrap();
                tokens.mul_const(Tensor::new([n, 1], keep).unwrap()) + token.mul_const(hide)
            }
            (Branch::Pixel, None) => tokens,
            _ => tokens + token,
        };
        let mut x = tokens;
        for b in &self.blocks {
            x = x + self.attention(cx, b, b.ln1.forward(cx, x));
            let h = b.fc1.forward(cx, b.ln2.forward(cx, x)).relu();
            x = x + b.fc2.forward(cx, h);
        }
        let p = self.patch;
        let g = self.grid;
        let out = self.head.forward(cx, self.ln.forward(cx, x));
        out.reshape(&[g, g, p, p, 3])
            .permute(&[4, 0, 2, 1, 3])
            .reshape(&[3, self.image, self.image])
    }
}
