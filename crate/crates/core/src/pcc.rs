//! Prototype consistency calibration: edge-weighted entropy confidence,
//! class prototypes, variational fusion and metric-consistency losses.
//!
//! Class index 0 is background, 1 is foreground.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::Var;
use crate::error::{HclError, Result};
use crate::nn::{Ctx, Init, Linear, Mlp};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;
pub const COSINE_EPS: f64 = 1e-8;
pub const SIGMA_FLOOR: f64 = 1e-6;

fn hw_of(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(HclError::shape(op, format!("expected H×W, got {:?}", t.shape()))),
    }
}

/// Morphological gradient of the map binarized at 0.5: 1 where the 3×3
/// dilation differs from the 3×3 erosion. Out-of-bounds neighbours are
/// ignored.
pub fn edge_map(pred: &Tensor) -> Result<Tensor> {
    let (h, w) = hw_of(pred, "edge_map")?;
    let bin: Vec<bool> = pred.data().iter().map(|&p| p >= 0.5).collect();
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let (mut any, mut all) = (false, true);
            for di in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                for dj in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                    let b = bin[di * w + dj];
                    any |= b;
                    all &= b;
                }
            }
            if any != all {
                out[i * w + j] = 1.0;
            }
        }
    }
    Tensor::new([h, w], out)
}

/// Per-pixel weighted binary entropy `−(1+αE)(p ln p + (1−p) ln(1−p))`.
pub fn weighted_entropy(prob: &Tensor, edge: &Tensor, alpha: f64) -> Result<Tensor> {
    let (h, w) = hw_of(prob, "weighted_entropy")?;
    if edge.numel() != h * w {
        return Err(HclError::shape("weighted_entropy", format!("edge {:?}", edge.shape())));
    }
    let data = prob
        .data()
        .iter()
        .zip(edge.data())
        .map(|(&p, &e)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(1.0 + alpha * e) * (p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .collect();
    Tensor::new([h, w], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    pub phi: Tensor,
    pub entropy: Tensor,
    pub edge: Tensor,
    pub alpha: f64,
}

/// `Φ = (1/HW)(1 − H/ΣH)`, so that `ΣΦ = (HW−1)/HW`.
pub fn entropy_confidence(prob: &Tensor, edge: &Tensor, alpha: f64) -> Result<ConfidenceMap> {
    let entropy = weighted_entropy(prob, edge, alpha)?;
    let n = entropy.numel() as f64;
    let total = entropy.sum();
    let phi = entropy.map(|e| (1.0 - e / total) / n);
    Ok(ConfidenceMap {
        phi,
        entropy,
        edge: edge.clone(),
        alpha,
    })
}

/// Foreground indicator of a probability map.
pub fn binarize(prob: &Tensor) -> Vec<bool> {
    prob.data().iter().map(|&p| p >= 0.5).collect()
}

/// Per-class `Σ feat·w·1[label=m] / denom_m` where the denominator is the
/// class pixel count, or the class weight mass when `normalize_by_weight`.
fn pooled(
    feat: &Tensor,
    labels: &[bool],
    weights: Option<&[f64]>,
    normalize_by_weight: bool,
) -> Result<Vec<Result<Vec<f64>>>> {
    let [d, h, w] = *feat.shape() else {
        return Err(HclError::shape("prototype", format!("{:?}", feat.shape())));
    };
    let hw = h * w;
    if labels.len() != hw || weights.is_some_and(|w| w.len() != hw) {
        return Err(HclError::shape("prototype", format!("labels for {h}×{w}")));
    }
    let mut out = Vec::with_capacity(2);
    for class in 0..2 {
        let member = |k: usize| labels[k] == (class == 1);
        let count = (0..hw).filter(|&k| member(k)).count();
        if count == 0 {
            out.push(Err(HclError::DegenerateRegion { class }));
            continue;
        }
        let denom = if normalize_by_weight {
            let wsum: f64 = (0..hw).filter(|&k| member(k)).map(|k| weights.map_or(1.0, |w| w[k])).sum();
            if wsum <= 0.0 {
                out.push(Err(HclError::DegenerateRegion { class }));
                continue;
            }
            wsum
        } else {
            count as f64
        };
        let mut proto = vec![0.0; d];
        for (c, slot) in proto.iter_mut().enumerate() {
            let plane = &feat.data()[c * hw..(c + 1) * hw];
            let mut s = 0.0;
            for k in 0..hw {
                if member(k) {
                    s += plane[k] * weights.map_or(1.0, |w| w[k]);
                }
            }
            *slot = s / denom;
        }
        out.push(Ok(proto));
    }
    Ok(out)
}

/// Masked average pooling per class (background, foreground).
pub fn map_prototype(feat: &Tensor, labels: &[bool]) -> Result<[Vec<f64>; 2]> {
    let mut v = pooled(feat, labels, None, false)?;
    let fg = v.pop().unwrap()?;
    let bg = v.pop().unwrap()?;
    Ok([bg, fg])
}

/// Confidence-weighted pooling whose denominator is the class pixel count,
/// or the class confidence mass when `normalize_by_weight`.
pub fn weighted_prototype(
    feat: &Tensor,
    labels: &[bool],
    conf: &ConfidenceMap,
    normalize_by_weight: bool,
) -> Result<[Vec<f64>; 2]> {
    let mut v = pooled(feat, labels, Some(conf.phi.data()), normalize_by_weight)?;
    let fg = v.pop().unwrap()?;
    let bg = v.pop().unwrap()?;
    Ok([bg, fg])
}

/// Differentiable prototypes as a `2×D` var (row 0 background). Empty
/// classes fall back to the weighted global feature mean; the returned flags
/// report which classes did.
pub fn prototypes_var<'t>(
    feat: Var<'t>,
    labels: &[bool],
    weights: Option<&[f64]>,
    normalize_by_weight: bool,
) -> (Var<'t>, [bool; 2]) {
    let s = feat.shape();
    let (d, hw) = (s[0], s[1] * s[2]);
    assert_eq!(labels.len(), hw, "labels must cover every pixel");
    let weight = |k: usize| weights.map_or(1.0, |w| w[k]);
    let mut ind = vec![0.0; hw * 2];
    let mut denom = [0.0; 2];
    let mut degenerate = [false; 2];
    for class in 0..2 {
        let members: Vec<usize> = (0..hw).filter(|&k| labels[k] == (class == 1)).collect();
        let (set, count): (Vec<usize>, usize) = if members.is_empty() {
            degenerate[class] = true;
            ((0..hw).collect(), hw)
        } else {
            let n = members.len();
            (members, n)
        };
        for &k in &set {
            ind[k * 2 + class] = weight(k);
        }
        denom[class] = if normalize_by_weight {
            set.iter().map(|&k| weight(k)).sum::<f64>().max(f64::MIN_POSITIVE)
        } else {
            count as f64
        };
    }
    for k in 0..hw {
        for class in 0..2 {
            ind[k * 2 + class] /= denom[class];
        }
    }
    let tape = feat.tape();
    let pooled = feat
        .reshape(&[d, hw])
        .matmul(tape.constant(Tensor::new([hw, 2], ind).expect("indicator shape")));
    (pooled.t(), degenerate)
}

/// Mean and deviation heads shared by both views.
#[derive(Clone, Copy, Debug)]
pub struct VariationalHeads {
    pub mu: Mlp,
    pub sigma: Mlp,
}

/// Per-branch weight head producing `(μ_a, raw σ_a)`, plus the temperature.
#[derive(Clone, Copy, Debug)]
pub struct WeightHead {
    pub mlp: Mlp,
    pub gamma: ParamId,
}

/// Point-estimate branch projections (ablation baseline).
#[derive(Clone, Copy, Debug)]
pub struct PointHeads {
    pub orig: Linear,
    pub rec: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct PccHeads {
    pub variational: VariationalHeads,
    pub weight: WeightHead,
    pub point: Option<PointHeads>,
}

pub const WEIGHT_HIDDEN: usize = 16;

impl PccHeads {
    pub fn new(store: &mut ParamStore, init: &mut Init, dim: usize, hidden: usize, point_estimate: bool) -> Self {
        let variational = VariationalHeads {
            mu: Mlp::new(store, init, "pcc.mu", dim, hidden, dim),
            sigma: Mlp::new(store, init, "pcc.sigma", dim, hidden, dim),
        };
        let weight = WeightHead {
            mlp: Mlp::new(store, init, "pcc.weight", dim, WEIGHT_HIDDEN, 2),
            gamma: store.add("pcc.gamma", ParamKind::Scalar, Tensor::scalar(1.0)),
        };
        let point = point_estimate.then(|| PointHeads {
            orig: Linear::new(store, init, "pcc.point.orig", dim, 1),
            rec: Linear::new(store, init, "pcc.point.rec", dim, 1),
        });
        PccHeads {
            variational,
            weight,
            point,
        }
    }
}

/// Latent statistics of one view's prototypes, each `2×D`.
#[derive(Clone, Copy, Debug)]
pub struct Latent<'t> {
    pub mu: Var<'t>,
    pub sigma: Var<'t>,
    pub z: Var<'t>,
}

/// Standard-normal noise for the reparameterization, `rows×dim`.
pub fn gaussian_noise(rows: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([rows, dim], |_| StandardNormal.sample(&mut rng))
}

/// `μ = M_μ(P)`, `σ = softplus(M_σ(P)) + 1e−6`, `z = μ + η·σ`.
pub fn variational_encode<'t>(cx: Ctx<'t, '_>, heads: &VariationalHeads, protos: Var<'t>, eta: &Tensor) -> Latent<'t> {
    let mu = heads.mu.forward(cx, protos);
    let sigma = heads.sigma.forward(cx, protos).softplus().add_scalar(SIGMA_FLOOR);
    let z = mu + sigma.mul_const(eta.clone());
    Latent { mu, sigma, z }
}

/// Fusion outcome for both classes; `a` is `2×2` (class × branch o, r).
#[derive(Clone, Copy, Debug)]
pub struct Fused<'t> {
    pub fused: Var<'t>,
    pub a: Var<'t>,
    pub mu_a: Var<'t>,
    pub sigma_a: Var<'t>,
}

/// `a^i = softmax_i(−γ (σ_a^i)²)` with `(μ_a, σ_a)` from the shared weight
/// head on each `z`, and `P_fusion = a^o z^o + a^r z^r`.
pub fn variational_fuse<'t>(cx: Ctx<'t, '_>, head: &WeightHead, z_o: Var<'t>, z_r: Var<'t>) -> Fused<'t> {
    let stats = |z: Var<'t>| {
        let out = head.mlp.forward(cx, z);
        (out.slice(1, 0, 1), out.slice(1, 1, 2).softplus().add_scalar(SIGMA_FLOOR))
    };
    let (mu_o, sig_o) = stats(z_o);
    let (mu_r, sig_r) = stats(z_r);
    let sigma_a = Var::concat(&[sig_o, sig_r], 1);
    let mu_a = Var::concat(&[mu_o, mu_r], 1);
    let gamma = cx.p(head.gamma).clamp(1e-6, f64::INFINITY);
    let a = (sigma_a.square() * gamma).neg().softmax(1);
    let fused = a.slice(1, 0, 1) * z_o + a.slice(1, 1, 2) * z_r;
    Fused {
        fused,
        a,
        mu_a,
        sigma_a,
    }
}

/// Eager Eq.-style fusion weights from per-branch `σ_a²`.
pub fn fusion_weights(sigma_a_sq: [f64; 2], gamma: f64) -> [f64; 2] {
    let l = [-gamma * sigma_a_sq[0], -gamma * sigma_a_sq[1]];
    let m = l[0].max(l[1]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp()];
    [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
}

/// Softmax over the two branch logits `W^i z^i + b^i`.
pub fn point_estimate_fuse<'t>(cx: Ctx<'t, '_>, heads: &PointHeads, z_o: Var<'t>, z_r: Var<'t>) -> Fused<'t> {
    let logits = Var::concat(&[heads.orig.forward(cx, z_o), heads.rec.forward(cx, z_r)], 1);
    let a = logits.softmax(1);
    let fused = a.slice(1, 0, 1) * z_o + a.slice(1, 1, 2) * z_r;
    let zeros = cx.tape.constant(Tensor::zeros(a.shape()));
    Fused {
        fused,
        a,
        mu_a: logits,
        sigma_a: zeros,
    }
}

/// `Σ ½(μ² + σ² − ln σ² − 1)` over every given latent.
pub fn kl_loss_var<'t>(latents: &[(Var<'t>, Var<'t>)]) -> Var<'t> {
    let terms: Vec<Var<'t>> = latents
        .iter()
        .map(|&(mu, sigma)| {
            let s2 = sigma.square();
            (mu.square() + s2 - s2.log()).add_scalar(-1.0).sum().scale(0.5)
        })
        .collect();
    terms.into_iter().reduce(|a, b| a + b).expect("at least one latent")
}

pub fn kl_loss(latents: &[(&[f64], &[f64])]) -> Result<f64> {
    let mut total = 0.0;
    for (mu, sigma) in latents {
        if mu.len() != sigma.len() {
            return Err(HclError::shape("kl_loss", format!("{} vs {}", mu.len(), sigma.len())));
        }
        for (&m, &s) in mu.iter().zip(sigma.iter()) {
            if s.is_nan() || s <= 0.0 {
                return Err(HclError::contract(format!("sigma must be > 0, got {s}")));
            }
            total += 0.5 * (m * m + s * s - (s * s).ln() - 1.0);
        }
    }
    Ok(total)
}

/// Cosine similarity of each pixel feature to both class prototypes and the
/// resulting class probabilities `softmax(S/τ)`, each `2×H×W`.
pub fn metric_consistency<'t>(feat: Var<'t>, protos: Var<'t>, tau: f64) -> (Var<'t>, Var<'t>) {
    let s = feat.shape();
    let (d, h, w) = (s[0], s[1], s[2]);
    assert_eq!(protos.shape(), [2, d], "prototypes must be 2×D");
    let f = feat.reshape(&[d, h * w]);
    let dots = protos.matmul(f);
    let f_norm = f.square().sum_axis(0, true).add_scalar(1e-16).sqrt();
    let p_norm = protos.square().sum_axis(1, true).add_scalar(1e-16).sqrt();
    let sim = dots / (p_norm * f_norm).clamp(COSINE_EPS, f64::INFINITY);
    let probs = sim.scale(1.0 / tau).softmax(0);
    (sim.reshape(&[2, h, w]), probs.reshape(&[2, h, w]))
}

/// Per-pixel cross-entropy of `2×H×W` class probabilities against a soft
/// foreground target, `H×W`.
pub fn pixel_cross_entropy<'t>(probs: Var<'t>, target: &Tensor) -> Var<'t> {
    let s = probs.shape();
    let (h, w) = (s[1], s[2]);
    let t = Tensor::new([h, w], target.data().to_vec()).expect("target must be H×W");
    let p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).log();
    let bg = p.slice(0, 0, 1).reshape(&[h, w]);
    let fg = p.slice(0, 1, 2).reshape(&[h, w]);
    (fg.mul_const(t.clone()) + bg.mul_const(t.map(|v| 1.0 - v))).neg()
}

/// `(mean CE(S, O), Σ Φ·CE(S_rec, O_rec))`; targets are constants.
pub fn prototype_losses<'t>(
    probs: Var<'t>,
    target: &Tensor,
    probs_rec: Var<'t>,
    target_rec: &Tensor,
    phi: &Tensor,
) -> (Var<'t>, Var<'t>) {
    let l_pro = pixel_cross_entropy(probs, target).mean();
    let phi = Tensor::new(probs_rec.shape()[1..].to_vec(), phi.data().to_vec()).expect("Φ must be H×W");
    let l_rec = pixel_cross_entropy(probs_rec, target_rec).mul_const(phi).sum();
    (l_pro, l_rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn half_plane_edge_is_two_wide() {
        let pred = Tensor::from_fn([8, 8], |k| if k % 8 >= 4 { 0.9 } else { 0.1 });
        let e = edge_map(&pred).unwrap();
        for k in 0..64 {
            let expect = if k % 8 == 3 || k % 8 == 4 { 1.0 } else { 0.0 };
            assert_eq!(e.data()[k], expect);
        }
        assert!(edge_map(&Tensor::full([5, 5], 0.8)).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_edge_is_neighbourhood() {
        let mut pred = Tensor::zeros([5, 5]);
        pred.data_mut()[2 * 5 + 2] = 1.0;
        let e = edge_map(&pred).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let inside = (1..=3).contains(&i) && (1..=3).contains(&j);
                assert_eq!(e.data()[i * 5 + j], if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn entropy_examples() {
        let p = Tensor::full([1, 1], 0.5);
        let h0 = weighted_entropy(&p, &Tensor::zeros([1, 1]), 1.0).unwrap();
        assert!((h0.item() - 2f64.ln()).abs() < 1e-15);
        let h1 = weighted_entropy(&p, &Tensor::ones([1, 1]), 1.0).unwrap();
        assert!((h1.item() - 2.0 * 2f64.ln()).abs() < 1e-15);
        let c = entropy_confidence(
            &Tensor::new([2, 2], vec![0.1, 0.5, 0.7, 0.99]).unwrap(),
            &Tensor::zeros([2, 2]),
            1.0,
        )
        .unwrap();
        assert!((c.phi.sum() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn prototype_examples() {
        let feat = Tensor::new([2, 1, 3], vec![1.0, 3.0, 5.0, 0.0, 0.0, 7.0]).unwrap();
        let [bg, fg] = map_prototype(&feat, &[true, true, false]).unwrap();
        assert_eq!(fg, [2.0, 0.0]);
        assert_eq!(bg, [5.0, 7.0]);
        assert!(matches!(map_prototype(&feat, &[true; 3]), Err(HclError::DegenerateRegion { class: 0 })));

        let feat = Tensor::new([1, 1, 3], vec![2.0, 4.0, 9.0]).unwrap();
        let conf = ConfidenceMap {
            phi: Tensor::new([1, 3], vec![0.1, 0.1, 0.5]).unwrap(),
            entropy: Tensor::zeros([1, 3]),
            edge: Tensor::zeros([1, 3]),
            alpha: 1.0,
        };
        let [bg, fg] = weighted_prototype(&feat, &[true, true, false], &conf, false).unwrap();
        assert!((fg[0] - 0.3).abs() < 1e-15);
        assert!((bg[0] - 4.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_fusion_and_kl() {
        let [a, b] = fusion_weights([0.0, 4f64.ln()], 1.0);
        assert!((a - 0.8).abs() < 1e-15 && (b - 0.2).abs() < 1e-15);
        assert_eq!(fusion_weights([0.3, 0.3], 2.0), [0.5, 0.5]);
        assert_eq!(kl_loss(&[(&[1.0], &[1.0])]).unwrap(), 0.5);
        assert_eq!(kl_loss(&[(&[0.0, 0.0], &[1.0, 1.0])]).unwrap(), 0.0);
        assert!(kl_loss(&[(&[0.0], &[0.0])]).is_err());
    }

    #[test]
    fn cosine_extremes() {
        let tape = Tape::new();
        let protos = tape.constant(Tensor::new([2, 2], vec![0.0, 2.0, 3.0, 0.0]).unwrap());
        let feat = tape.constant(Tensor::new([2, 1, 3], vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let (sim, _) = metric_consistency(feat, protos, 0.1);
        let s = sim.value();
        assert!((s.data()[3] - 1.0).abs() < 1e-8);
        assert!(s.data()[0].abs() < 1e-12);
        assert!((s.data()[4] + 1.0).abs() < 1e-8);
        assert!(s.data()[5].abs() < 1e-12 && s.data()[2].abs() < 1e-12);
    }

    #[test]
    fn uniform_probabilities_give_ln2() {
        let tape = Tape::new();
        let probs = tape.constant(Tensor::full([2, 2, 2], 0.5));
        let target = Tensor::new([2, 2], vec![0.0, 1.0, 0.3, 1.0]).unwrap();
        let (l, r) = prototype_losses(probs, &target, probs, &target, &Tensor::zeros([2, 2]));
        assert!((l.item() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(r.item(), 0.0);
    }
}
