//! Central finite-difference checks of every differentiable loss path on
//! small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::gradcheck::grad_check;
use crate::hrr::{hrr_total_loss, pixel_loss, HrrWeights, Reconstructions};
use crate::model::structure_loss_var;
use crate::nn::{Ctx, Init};
use crate::params::ParamStore;
use crate::pcc::{metric_consistency, prototype_losses, variational_encode, variational_fuse, kl_loss_var, PccHeads};
use crate::spectral::{default_radius, dft2, focal_frequency_loss_var, FreqRegion};
use crate::tag::{tag_guide, Projection};
use crate::tensor::Tensor;

pub const GRADIENT_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCase {
    pub name: &'static str,
    pub max_rel_error: f64,
}

impl GradientCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADIENT_TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn binary(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::from_fn([h, w], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
    // both classes present
    t.data_mut()[0] = 1.0;
    t.data_mut()[1] = 0.0;
    t
}

/// Runs the battery; every case is seeded from `seed`.
pub fn gradient_battery(seed: u64) -> Vec<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (3, 8, 8);
    let image = uniform(&mut rng, &[c, h, w], 0.0, 1.0);
    let target_spec = dft2(&image).unwrap().to_tensor().scale(1.0 / 8.0);
    let low = FreqRegion::Low.grid(h, w, default_radius(h, w));
    let recon = uniform(&mut rng, &[c, h, w], 0.0, 1.0);
    let stacked = uniform(&mut rng, &[3 * c, h, w], 0.0, 1.0);
    let mut cases = Vec::new();
    let mut case = |name, err| cases.push(GradientCase { name, max_rel_error: err });

    case(
        "pixel",
        grad_check(|x| pixel_loss(x, x.tape().constant(image.clone())), &recon, EPS),
    );
    case(
        "frequency",
        grad_check(
            |x| {
                let gt = x.tape().constant(target_spec.clone());
                focal_frequency_loss_var(x.dft2().scale(1.0 / 8.0), gt, 1.0, Some(&low))
            },
            &recon,
            EPS,
        ),
    );
    case(
        "hrr_total",
        grad_check(
            |x| {
                let r = Reconstructions {
                    spatial: x.slice(0, 0, c),
                    low: x.slice(0, c, 2 * c),
                    high: x.slice(0, 2 * c, 3 * c),
                };
                hrr_total_loss(r, &image, None, &HrrWeights::default()).unwrap().0
            },
            &stacked,
            EPS,
        ),
    );

    let d = 4;
    let latents = uniform(&mut rng, &[2, 2, d], -1.0, 1.0);
    case(
        "kl",
        grad_check(
            |x| {
                let mu = x.slice(0, 0, 1);
                let sigma = x.slice(0, 1, 2).softplus().add_scalar(0.1);
                kl_loss_var(&[(mu, sigma)])
            },
            &latents,
            EPS,
        ),
    );

    let (fh, fw) = (4, 4);
    let feat = uniform(&mut rng, &[d, fh, fw], -1.0, 1.0);
    let protos = uniform(&mut rng, &[2, d], -1.0, 1.0);
    let target = binary(&mut rng, fh, fw);
    let phi = {
        let raw = uniform(&mut rng, &[fh, fw], 0.1, 1.0);
        let s = raw.sum();
        raw.scale(1.0 / s)
    };
    case(
        "prototype",
        grad_check(
            |x| {
                let p = x.tape().constant(protos.clone());
                let (_, probs) = metric_consistency(x, p, 0.1);
                prototype_losses(probs, &target, probs, &target, &phi).0
            },
            &feat,
            EPS,
        ),
    );
    case(
        "prototype_rec",
        grad_check(
            |x| {
                let p = x.tape().constant(protos.clone());
                let (_, probs) = metric_consistency(x, p, 0.1);
                prototype_losses(probs, &target, probs, &target, &phi).1
            },
            &feat,
            EPS,
        ),
    );
    case(
        "metric_consistency",
        grad_check(
            |x| {
                let f = x.tape().constant(feat.clone());
                let (sim, _) = metric_consistency(f, x, 0.1);
                sim.square().sum()
            },
            &protos,
            EPS,
        ),
    );

    let gt = binary(&mut rng, h, w);
    let logits = uniform(&mut rng, &[1, h, w], -2.0, 2.0);
    case("structure", grad_check(|x| structure_loss_var(x.sigmoid(), &gt), &logits, EPS));

    let (tc, th, tw) = (4, 3, 3);
    let x_det = uniform(&mut rng, &[tc, th, tw], -1.0, 1.0);
    let x_rec = uniform(&mut rng, &[tc, th, tw], -1.0, 1.0);
    let probe = uniform(&mut rng, &[tc, th, tw], -1.0, 1.0);
    let proj = Projection::uniform(tc, 0.7);
    case(
        "tag",
        grad_check(
            |x| {
                let t = x.tape();
                let out = tag_guide(x, t.constant(x_rec.clone()), 1.0, &proj.vars(t));
                out.mul_const(probe.clone()).sum()
            },
            &x_det,
            EPS,
        ),
    );

    let mut store = ParamStore::new();
    let heads = PccHeads::new(&mut store, &mut Init::new(seed), d, 6, false);
    let eta = uniform(&mut rng, &[2, d], -1.0, 1.0);
    let protos_rec = uniform(&mut rng, &[2, d], -1.0, 1.0);
    let weights = uniform(&mut rng, &[2, d], -1.0, 1.0);
    case(
        "variational_fusion",
        grad_check(
            |x: Var<'_>| {
                let cx = Ctx::new(x.tape(), &store);
                let lat_o = variational_encode(cx, &heads.variational, x, &eta);
                let lat_r = variational_encode(cx, &heads.variational, cx.tape.constant(protos_rec.clone()), &eta);
                let fused = variational_fuse(cx, &heads.weight, lat_o.z, lat_r.z);
                fused.fused.mul_const(weights.clone()).sum()
                    + kl_loss_var(&[(lat_o.mu, lat_o.sigma), (lat_r.mu, lat_r.sigma)])
            },
            &protos,
            EPS,
        ),
    );
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes() {
        for case in gradient_battery(7) {
            assert!(case.passed(), "{}: {:.3e}", case.name, case.max_rel_error);
        }
    }
}
