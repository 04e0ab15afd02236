//! Finite-difference check of the full training loss.

use deal_core::model::{build_density_target, compute_losses, Deal, DENSITY_STRIDE};
use deal_core::scene::{PointPrompt, Scene};
use deal_tensor::{check_gradients_detailed, Bound, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

/// Full training loss of one prompt set on `scene`, with every parameter
/// taken from `vars`.
fn full_loss<'t>(
    model: &Deal<f64>,
    vars: &[Var<'t, f64>],
    scene: &Scene,
    prompts: &[PointPrompt],
) -> deal_tensor::Result<Var<'t, f64>> {
    let tape = vars[0].tape();
    let p = Bound::from_vars(vars.to_vec());
    let fail = |e: deal_core::DealError| deal_tensor::TensorError::Argument {
        op: "full_loss",
        detail: e.to_string(),
    };
    let features = model.encode(&p, tape.constant(&scene.image)).map_err(fail)?;
    let out = model.head(&p, &features, prompts, 0).map_err(fail)?;
    let prompted: Vec<u32> = {
        let mut c: Vec<u32> = prompts.iter().map(|q| q.category).collect();
        c.dedup();
        c
    };
    let gts: Vec<_> = scene.annotations_of(&prompted).copied().collect();
    let (h, w) = (scene.height() as f64, scene.width() as f64);
    let norm: Vec<_> = gts.iter().map(|a| a.bbox.to_norm(w, h)).collect();
    let dm_gt = build_density_target(&gts, &prompted, DENSITY_STRIDE, features.enhanced.grid());
    let losses = compute_losses(&out.decoded, &norm, &out.density, &dm_gt, &model.config).map_err(fail)?;
    Ok(losses.total)
}

/// Tiny model whose box head starts slightly off the reference box, so
/// predictions do not coincide with integer-aligned ground truth where the
/// L1 and GIoU terms have kinks.
pub fn off_kink_model(seed: u64) -> Deal<f64> {
    let mut model = Deal::<f64>::new(super::tiny_model(), seed).unwrap();
    let id = model.params.id("head.box.out.bias").unwrap();
    *model.params.get_mut(id) = Tensor::new([4], vec![0.013, -0.021, 0.017, -0.011]).unwrap().with_grad();
    model
}

/// Outcome of one full-loss check.
pub enum FullLossCheck {
    /// Worst relative error over all parameters.
    Smooth(f64),
    /// Some stencil straddles a kink or a discrete switch (query selection,
    /// query count, matching, max over prompts), so the numeric reference is
    /// not usable for this configuration.
    NonSmooth(usize),
}

/// Checks a random scene with one to three prompts on distinct objects of
/// one category.
pub fn check_full_loss(seed: u64) -> FullLossCheck {
    let model = off_kink_model(seed);
    let scene = super::scene(32, (2, 4), seed);
    let mut r = super::rng(seed);
    let a = scene.annotations[r.random_range(0..scene.annotations.len())];
    let mut pool: Vec<_> = scene.annotations.iter().filter(|b| b.category == a.category).collect();
    pool.shuffle(&mut r);
    // prompts on one object would tie under the max over prompts
    let n = r.random_range(1..=pool.len().min(3));
    let prompts: Vec<PointPrompt> = pool[..n]
        .iter()
        .map(|b| {
            let (x, y) = (b.bbox.x + r.random_range(0.2..0.8) * b.bbox.w, b.bbox.y + r.random_range(0.2..0.8) * b.bbox.h);
            PointPrompt { x, y, category: a.category }
        })
        .collect();
    let params: Vec<Tensor<f64>> = model.params.iter().map(|(_, _, t)| t.clone()).collect();
    let r = check_gradients_detailed(|_, v| full_loss(&model, v, &scene, &prompts), &params, H, TOL).unwrap();
    if !r.non_smooth.is_empty() {
        return FullLossCheck::NonSmooth(r.non_smooth.len());
    }
    FullLossCheck::Smooth(r.worst.into_iter().fold(0.0, f64::max))
}

/// Worst error over the first `count` configurations that stay on one side
/// smooth at every probed coordinate, and the number of seeds skipped.
pub fn full_loss_suite(count: usize) -> (f64, usize) {
    let (mut worst, mut skipped, mut done) = (0.0f64, 0, 0);
    let mut seed = 0;
    while done < count {
        match check_full_loss(seed) {
            FullLossCheck::Smooth(e) => {
                worst = worst.max(e);
                done += 1;
            }
            FullLossCheck::NonSmooth(_) => skipped += 1,
        }
        seed += 1;
    }
    (worst, skipped)
}
