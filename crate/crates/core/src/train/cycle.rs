use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use deal_tensor::{Bound, Scalar, Var};

use super::select::{select_worst, SelectionPolicy};
use crate::error::{DealError, Result};
use crate::geometry::{NormBox, PixelBox};
use crate::model::{build_density_target, compute_losses, Deal, Detection, Features, LossValues, DENSITY_STRIDE};
use crate::scene::{Annotation, CategoryId, PointPrompt, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleKind {
    Intra(CategoryId),
    Inter,
}

impl std::fmt::Display for CycleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CycleKind::Intra(c) => write!(f, "intra:{c}"),
            CycleKind::Inter => write!(f, "inter"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub n_prompts: usize,
    pub n_query: usize,
    pub losses: LossValues,
    /// Ground-truth index chosen for the next prompt (none on the last step).
    pub selected: Option<usize>,
    pub detections: Vec<Detection>,
}

/// Prompt set and per-step history of one cycle.
#[derive(Clone, Debug)]
pub struct CycleState<'t, S> {
    pub kind: CycleKind,
    pub prompts: Vec<PointPrompt>,
    pub step: usize,
    pub history: Vec<StepRecord>,
    /// Prompt-set size before the first step.
    pub initial_prompts: usize,
    /// Mean loss over all steps.
    pub loss: Var<'t, S>,
}

/// Uniform point strictly inside `bbox`.
pub fn sample_inside<R: Rng + ?Sized>(bbox: &PixelBox, rng: &mut R) -> (f64, f64) {
    let pick = |lo: f64, extent: f64, rng: &mut R| {
        let margin = 1e-6 * extent;
        rng.random_range(lo + margin..lo + extent - margin)
    };
    let x = pick(bbox.x, bbox.w, rng);
    let y = pick(bbox.y, bbox.h, rng);
    (x, y)
}

fn initial_prompt<R: Rng + ?Sized>(scene: &Scene, c: CategoryId, rng: &mut R) -> Result<PointPrompt> {
    let pool: Vec<&Annotation> = scene.annotations.iter().filter(|a| a.category == c).collect();
    let a = pool
        .choose(rng)
        .ok_or_else(|| DealError::Selection(format!("scene `{}` has no object of category {c}", scene.id)))?;
    let (x, y) = sample_inside(&a.bbox, rng);
    Ok(PointPrompt { x, y, category: c })
}

/// One intra- or inter-class cycle: `K + 1` forward passes, each adding the
/// worst-covered object as a new prompt for the next pass.
#[allow(clippy::too_many_arguments)]
pub fn run_cycle<'t, S: Scalar>(
    model: &Deal<S>,
    p: &Bound<'t, S>,
    features: &Features<'t, S>,
    scene: &Scene,
    kind: CycleKind,
    k_steps: usize,
    seed: u64,
    policy: SelectionPolicy,
    cover_targets: bool,
) -> Result<CycleState<'t, S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prompts = match kind {
        CycleKind::Intra(c) => vec![initial_prompt(scene, c, &mut rng)?],
        CycleKind::Inter => {
            let cats = scene.categories_present();
            if cats.is_empty() {
                return Err(DealError::Selection(format!("scene `{}` has no objects", scene.id)));
            }
            cats.iter().map(|&c| initial_prompt(scene, c, &mut rng)).collect::<Result<_>>()?
        }
    };
    let prompted: Vec<CategoryId> = match kind {
        CycleKind::Intra(c) => vec![c],
        CycleKind::Inter => scene.categories_present(),
    };
    let gts: Vec<Annotation> = scene.annotations_of(&prompted).copied().collect();
    let (h, w) = features.image_size;
    let norm_gts: Vec<NormBox> = gts.iter().map(|a| a.bbox.to_norm(w as f64, h as f64)).collect();
    let grid = features.enhanced.grid();
    let dm_gt = build_density_target(&gts, &prompted, DENSITY_STRIDE, grid);
    let initial_prompts = prompts.len();

    let mut history = Vec::with_capacity(k_steps + 1);
    let mut sum: Option<Var<'t, S>> = None;
    for k in 0..=k_steps {
        let floor = if cover_targets { gts.len() } else { 0 };
        let out = model.head(p, features, &prompts, floor)?;
        let losses = compute_losses(&out.decoded, &norm_gts, &out.density, &dm_gt, &model.config)?;
        let detections = out.decoded.detections();
        sum = Some(match sum {
            Some(s) => s.add(losses.total)?,
            None => losses.total,
        });
        let selected = if k < k_steps {
            let sel = select_worst(&detections, &gts, (h, w), policy)?;
            let category = match kind {
                CycleKind::Intra(c) => c,
                CycleKind::Inter => sel.category,
            };
            prompts.push(PointPrompt {
                x: sel.point.0,
                y: sel.point.1,
                category,
            });
            sel.gt_index
        } else {
            None
        };
        history.push(StepRecord {
            k,
            n_prompts: initial_prompts + k,
            n_query: out.n_query,
            losses: losses.values,
            selected,
            detections,
        });
    }
    let loss = sum.expect("at least one step").scale(S::lit(1.0 / (k_steps + 1) as f64));
    Ok(CycleState {
        kind,
        prompts,
        step: k_steps,
        history,
        initial_prompts,
        loss,
    })
}
