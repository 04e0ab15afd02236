//! Density targets, matching costs and the training objective.

use deal_tensor::{Scalar, Tensor, Var};

use super::matcher::hungarian_match;
use super::{Decoded, DensityMap, ModelConfig};
use crate::error::Result;
use crate::geometry::{giou, NormBox};
use crate::scene::{Annotation, CategoryId};

const EPS: f64 = 1e-7;

/// Centre-cell indicator map (`1 x 1 x h x w`) of the prompted categories'
/// objects; collisions clamp to 1.
pub fn build_density_target(gts: &[Annotation], prompted: &[CategoryId], stride: usize, grid: (usize, usize)) -> Tensor<f64> {
    let (h, w) = grid;
    let mut data = vec![0.0; h * w];
    for a in gts.iter().filter(|a| prompted.contains(&a.category)) {
        let (cx, cy) = a.bbox.center();
        let gx = ((cx / stride as f64).floor().max(0.0) as usize).min(w - 1);
        let gy = ((cy / stride as f64).floor().max(0.0) as usize).min(h - 1);
        data[gy * w + gx] = 1.0;
    }
    Tensor::new([1, 1, h, w], data).expect("grid is non-empty")
}

fn focal_cost(p: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    let pos = alpha * (1.0 - p).powf(gamma) * -p.ln();
    let neg = (1.0 - alpha) * p.powf(gamma) * -(1.0 - p).ln();
    pos - neg
}

/// Row-major `n_pred x n_gt` matching cost.
pub fn matching_cost(scores: &[f64], boxes: &[NormBox], gts: &[NormBox], cfg: &ModelConfig) -> Vec<f64> {
    let mut cost = Vec::with_capacity(scores.len() * gts.len());
    for (s, b) in scores.iter().zip(boxes) {
        let cls = focal_cost(*s, cfg.focal_alpha, cfg.focal_gamma);
        for g in gts {
            let l1: f64 = b.as_array().iter().zip(g.as_array()).map(|(x, y)| (x - y).abs()).sum();
            cost.push(cfg.cost_class * cls + cfg.cost_l1 * l1 - cfg.cost_giou * giou(b, g));
        }
    }
    cost
}

/// Loss components as plain numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub cls: f64,
    pub reg: f64,
    pub density: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Losses<'t, S> {
    pub total: Var<'t, S>,
    pub values: LossValues,
    /// `(query, gt)` pairs.
    pub matches: Vec<(usize, usize)>,
}

fn column<'t, S: Scalar>(x: Var<'t, S>, i: usize) -> Result<Var<'t, S>> {
    Ok(x.narrow(1, i, 1)?)
}

/// `1 - GIoU` per row of two `m x 4` centre-size box tensors, as `m x 1`.
pub fn giou_loss<'t, S: Scalar>(pred: Var<'t, S>, target: Var<'t, S>) -> Result<Var<'t, S>> {
    let half = S::lit(0.5);
    let corners = |b: Var<'t, S>| -> Result<[Var<'t, S>; 6]> {
        let (cx, cy, w, h) = (column(b, 0)?, column(b, 1)?, column(b, 2)?, column(b, 3)?);
        Ok([
            cx.sub(w.scale(half))?,
            cy.sub(h.scale(half))?,
            cx.add(w.scale(half))?,
            cy.add(h.scale(half))?,
            w,
            h,
        ])
    };
    let [px0, py0, px1, py1, pw, ph] = corners(pred)?;
    let [gx0, gy0, gx1, gy1, gw, gh] = corners(target)?;
    let iw = px1.minimum(gx1)?.sub(px0.maximum(gx0)?)?.relu();
    let ih = py1.minimum(gy1)?.sub(py0.maximum(gy0)?)?.relu();
    let inter = iw.mul(ih)?;
    let union = pw.mul(ph)?.add(gw.mul(gh)?)?.sub(inter)?;
    let enclosing = px1.maximum(gx1)?.sub(px0.minimum(gx0)?)?.mul(py1.maximum(gy1)?.sub(py0.minimum(gy0)?)?)?;
    let iou = inter.div(union)?;
    let g = iou.sub(enclosing.sub(union)?.div(enclosing)?)?;
    Ok(g.neg().add_scalar(S::one()))
}

/// `L = L_cls + L_reg + lambda * L_density` with Hungarian matching of the
/// decoded queries against `gts` (normalised boxes of the prompted objects).
pub fn compute_losses<'t, S: Scalar>(
    decoded: &Decoded<'t, S>,
    gts: &[NormBox],
    dm: &DensityMap<'t, S>,
    dm_gt: &Tensor<f64>,
    cfg: &ModelConfig,
) -> Result<Losses<'t, S>> {
    let tape = decoded.scores.tape();
    let n = decoded.len();
    let dets = decoded.detections();
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let boxes: Vec<NormBox> = dets.iter().map(|d| d.bbox).collect();
    let cost = matching_cost(&scores, &boxes, gts, cfg);
    let matches = hungarian_match(&cost, n, gts.len())?;

    let mut target = vec![S::zero(); n];
    for &(q, _) in &matches {
        target[q] = S::one();
    }
    let cls = decoded.scores.focal_loss(&Tensor::new([n, 1], target)?, cfg.focal_alpha, cfg.focal_gamma)?;

    let reg = if matches.is_empty() {
        tape.constant(&Tensor::scalar(S::zero()))
    } else {
        let m = matches.len();
        let rows: Vec<usize> = matches.iter().map(|&(q, _)| q).collect();
        let pred = decoded.boxes.index_select(&rows)?;
        let gt_data: Vec<S> = matches.iter().flat_map(|&(_, g)| gts[g].as_array()).map(S::lit).collect();
        let gt = tape.constant_from([m, 4], gt_data)?;
        let inv = S::lit(1.0 / m as f64);
        let l1 = pred.sub(gt)?.abs().sum().scale(inv);
        let gl = giou_loss(pred, gt)?.sum().scale(inv);
        l1.scale(S::lit(cfg.loss_l1)).add(gl.scale(S::lit(cfg.loss_giou)))?
    };

    let density = dm.grid.focal_loss(&dm_gt.cast::<S>(), cfg.focal_alpha, cfg.focal_gamma)?;
    let total = cls.add(reg)?.add(density.scale(S::lit(cfg.lambda)))?;
    let values = LossValues {
        cls: cls.item().as_f64(),
        reg: reg.item().as_f64(),
        density: density.item().as_f64(),
        total: total.item().as_f64(),
    };
    Ok(Losses { total, values, matches })
}
