use serde::{Deserialize, Serialize};

use crate::error::{DealError, Result};
use crate::geometry::{iou, NormBox};
use crate::model::Detection;
use crate::scene::{Annotation, CategoryId};

/// `q = score * IoU`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchQuality {
    pub value: f64,
    pub score: f64,
    pub iou: f64,
}

fn norm_iou(a: &NormBox, b: &NormBox) -> f64 {
    iou(&a.to_pixel(1.0, 1.0), &b.to_pixel(1.0, 1.0))
}

/// Quality of `detection` against `gt`, both in normalised coordinates.
pub fn match_quality(detection: &Detection, gt: &NormBox) -> MatchQuality {
    let i = norm_iou(&detection.bbox, gt);
    let score = detection.score.clamp(0.0, 1.0);
    MatchQuality {
        value: score * i,
        score,
        iou: i,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Centre of the least-covered ground-truth object.
    #[default]
    Safe,
    /// Centre of the lowest-quality detection.
    Literal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Index into the ground-truth list (for the literal policy, the object
    /// the worst detection overlaps most, if any).
    pub gt_index: Option<usize>,
    /// Next prompt in pixels.
    pub point: (f64, f64),
    pub category: CategoryId,
    /// Per-GT coverage (safe) or per-detection quality (literal).
    pub qualities: Vec<f64>,
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Picks the next prompt from the current detections. `gts` are the
/// prompted-category objects in pixels; `image_size` is `(H, W)`.
pub fn select_worst(
    detections: &[Detection],
    gts: &[Annotation],
    image_size: (usize, usize),
    policy: SelectionPolicy,
) -> Result<Selection> {
    if gts.is_empty() {
        return Err(DealError::Selection("no ground-truth object of a prompted category".into()));
    }
    let (h, w) = (image_size.0 as f64, image_size.1 as f64);
    let norm: Vec<NormBox> = gts.iter().map(|g| g.bbox.to_norm(w, h)).collect();
    if policy == SelectionPolicy::Literal && !detections.is_empty() {
        let qualities: Vec<f64> = detections
            .iter()
            .map(|d| norm.iter().map(|g| match_quality(d, g).value).fold(0.0, f64::max))
            .collect();
        let worst = argmin(&qualities);
        let det = &detections[worst];
        let overlaps: Vec<f64> = norm.iter().map(|g| norm_iou(&det.bbox, g)).collect();
        let best_gt = (0..gts.len()).max_by(|&a, &b| overlaps[a].total_cmp(&overlaps[b]).then(b.cmp(&a)));
        let gt_index = best_gt.filter(|&i| overlaps[i] > 0.0);
        let x = (det.bbox.cx * w).clamp(0.0, w);
        let y = (det.bbox.cy * h).clamp(0.0, h);
        return Ok(Selection {
            gt_index,
            point: (x, y),
            category: gt_index.map(|i| gts[i].category).unwrap_or(det.prompt_group),
            qualities,
        });
    }
    let qualities: Vec<f64> = norm
        .iter()
        .map(|g| detections.iter().map(|d| match_quality(d, g).value).fold(0.0, f64::max))
        .collect();
    let worst = argmin(&qualities);
    Ok(Selection {
        gt_index: Some(worst),
        point: gts[worst].bbox.center(),
        category: gts[worst].category,
        qualities,
    })
}
