use serde::{Deserialize, Serialize};

use crate::geometry::{iou, PixelBox};

pub const AP_IOU_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];
/// Recall levels `0, 0.01, ..., 1` of the interpolated PR integral.
pub const RECALL_POINTS: usize = 101;

/// Size classes by `sqrt(w * h)` in pixels: `[2,8)`, `[8,16)`, `[16,32)`, `[32,64)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScaleBucket {
    VeryTiny,
    Tiny,
    Small,
    Medium,
}

impl ScaleBucket {
    pub const ALL: [ScaleBucket; 4] = [ScaleBucket::VeryTiny, ScaleBucket::Tiny, ScaleBucket::Small, ScaleBucket::Medium];

    pub fn name(self) -> &'static str {
        match self {
            ScaleBucket::VeryTiny => "vt",
            ScaleBucket::Tiny => "t",
            ScaleBucket::Small => "s",
            ScaleBucket::Medium => "m",
        }
    }

    /// Half-open `[lo, hi)` bounds.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ScaleBucket::VeryTiny => (2.0, 8.0),
            ScaleBucket::Tiny => (8.0, 16.0),
            ScaleBucket::Small => (16.0, 32.0),
            ScaleBucket::Medium => (32.0, 64.0),
        }
    }

    pub fn contains(self, bbox: &PixelBox) -> bool {
        let (lo, hi) = self.bounds();
        let s = bbox.scale();
        s >= lo && s < hi
    }
}

pub fn scale_bucket(bbox: &PixelBox) -> Option<ScaleBucket> {
    ScaleBucket::ALL.into_iter().find(|b| b.contains(bbox))
}

/// Detections (box, score) and ground truth of one image, in pixels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<(PixelBox, f64)>,
    pub gts: Vec<PixelBox>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// No ground truth fell in the evaluated set; `ap` is reported as 0.
    pub no_ground_truth: bool,
}

/// 101-point interpolated AP over all images. Detections are processed in
/// descending score order (ties keep insertion order) and greedily matched to
/// the highest-IoU unmatched ground truth at or above `iou_threshold`. With a
/// bucket, ground truth outside it is ignored: a detection whose match is
/// out-of-bucket counts as neither TP nor FP; in-bucket matches are tried
/// first.
pub fn compute_ap(images: &[ImageEval], iou_threshold: f64, bucket: Option<ScaleBucket>) -> ApResult {
    let in_bucket = |b: &PixelBox| bucket.is_none_or(|k| k.contains(b));
    let n_pos: usize = images.iter().map(|im| im.gts.iter().filter(|g| in_bucket(g)).count()).sum();
    if n_pos == 0 {
        return ApResult {
            ap: 0.0,
            no_ground_truth: true,
        };
    }
    let mut order: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| (0..im.detections.len()).map(move |d| (i, d)))
        .collect();
    order.sort_by(|a, b| {
        let sa = images[a.0].detections[a.1].1;
        let sb = images[b.0].detections[b.1].1;
        sb.total_cmp(&sa)
    });
    let mut used: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.gts.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(order.len());
    for (i, d) in order {
        let det = &images[i].detections[d].0;
        let best = |want_in: bool, used: &[bool]| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in images[i].gts.iter().enumerate() {
                if used[g] || in_bucket(gt) != want_in {
                    continue;
                }
                let o = iou(det, gt);
                if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            best
        };
        if let Some((g, _)) = best(true, &used[i]) {
            used[i][g] = true;
            tp += 1;
        } else if let Some((g, _)) = best(false, &used[i]) {
            used[i][g] = true;
            continue;
        } else {
            fp += 1;
        }
        curve.push((tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64));
    }
    ApResult {
        ap: interpolate(&curve),
        no_ground_truth: false,
    }
}

/// Mean over the recall grid of the best precision at recall >= r.
fn interpolate(curve: &[(f64, f64)]) -> f64 {
    let mut envelope = vec![0.0; curve.len()];
    let mut running: f64 = 0.0;
    for (i, &(_, p)) in curve.iter().enumerate().rev() {
        running = running.max(p);
        envelope[i] = running;
    }
    let mut total = 0.0;
    let mut idx = 0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / (RECALL_POINTS - 1) as f64;
        while idx < curve.len() && curve[idx].0 < level - 1e-12 {
            idx += 1;
        }
        if idx < curve.len() {
            total += envelope[idx];
        }
    }
    total / RECALL_POINTS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets() {
        let sq = |s: f64| PixelBox::new(0., 0., s, s);
        assert_eq!(scale_bucket(&sq(6.)), Some(ScaleBucket::VeryTiny));
        assert_eq!(scale_bucket(&sq(20.)), Some(ScaleBucket::Small));
        assert_eq!(scale_bucket(&sq(64.)), None);
        assert_eq!(scale_bucket(&sq(1.)), None);
        assert_eq!(scale_bucket(&sq(8.)), Some(ScaleBucket::Tiny));
    }

    #[test]
    fn single_pair() {
        // IoU 0.6: 10x10 gt, detection 10x6 inside it
        let gt = PixelBox::new(0., 0., 10., 10.);
        let det = PixelBox::new(0., 0., 10., 6.);
        let im = [ImageEval {
            detections: vec![(det, 0.9)],
            gts: vec![gt],
        }];
        assert_eq!(compute_ap(&im, 0.5, None).ap, 1.0);
        assert_eq!(compute_ap(&im, 0.75, None).ap, 0.0);
    }

    #[test]
    fn echo_is_perfect() {
        let gts = vec![PixelBox::new(1., 1., 5., 5.), PixelBox::new(20., 20., 10., 10.)];
        let im = [ImageEval {
            detections: gts.iter().map(|g| (*g, 1.0)).collect(),
            gts,
        }];
        for t in AP_IOU_THRESHOLDS {
            assert_eq!(compute_ap(&im, t, None).ap, 1.0);
        }
        assert_eq!(compute_ap(&im, 0.5, Some(ScaleBucket::VeryTiny)).ap, 1.0);
        assert_eq!(compute_ap(&im, 0.5, Some(ScaleBucket::Tiny)).ap, 1.0);
        let s = compute_ap(&im, 0.5, Some(ScaleBucket::Small));
        assert!(s.no_ground_truth && s.ap == 0.0);
    }

    #[test]
    fn half_recall() {
        let gts = vec![PixelBox::new(0., 0., 5., 5.), PixelBox::new(20., 20., 5., 5.)];
        let im = [ImageEval {
            detections: vec![(gts[0], 0.8)],
            gts,
        }];
        // precision 1 up to recall 0.5: 51 of 101 levels
        assert!((compute_ap(&im, 0.5, None).ap - 51.0 / 101.0).abs() < 1e-12);
    }
}
