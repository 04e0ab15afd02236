//! Dataset statistics: object scale and per-image density.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{DealError, Result};

pub const SCALE_BIN_WIDTH: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    /// Mean of `sqrt(w * h)` over all annotations, 0 when there are none.
    pub mean_scale: f64,
    /// `per_image_counts[n]` is the number of images holding `n` objects.
    pub per_image_counts: Vec<usize>,
    /// `scale_histogram[i]` counts objects with scale in `[4i, 4i + 4)`.
    pub scale_histogram: Vec<usize>,
    pub n_images: usize,
    pub n_objects: usize,
}

pub fn dataset_stats(dataset: &Dataset) -> Result<SceneStats> {
    if dataset.is_empty() {
        return Err(DealError::Stats("dataset has no images".into()));
    }
    let mut per_image_counts = Vec::new();
    let mut scale_histogram = Vec::new();
    let mut total = 0.0;
    let mut n_objects = 0;
    for scene in &dataset.scenes {
        let n = scene.annotations.len();
        if per_image_counts.len() <= n {
            per_image_counts.resize(n + 1, 0);
        }
        per_image_counts[n] += 1;
        for a in &scene.annotations {
            let s = a.bbox.scale();
            total += s;
            n_objects += 1;
            let bin = (s / SCALE_BIN_WIDTH).floor() as usize;
            if scale_histogram.len() <= bin {
                scale_histogram.resize(bin + 1, 0);
            }
            scale_histogram[bin] += 1;
        }
    }
    Ok(SceneStats {
        mean_scale: if n_objects == 0 { 0.0 } else { total / n_objects as f64 },
        per_image_counts,
        scale_histogram,
        n_images: dataset.len(),
        n_objects,
    })
}
