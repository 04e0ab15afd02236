use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scene::Setting;

/// AP table of one evaluation run. `ap_by_iou` is keyed `"0.25"`, `"0.50"`,
/// `"0.75"`; `ap_by_scale` is keyed `vt`, `t`, `s`, `m` (at IoU 0.5).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    /// Prompts per image for fixed-count protocols.
    pub prompt_count: Option<usize>,
    pub jitter: f64,
    pub n_images: usize,
    pub n_ground_truth: usize,
    pub n_detections: usize,
    pub ap_by_iou: BTreeMap<String, f64>,
    pub ap_by_scale: BTreeMap<String, f64>,
    /// Scale buckets with no ground truth (their AP is reported as 0).
    pub empty_buckets: Vec<String>,
    /// Fraction of kept detections overlapping an object of a non-prompted
    /// category at IoU >= 0.5.
    pub off_category_fraction: f64,
}

impl EvalReport {
    pub fn ap(&self, iou: f64) -> Option<f64> {
        self.ap_by_iou.get(&iou_key(iou)).copied()
    }

    pub fn ap50(&self) -> f64 {
        self.ap(0.5).unwrap_or(0.0)
    }
}

pub(crate) fn iou_key(iou: f64) -> String {
    format!("{iou:.2}")
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "setting {}", self.setting)?;
        if let Some(k) = self.prompt_count {
            write!(f, " ({k} prompts)")?;
        }
        writeln!(
            f,
            ", {} images, {} objects, {} detections, jitter {}",
            self.n_images, self.n_ground_truth, self.n_detections, self.jitter
        )?;
        let iou_cols: Vec<(&String, &f64)> = self.ap_by_iou.iter().collect();
        let scale_cols: Vec<(&str, f64)> = ["vt", "t", "s", "m"]
            .iter()
            .map(|k| (*k, self.ap_by_scale.get(*k).copied().unwrap_or(0.0)))
            .collect();
        for (k, _) in &iou_cols {
            write!(f, "{:>8}", format!("AP{k}"))?;
        }
        for (k, _) in &scale_cols {
            write!(f, "{:>8}", format!("AP_{k}"))?;
        }
        writeln!(f)?;
        for (_, v) in &iou_cols {
            write!(f, "{:>8.1}", *v * 100.0)?;
        }
        for (k, v) in &scale_cols {
            if self.empty_buckets.iter().any(|e| e == k) {
                write!(f, "{:>8}", "-")?;
            } else {
                write!(f, "{:>8.1}", v * 100.0)?;
            }
        }
        writeln!(f)?;
        write!(f, "off-category detections: {:.1}%", self.off_category_fraction * 100.0)
    }
}
