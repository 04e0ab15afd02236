use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use deal_tensor::Scalar;

use super::ap::{compute_ap, ImageEval, ScaleBucket, AP_IOU_THRESHOLDS};
use super::report::{iou_key, EvalReport};
use crate::error::{DealError, Result};
use crate::geometry::{iou, PixelBox};
use crate::model::{Deal, Detection};
use crate::scene::{sample_prompts, sample_prompts_with_count, CategoryId, Dataset, PointPrompt, PointPromptSet, Scene, Setting};

/// Anything that maps a scene and its prompts to detections.
pub trait Detector {
    fn detect(&self, scene: &Scene, prompts: &[PointPrompt]) -> Result<Vec<Detection>>;
}

impl<S: Scalar> Detector for Deal<S> {
    fn detect(&self, scene: &Scene, prompts: &[PointPrompt]) -> Result<Vec<Detection>> {
        Ok(self.infer(&scene.image.cast::<S>(), prompts)?.detections)
    }
}

/// Returns every ground-truth object of the prompted categories with score 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct GtEcho;

impl Detector for GtEcho {
    fn detect(&self, scene: &Scene, prompts: &[PointPrompt]) -> Result<Vec<Detection>> {
        let (w, h) = (scene.width() as f64, scene.height() as f64);
        let cats: Vec<CategoryId> = prompts.iter().map(|p| p.category).collect();
        Ok(scene
            .annotations_of(&cats)
            .map(|a| Detection {
                bbox: a.bbox.to_norm(w, h),
                score: 1.0,
                prompt_group: a.category,
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub score_threshold: f64,
    /// Prompt displacement as a fraction of box size.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.2,
            jitter: 0.0,
            seed: 0,
        }
    }
}

/// How prompts are drawn per image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptProtocol {
    Setting(Setting),
    /// `n` instances of one randomly drawn category.
    Count(usize),
}

fn image_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(index as u64).rotate_left(17) ^ 0xA076_1D64_78BD_642F
}

pub fn evaluate_setting<D: Detector + ?Sized>(
    detector: &D,
    dataset: &Dataset,
    setting: Setting,
    seed: u64,
    score_threshold: f64,
) -> Result<EvalReport> {
    let cfg = EvalConfig {
        score_threshold,
        jitter: 0.0,
        seed,
    };
    evaluate_protocol(detector, dataset, PromptProtocol::Setting(setting), &cfg)
}

/// Samples prompts per image, keeps detections scoring at least the
/// threshold and scores them against the prompted categories' objects.
pub fn evaluate_protocol<D: Detector + ?Sized>(
    detector: &D,
    dataset: &Dataset,
    protocol: PromptProtocol,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(DealError::Evaluation("dataset has no images".into()));
    }
    let mut images = Vec::with_capacity(dataset.len());
    let (mut n_dets, mut off) = (0usize, 0usize);
    for (i, scene) in dataset.scenes.iter().enumerate() {
        if scene.annotations.is_empty() {
            continue;
        }
        let seed = image_seed(cfg.seed, i);
        let prompts: PointPromptSet = match protocol {
            PromptProtocol::Setting(s) => sample_prompts(scene, s, seed, cfg.jitter)?,
            PromptProtocol::Count(n) => sample_prompts_with_count(scene, n, seed, cfg.jitter)?,
        };
        let cats = prompts.categories();
        let (w, h) = (scene.width() as f64, scene.height() as f64);
        let detections: Vec<(PixelBox, f64)> = detector
            .detect(scene, &prompts.prompts)?
            .into_iter()
            .filter(|d| d.score >= cfg.score_threshold)
            .map(|d| (d.bbox.to_pixel(w, h), d.score))
            .collect();
        let others: Vec<&PixelBox> = scene.annotations.iter().filter(|a| !cats.contains(&a.category)).map(|a| &a.bbox).collect();
        off += detections.iter().filter(|(b, _)| others.iter().any(|o| iou(b, o) >= 0.5)).count();
        n_dets += detections.len();
        images.push(ImageEval {
            detections,
            gts: scene.annotations_of(&cats).map(|a| a.bbox).collect(),
        });
    }
    if images.is_empty() {
        return Err(DealError::Evaluation("no annotated images to prompt".into()));
    }
    let ap_by_iou: BTreeMap<String, f64> = AP_IOU_THRESHOLDS
        .iter()
        .map(|&t| (iou_key(t), compute_ap(&images, t, None).ap))
        .collect();
    let mut ap_by_scale = BTreeMap::new();
    let mut empty_buckets = Vec::new();
    for b in ScaleBucket::ALL {
        let r = compute_ap(&images, 0.5, Some(b));
        if r.no_ground_truth {
            empty_buckets.push(b.name().to_string());
        }
        ap_by_scale.insert(b.name().to_string(), r.ap);
    }
    let (setting, prompt_count) = match protocol {
        PromptProtocol::Setting(s) => (s, None),
        PromptProtocol::Count(n) => (if n == 1 { Setting::S3 } else { Setting::S4 }, Some(n)),
    };
    Ok(EvalReport {
        setting,
        prompt_count,
        jitter: cfg.jitter,
        n_images: images.len(),
        n_ground_truth: images.iter().map(|im| im.gts.len()).sum(),
        n_detections: n_dets,
        ap_by_iou,
        ap_by_scale,
        empty_buckets,
        off_category_fraction: if n_dets == 0 { 0.0 } else { off as f64 / n_dets as f64 },
    })
}
