//! Point-prompt sampling for the four inference settings.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Annotation, CategoryId, Scene};
use crate::error::{DealError, Result};
use crate::geometry::PixelBox;

/// Prompt protocols: one point per category, one per instance, one point of
/// one category, all points of one category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Setting {
    S1,
    S2,
    S3,
    S4,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::S1, Setting::S2, Setting::S3, Setting::S4];

    pub fn from_index(i: u8) -> Option<Setting> {
        match i {
            1 => Some(Setting::S1),
            2 => Some(Setting::S2),
            3 => Some(Setting::S3),
            4 => Some(Setting::S4),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        self as u8 + 1
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "S{}", self.index())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: f64,
    pub y: f64,
    pub category: CategoryId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPromptSet {
    pub prompts: Vec<PointPrompt>,
    pub setting: Setting,
    pub seed: u64,
}

impl PointPromptSet {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Distinct prompted categories, ascending.
    pub fn categories(&self) -> Vec<CategoryId> {
        let mut c: Vec<CategoryId> = self.prompts.iter().map(|p| p.category).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Box centre displaced by up to `jitter * (w, h)` and kept strictly inside.
pub fn jittered_point<R: Rng + ?Sized>(bbox: &PixelBox, jitter: f64, rng: &mut R) -> (f64, f64) {
    let (cx, cy) = bbox.center();
    let (dx, dy) = if jitter > 0.0 {
        (
            rng.random_range(-1.0..=1.0) * jitter * bbox.w,
            rng.random_range(-1.0..=1.0) * jitter * bbox.h,
        )
    } else {
        (0.0, 0.0)
    };
    (inside(cx + dx, bbox.x, bbox.w), inside(cy + dy, bbox.y, bbox.h))
}

fn inside(v: f64, lo: f64, extent: f64) -> f64 {
    let margin = 1e-6 * extent;
    v.clamp(lo + margin, lo + extent - margin)
}

fn prompt_for<R: Rng + ?Sized>(a: &Annotation, jitter: f64, rng: &mut R) -> PointPrompt {
    let (x, y) = jittered_point(&a.bbox, jitter, rng);
    PointPrompt { x, y, category: a.category }
}

fn check(scene: &Scene, jitter: f64) -> Result<()> {
    if scene.annotations.is_empty() {
        return Err(DealError::Sampling(format!("scene `{}` has no annotations to prompt", scene.id)));
    }
    if !(0.0..=0.5).contains(&jitter) {
        return Err(DealError::Sampling(format!("jitter {jitter} outside [0, 0.5]")));
    }
    Ok(())
}

/// Samples prompts for one setting. S3 and S4 draw the same category for a
/// given seed, so the two settings are directly comparable.
pub fn sample_prompts(scene: &Scene, setting: Setting, seed: u64, jitter: f64) -> Result<PointPromptSet> {
    check(scene, jitter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats = scene.categories_present();
    let chosen = *cats.choose(&mut rng).expect("non-empty");
    let of = |c: CategoryId| scene.annotations.iter().filter(move |a| a.category == c).collect::<Vec<_>>();
    let prompts = match setting {
        Setting::S1 => cats
            .iter()
            .map(|&c| {
                let a = *of(c).choose(&mut rng).expect("category present");
                prompt_for(a, jitter, &mut rng)
            })
            .collect(),
        Setting::S2 => scene.annotations.iter().map(|a| prompt_for(a, jitter, &mut rng)).collect(),
        Setting::S3 => {
            let a = *of(chosen).choose(&mut rng).expect("category present");
            vec![prompt_for(a, jitter, &mut rng)]
        }
        Setting::S4 => of(chosen).into_iter().map(|a| prompt_for(a, jitter, &mut rng)).collect(),
    };
    Ok(PointPromptSet { prompts, setting, seed })
}

/// Single-category prompting with `count` distinct instances (fewer when the
/// category has fewer). The category draw matches [`sample_prompts`] for the
/// same seed; `count = 1` reproduces the S3 instance choice.
pub fn sample_prompts_with_count(scene: &Scene, count: usize, seed: u64, jitter: f64) -> Result<PointPromptSet> {
    check(scene, jitter)?;
    if count == 0 {
        return Err(DealError::Sampling("prompt count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats = scene.categories_present();
    let chosen = *cats.choose(&mut rng).expect("non-empty");
    let mut pool: Vec<&Annotation> = scene.annotations.iter().filter(|a| a.category == chosen).collect();
    let prompts = if count == 1 {
        let a = *pool.choose(&mut rng).expect("category present");
        vec![prompt_for(a, jitter, &mut rng)]
    } else {
        pool.shuffle(&mut rng);
        pool.truncate(count);
        pool.into_iter().map(|a| prompt_for(a, jitter, &mut rng)).collect()
    };
    let setting = if count == 1 { Setting::S3 } else { Setting::S4 };
    Ok(PointPromptSet { prompts, setting, seed })
}
