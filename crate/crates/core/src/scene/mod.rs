//! Scenes, synthetic generation, preprocessing, prompt sampling and
//! annotation interchange.

mod generate;
mod io;
mod preprocess;
mod prompts;
mod stats;

pub use generate::{generate_dataset, generate_scene, render_scene, GeneratorConfig, GlyphMask, RenderedScene};
pub use io::{export_annotations, ingest_annotations, load_png, save_png};
pub use preprocess::{
    filter_large_objects, tile_offsets, unify_resolution, FilterDecision, CLIP_SURVIVAL_FRACTION, LARGE_OBJECT_FRACTION,
    UNIFIED_RESOLUTION,
};
pub use prompts::{jittered_point, sample_prompts, sample_prompts_with_count, PointPrompt, PointPromptSet, Setting};
pub use stats::{dataset_stats, SceneStats, SCALE_BIN_WIDTH};

use serde::{Deserialize, Serialize};

use crate::geometry::PixelBox;
use deal_tensor::Tensor64;

pub type CategoryId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: PixelBox,
    pub category: CategoryId,
}

/// Image (`3 x H x W`, values in `[0, 1]`) plus ground-truth boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Tensor64,
    pub annotations: Vec<Annotation>,
}

impl Scene {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Categories present, ascending and deduplicated.
    pub fn categories_present(&self) -> Vec<CategoryId> {
        let mut cats: Vec<CategoryId> = self.annotations.iter().map(|a| a.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    pub fn annotations_of<'a>(&'a self, categories: &'a [CategoryId]) -> impl Iterator<Item = &'a Annotation> + 'a {
        self.annotations.iter().filter(move |a| categories.contains(&a.category))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub categories: Vec<Category>,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}
