#![allow(dead_code)]

use std::path::{Path, PathBuf};

use deal_core::model::{Deal, ModelConfig};
use deal_core::scene::{export_annotations, generate_dataset, GeneratorConfig};

pub fn small_model() -> ModelConfig {
    ModelConfig {
        channels: 8,
        hidden: 16,
        heads: 2,
        decoder_layers: 1,
        ..ModelConfig::default()
    }
}

pub fn small_generator() -> GeneratorConfig {
    GeneratorConfig {
        width: 64,
        height: 64,
        min_objects: 2,
        max_objects: 6,
        ..GeneratorConfig::default()
    }
}

/// Config file matching `small_model` and `small_generator`.
pub fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    let text = r#"
seed = 3

[generator]
width = 64
height = 64
min_objects = 2
max_objects = 6

[dataset]
train_scenes = 4
test_scenes = 3

[model]
channels = 8
hidden = 16
heads = 2
decoder_layers = 1

[training]
epochs = 1
steps = 1
"#;
    std::fs::write(&path, text).unwrap();
    path
}

pub fn write_checkpoint(dir: &Path) -> PathBuf {
    let model = Deal::<f64>::new(small_model(), 11).unwrap();
    let path = dir.join("model.ckpt");
    deal_tensor::save_checkpoint(&path, &model.params).unwrap();
    path
}

/// Exports a few scenes; returns the annotation path (PNGs sit beside it).
pub fn write_images(dir: &Path, count: usize) -> PathBuf {
    let dataset = generate_dataset(&small_generator(), count, 5).unwrap();
    let path = dir.join("images").join("annotations.json");
    export_annotations(&dataset, &path).unwrap();
    path
}
