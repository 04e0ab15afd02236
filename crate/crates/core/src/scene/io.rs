//! COCO-style annotation files and PNG rasters.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Annotation, Category, Dataset, Scene};
use crate::error::{DealError, Result};
use crate::geometry::PixelBox;
use deal_tensor::Tensor64;

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    #[serde(default)]
    area: f64,
    #[serde(default)]
    iscrowd: u8,
}

/// Writes `3 x H x W` values in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_png(image: &Tensor64, path: &Path) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let d = image.data();
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[plane + i]), to_u8(d[2 * plane + i])])
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Tensor64> {
    if !path.exists() {
        return Err(DealError::MissingImage(path.to_path_buf()));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Ok(Tensor64::new([3, h, w], data)?)
}

/// Writes `path` (annotation JSON) plus one `{scene_id}.png` per scene in the
/// same directory.
pub fn export_annotations(dataset: &Dataset, path: &Path) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut images = Vec::with_capacity(dataset.len());
    let mut annotations = Vec::new();
    for (i, scene) in dataset.scenes.iter().enumerate() {
        let image_id = i as u64 + 1;
        let file_name = format!("{}.png", scene.id);
        save_png(&scene.image, &dir.join(&file_name))?;
        images.push(CocoImage {
            id: image_id,
            file_name,
            width: scene.width(),
            height: scene.height(),
        });
        for a in &scene.annotations {
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: a.category,
                bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                area: a.bbox.area(),
                iscrowd: 0,
            });
        }
    }
    let file = CocoFile {
        images,
        annotations,
        categories: dataset.categories.clone(),
    };
    fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

/// Reads an annotation file and the PNGs it references (relative to the
/// file's directory). Boxes must lie inside their image.
pub fn ingest_annotations(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| DealError::Parse {
        context: format!("{} line {} column {}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let known: Vec<u32> = file.categories.iter().map(|c| c.id).collect();
    let index: HashMap<u64, usize> = file.images.iter().enumerate().map(|(i, im)| (im.id, i)).collect();
    if index.len() != file.images.len() {
        return Err(DealError::Validation("duplicate image ids".into()));
    }
    let mut per_image: BTreeMap<usize, Vec<Annotation>> = BTreeMap::new();
    for (rec, a) in file.annotations.iter().enumerate() {
        let Some(&slot) = index.get(&a.image_id) else {
            return Err(DealError::Validation(format!(
                "annotation record {rec} (id {}) references unknown image id {}",
                a.id, a.image_id
            )));
        };
        if !known.contains(&a.category_id) {
            return Err(DealError::Validation(format!(
                "annotation record {rec} (id {}) has undeclared category {}",
                a.id, a.category_id
            )));
        }
        let im = &file.images[slot];
        let bbox = PixelBox::new(a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]);
        if !bbox.is_valid() || bbox.w < 1.0 || bbox.h < 1.0 || !bbox.within(im.width as f64, im.height as f64) {
            return Err(DealError::Validation(format!(
                "annotation record {rec} (id {}) box {:?} is degenerate or outside image `{}` ({}x{})",
                a.id, a.bbox, im.file_name, im.width, im.height
            )));
        }
        per_image.entry(slot).or_default().push(Annotation {
            bbox,
            category: a.category_id,
        });
    }
    let mut scenes = Vec::with_capacity(file.images.len());
    for (slot, im) in file.images.iter().enumerate() {
        let image = load_png(&dir.join(&im.file_name))?;
        if image.shape()[1] != im.height || image.shape()[2] != im.width {
            return Err(DealError::Validation(format!(
                "image `{}` is {}x{}, annotation file says {}x{}",
                im.file_name,
                image.shape()[2],
                image.shape()[1],
                im.width,
                im.height
            )));
        }
        let id = Path::new(&im.file_name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| im.id.to_string());
        scenes.push(Scene {
            id,
            image,
            annotations: per_image.remove(&slot).unwrap_or_default(),
        });
    }
    Ok(Dataset {
        categories: file.categories,
        scenes,
    })
}
