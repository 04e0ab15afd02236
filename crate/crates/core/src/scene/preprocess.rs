//! Dataset preprocessing: large-object filtering and fixed-resolution tiling.

use super::{Annotation, Scene};
use crate::error::Result;
use crate::geometry::PixelBox;
use deal_tensor::Tensor64;

pub const LARGE_OBJECT_FRACTION: f64 = 0.40;
pub const UNIFIED_RESOLUTION: usize = 1024;
/// Clipped annotations survive tiling when they keep at least this fraction
/// of their original area.
pub const CLIP_SURVIVAL_FRACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop,
}

/// Drops a scene iff its single largest annotation covers strictly more than
/// `threshold` of the image area.
pub fn filter_large_objects(scene: &Scene, threshold: f64) -> FilterDecision {
    let image_area = (scene.width() * scene.height()) as f64;
    let largest = scene.annotations.iter().map(|a| a.bbox.area()).fold(0.0, f64::max);
    if largest > threshold * image_area {
        FilterDecision::Drop
    } else {
        FilterDecision::Keep
    }
}

/// Tile origins along one axis of length `len`. The last tile is anchored to
/// the far edge, so the final two tiles may overlap.
pub fn tile_offsets(len: usize, target: usize) -> Vec<usize> {
    if len <= target {
        return vec![0];
    }
    let mut offsets: Vec<usize> = (0..).map(|i| i * target).take_while(|&o| o + target < len).collect();
    offsets.push(len - target);
    offsets.dedup();
    offsets
}

/// Crops (or zero-pads bottom/right) a scene into `target x target` tiles.
pub fn unify_resolution(scene: &Scene, target: usize) -> Result<Vec<Scene>> {
    let (h, w) = (scene.height(), scene.width());
    let xs = tile_offsets(w, target);
    let ys = tile_offsets(h, target);
    let single = xs.len() == 1 && ys.len() == 1;
    if single && h == target && w == target {
        return Ok(vec![scene.clone()]);
    }
    let src = scene.image.data();
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &oy in &ys {
        for &ox in &xs {
            let mut data = vec![0.0; 3 * target * target];
            let copy_w = target.min(w - ox);
            let copy_h = target.min(h - oy);
            for c in 0..3 {
                for y in 0..copy_h {
                    let s = c * h * w + (oy + y) * w + ox;
                    let d = c * target * target + y * target;
                    data[d..d + copy_w].copy_from_slice(&src[s..s + copy_w]);
                }
            }
            let window = PixelBox::new(ox as f64, oy as f64, copy_w as f64, copy_h as f64);
            let annotations = scene
                .annotations
                .iter()
                .filter_map(|a| {
                    let clipped = a.bbox.intersect(&window)?;
                    // clipped boxes thinner than a pixel would break the w, h >= 1 invariant
                    let keep = clipped.area() >= CLIP_SURVIVAL_FRACTION * a.bbox.area() && clipped.w >= 1.0 && clipped.h >= 1.0;
                    keep.then(|| Annotation {
                        bbox: PixelBox::new(clipped.x - ox as f64, clipped.y - oy as f64, clipped.w, clipped.h),
                        category: a.category,
                    })
                })
                .collect();
            let id = if single {
                scene.id.clone()
            } else {
                format!("{}_x{}_y{}", scene.id, ox, oy)
            };
            tiles.push(Scene {
                id,
                image: Tensor64::new([3, target, target], data)?,
                annotations,
            });
        }
    }
    Ok(tiles)
}
