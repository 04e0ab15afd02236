//! Fixed vectors for the large-object filter and the 1024 tiling.

use deal_core::geometry::PixelBox;
use deal_core::scene::{filter_large_objects, tile_offsets, unify_resolution, Annotation, FilterDecision, Scene, LARGE_OBJECT_FRACTION, UNIFIED_RESOLUTION};
use deal_tensor::Tensor64;

pub fn blank(w: usize, h: usize, boxes: &[(f64, f64, f64, f64)]) -> Scene {
    Scene {
        id: "s".into(),
        image: Tensor64::zeros([3, h, w]),
        annotations: boxes
            .iter()
            .map(|&(x, y, bw, bh)| Annotation {
                bbox: PixelBox::new(x, y, bw, bh),
                category: 0,
            })
            .collect(),
    }
}

/// (image w, image h, boxes, expected decision)
pub const FILTER_VECTORS: &[(usize, usize, &[(f64, f64, f64, f64)], FilterDecision)] = &[
    (100, 100, &[(0., 0., 50., 100.)], FilterDecision::Drop),
    (100, 100, &[(0., 0., 10., 100.)], FilterDecision::Keep),
    (100, 100, &[(0., 0., 40., 100.)], FilterDecision::Keep),
    (100, 100, &[(0., 0., 40., 100.), (50., 50., 1., 1.)], FilterDecision::Keep),
    (100, 100, &[(0., 0., 40.5, 100.)], FilterDecision::Drop),
    (100, 100, &[(0., 0., 30., 100.), (30., 0., 30., 100.)], FilterDecision::Keep),
    (200, 50, &[(0., 0., 80., 50.)], FilterDecision::Keep),
    (200, 50, &[(0., 0., 81., 50.)], FilterDecision::Drop),
    (10, 10, &[], FilterDecision::Keep),
];

/// (axis length, expected tile offsets at 1024)
pub const OFFSET_VECTORS: &[(usize, &[usize])] = &[
    (1, &[0]),
    (500, &[0]),
    (1024, &[0]),
    (1025, &[0, 1]),
    (1500, &[0, 476]),
    (2048, &[0, 1024]),
    (2049, &[0, 1024, 1025]),
    (3000, &[0, 1024, 1976]),
];

/// Runs every vector; returns the first mismatch.
pub fn check_vectors() -> Result<usize, String> {
    let mut checked = 0;
    for (i, &(w, h, boxes, want)) in FILTER_VECTORS.iter().enumerate() {
        let got = filter_large_objects(&blank(w, h, boxes), LARGE_OBJECT_FRACTION);
        if got != want {
            return Err(format!("filter vector {i}: expected {want:?}, got {got:?}"));
        }
        checked += 1;
    }
    for &(len, want) in OFFSET_VECTORS {
        let got = tile_offsets(len, UNIFIED_RESOLUTION);
        if got != want {
            return Err(format!("offsets for {len}: expected {want:?}, got {got:?}"));
        }
        checked += 1;
    }
    let identity = blank(1024, 1024, &[(5., 5., 10., 10.)]);
    if unify_resolution(&identity, UNIFIED_RESOLUTION).map_err(|e| e.to_string())? != vec![identity.clone()] {
        return Err("1024x1024 input is not a single unchanged tile".into());
    }
    let wide = unify_resolution(&blank(2048, 1024, &[(1020., 10., 10., 10.), (1500., 0., 8., 8.)]), UNIFIED_RESOLUTION).map_err(|e| e.to_string())?;
    let wide_boxes: Vec<Vec<PixelBox>> = wide.iter().map(|t| t.annotations.iter().map(|a| a.bbox).collect()).collect();
    let want = vec![
        vec![PixelBox::new(1020., 10., 4., 10.)],
        vec![PixelBox::new(0., 10., 6., 10.), PixelBox::new(476., 0., 8., 8.)],
    ];
    if wide_boxes != want || wide[0].id != "s_x0_y0" || wide[1].id != "s_x1024_y0" {
        return Err(format!("2048x1024 tiling: {wide_boxes:?}"));
    }
    let small = blank(500, 600, &[(10., 20., 30., 40.)]);
    let padded = unify_resolution(&small, UNIFIED_RESOLUTION).map_err(|e| e.to_string())?;
    if padded.len() != 1 || padded[0].image.shape() != [3, 1024, 1024] || padded[0].annotations != small.annotations {
        return Err("500x600 input is not one padded tile with unmoved annotations".into());
    }
    Ok(checked + 3)
}
