//! Transport-independent inference endpoint: request validation, image
//! resolution, the forward pass and the response payload.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::model::{Deal, INPUT_MULTIPLE};
use crate::scene::{load_png, CategoryId, PointPrompt};
use deal_tensor::Tensor64;

/// Largest accepted inline image, after base64 decoding.
pub const MAX_INLINE_IMAGE_BYTES: usize = 8 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    /// Base64-encoded PNG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_base64: Option<String>,
    pub prompts: Vec<PointPrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionPayload {
    /// Normalised `[cx, cy, w, h]`.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    pub prompt_group: CategoryId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityPayload {
    pub width: usize,
    pub height: usize,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub detections: Vec<DetectionPayload>,
    pub n_query: usize,
    pub density_map: DensityPayload,
    pub timing_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    PayloadTooLarge(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    /// HTTP status code for the error class.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::BadRequest(_) => 400,
            ServiceError::NotFound(_) => 404,
            ServiceError::PayloadTooLarge(_) => 413,
            ServiceError::Unavailable(_) => 503,
            ServiceError::Internal(_) => 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: String,
    pub width: u32,
    pub height: u32,
}

/// Directory of PNG files addressed by file stem.
#[derive(Clone, Debug)]
pub struct ImageStore {
    dir: PathBuf,
}

impl ImageStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_of(&self, id: &str) -> Result<PathBuf, ServiceError> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.');
        if !valid {
            return Err(ServiceError::BadRequest(format!("invalid image id `{id}`")));
        }
        let path = self.dir.join(format!("{id}.png"));
        if path.is_file() {
            Ok(path)
        } else {
            Err(ServiceError::NotFound(format!("unknown image id `{id}`")))
        }
    }

    /// Ids (sorted) and pixel dimensions of every PNG in the directory.
    pub fn list(&self) -> Result<Vec<ImageInfo>, ServiceError> {
        let entries = fs::read_dir(&self.dir).map_err(|e| ServiceError::Internal(format!("{}: {e}", self.dir.display())))?;
        let mut out = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if let Ok((width, height)) = image::image_dimensions(&path) {
                out.push(ImageInfo {
                    id: id.to_string(),
                    width,
                    height,
                });
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn bytes(&self, id: &str) -> Result<Vec<u8>, ServiceError> {
        let path = self.path_of(id)?;
        fs::read(&path).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))
    }

    pub fn load(&self, id: &str) -> Result<Tensor64, ServiceError> {
        let path = self.path_of(id)?;
        load_png(&path).map_err(|e| ServiceError::Internal(e.to_string()))
    }
}

fn decode_inline(data: &str) -> Result<Tensor64, ServiceError> {
    // base64 expands by 4/3; reject before decoding anything huge
    if data.len() / 4 * 3 > MAX_INLINE_IMAGE_BYTES + 3 {
        return Err(ServiceError::PayloadTooLarge(format!(
            "inline image exceeds {MAX_INLINE_IMAGE_BYTES} bytes; register it in the image directory instead"
        )));
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data.trim())
        .map_err(|e| ServiceError::BadRequest(format!("image_base64 is not valid base64: {e}")))?;
    if bytes.len() > MAX_INLINE_IMAGE_BYTES {
        return Err(ServiceError::PayloadTooLarge(format!("inline image exceeds {MAX_INLINE_IMAGE_BYTES} bytes")));
    }
    let img = image::load_from_memory(&bytes)
        .map_err(|e| ServiceError::BadRequest(format!("image_base64 is not a decodable image: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor64::new([3, h, w], data).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

/// Zero-pads bottom/right up to the next multiple of the backbone stride.
fn pad_to_multiple(image: &Tensor64) -> Tensor64 {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let up = |v: usize| v.div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE;
    let (ph, pw) = (up(h), up(w));
    if (ph, pw) == (h, w) {
        return image.clone();
    }
    let src = image.data();
    let mut data = vec![0.0; 3 * ph * pw];
    for c in 0..3 {
        for y in 0..h {
            let s = c * h * w + y * w;
            let d = c * ph * pw + y * pw;
            data[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Tensor64::new([3, ph, pw], data).expect("padded shape is consistent")
}

/// Runs one point-prompted inference. Images whose sides are not multiples
/// of 32 are zero-padded; boxes are reported relative to the original image
/// and the density map covers the padded grid.
pub fn handle_infer(request: &InferRequest, model: Option<&Deal<f64>>, images: Option<&ImageStore>) -> Result<InferResponse, ServiceError> {
    let started = Instant::now();
    if request.prompts.is_empty() {
        return Err(ServiceError::BadRequest("P2SOD requires at least one point prompt".into()));
    }
    let Some(model) = model else {
        return Err(ServiceError::Unavailable("no checkpoint loaded".into()));
    };
    let threshold = request.score_threshold.unwrap_or(model.config.score_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ServiceError::BadRequest(format!("score_threshold {threshold} outside [0, 1]")));
    }
    let image = match (&request.image_id, &request.image_base64) {
        (Some(_), Some(_)) => return Err(ServiceError::BadRequest("give either image_id or image_base64, not both".into())),
        (None, None) => return Err(ServiceError::BadRequest("request names no image (image_id or image_base64)".into())),
        (Some(id), None) => match images {
            Some(store) => store.load(id)?,
            None => return Err(ServiceError::NotFound(format!("unknown image id `{id}` (no image directory configured)"))),
        },
        (None, Some(data)) => decode_inline(data)?,
    };
    let (h, w) = (image.shape()[1] as f64, image.shape()[2] as f64);
    for (i, p) in request.prompts.iter().enumerate() {
        let inside = p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h;
        if !inside {
            return Err(ServiceError::BadRequest(format!(
                "prompt {i} at ({}, {}) lies outside the {w}x{h} image",
                p.x, p.y
            )));
        }
    }
    let padded = pad_to_multiple(&image);
    let (ph, pw) = (padded.shape()[1] as f64, padded.shape()[2] as f64);
    let out = model.infer(&padded, &request.prompts).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let detections = out
        .detections
        .iter()
        .filter(|d| d.score >= threshold)
        .filter_map(|d| {
            let b = d.bbox.to_pixel(pw, ph).to_norm(w, h);
            let inside = (0.0..=1.0).contains(&b.cx) && (0.0..=1.0).contains(&b.cy) && b.w > 0.0 && b.h > 0.0;
            inside.then_some(DetectionPayload {
                bbox: b.as_array(),
                score: d.score,
                prompt_group: d.prompt_group,
            })
        })
        .collect();
    let (gh, gw) = out.density_dims;
    Ok(InferResponse {
        detections,
        n_query: out.n_query,
        density_map: DensityPayload {
            width: gw,
            height: gh,
            values: out.density,
        },
        timing_ms: started.elapsed().as_secs_f64() * 1000.0,
    })
}
