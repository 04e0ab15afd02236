//! Axis-aligned boxes in pixel and normalised coordinates.

use serde::{Deserialize, Serialize};

/// Top-left anchored box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Geometric-mean side length, `sqrt(w * h)`.
    pub fn scale(&self) -> f64 {
        self.area().sqrt()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Strict interior test.
    pub fn contains_strictly(&self, px: f64, py: f64) -> bool {
        px > self.x && px < self.right() && py > self.y && py < self.bottom()
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height
    }

    /// Intersection with another box, `None` when empty.
    pub fn intersect(&self, other: &PixelBox) -> Option<PixelBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| PixelBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn to_norm(&self, width: f64, height: f64) -> NormBox {
        let (cx, cy) = self.center();
        NormBox {
            cx: cx / width,
            cy: cy / height,
            w: self.w / width,
            h: self.h / height,
        }
    }
}

/// Centre/size box normalised by the image extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub fn to_pixel(&self, width: f64, height: f64) -> PixelBox {
        PixelBox {
            x: (self.cx - 0.5 * self.w) * width,
            y: (self.cy - 0.5 * self.h) * height,
            w: self.w * width,
            h: self.h * height,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let Some(inter) = a.intersect(b) else {
        return 0.0;
    };
    let union = a.area() + b.area() - inter.area();
    if union <= 0.0 {
        0.0
    } else {
        (inter.area() / union).clamp(0.0, 1.0)
    }
}

/// Generalised IoU of two normalised boxes, in `[-1, 1]`.
pub fn giou(a: &NormBox, b: &NormBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    let cw = ax1.max(bx1) - ax0.min(bx0);
    let ch = ay1.max(by1) - ay0.min(by0);
    let enclosing = cw * ch;
    inter / union - (enclosing - union) / enclosing
}
