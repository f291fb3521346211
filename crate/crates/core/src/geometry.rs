//! Axis-aligned boxes, IoU and the IoU gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in absolute pixel corner form.
///
/// Construction validates that all coordinates are finite and ordered, so every
/// `BBox` in circulation satisfies `x1 <= x2` and `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite box coordinates {coords:?}")));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidInput(format!("box corners out of order {coords:?}")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Converts COCO `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative box extent (width {w}, height {h})"
            )));
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.corners()
    }
}

fn overlap(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.y1, a.y2, b.y1, b.y2);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Partial derivatives of `iou(a, b)` with respect to `a`'s `[x1, y1, x2, y2]`.
///
/// Where an edge of `a` coincides with the corresponding edge of `b` the one-sided
/// derivatives disagree and the intersection term contributes 0. Non-overlapping
/// boxes have a zero gradient.
pub fn iou_grad(a: &BBox, b: &BBox) -> Result<[f64; 4]> {
    if a.is_degenerate() || b.is_degenerate() {
        return Err(Error::Degenerate(format!(
            "zero-area box in IoU gradient ({:?} vs {:?})",
            a.corners(),
            b.corners()
        )));
    }
    let iw = overlap(a.x1, a.x2, b.x1, b.x2);
    let ih = overlap(a.y1, a.y2, b.y1, b.y2);
    if iw <= 0.0 || ih <= 0.0 {
        return Ok([0.0; 4]);
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;

    // d(inter)/d(coord): an edge only moves the intersection when it is the binding one.
    let d_inter = [
        if a.x1 > b.x1 { -ih } else { 0.0 },
        if a.y1 > b.y1 { -iw } else { 0.0 },
        if a.x2 < b.x2 { ih } else { 0.0 },
        if a.y2 < b.y2 { iw } else { 0.0 },
    ];
    let (w, h) = (a.width(), a.height());
    let d_area = [-h, -w, h, w];

    // d(I/U) = (dI * U - I * (dA - dI)) / U^2
    let mut g = [0.0; 4];
    for i in 0..4 {
        g[i] = (d_inter[i] * (union + inter) - inter * d_area[i]) / (union * union);
    }
    Ok(g)
}
