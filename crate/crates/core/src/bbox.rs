use crate::error::{CoreError, Result};

/// Frame of reference a box is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxFrame {
    /// Pixels of the full source image.
    ImagePx,
    /// Pixels of a resized search/template crop.
    CropPx,
    /// Fractions of the crop side, in `[0, 1]`.
    Normalized,
}

/// Axis-aligned box: top-left corner plus positive extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub frame: BoxFrame,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, frame: BoxFrame) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(CoreError::contract("BBox::new", "non-finite coordinate"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(CoreError::contract("BBox::new", format!("extents must be positive: w={w}, h={h}")));
        }
        if frame == BoxFrame::Normalized {
            for (label, v) in [("x", x), ("y", y), ("w", w), ("h", h)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CoreError::contract(
                        "BBox::new",
                        format!("normalized boxes live in [0,1], got {label}={v}"),
                    ));
                }
            }
        }
        Ok(Self { x, y, w, h, frame })
    }

    pub fn image_px(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, w, h, BoxFrame::ImagePx)
    }

    pub fn normalized(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, w, h, BoxFrame::Normalized)
    }

    pub fn cx(&self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let dx = self.cx() - other.cx();
        let dy = self.cy() - other.cy();
        (dx * dx + dy * dy).sqrt()
    }
}
