//! Single-channel images and the crop/resize geometry used to cut template
//! and search regions out of frames.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Grayscale image, row-major, intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CoreError::contract("GrayImage::new", "empty frame"));
        }
        if data.len() != width * height {
            return Err(CoreError::contract(
                "GrayImage::new",
                format!("{width}x{height} wants {} values, got {}", width * height, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// View as a `[1, H, W]` tensor for the patch embedding.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.data.clone())
            .expect("image data length matches its extents")
    }

    /// Bilinear sample at continuous coordinates; taps outside the frame
    /// read `pad` instead.
    fn sample(&self, sx: f64, sy: f64, pad: f64) -> f64 {
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let tap = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                pad
            } else {
                self.get(xi as usize, yi as usize)
            }
        };
        let v00 = tap(x0, y0);
        let v01 = tap(x0 + 1.0, y0);
        let v10 = tap(x0, y0 + 1.0);
        let v11 = tap(x0 + 1.0, y0 + 1.0);
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
    }

    /// Cut a square region of side `side` centered at `center` and resize it
    /// to `out_size` x `out_size`. Out-of-bounds content is padded with the
    /// frame's mean intensity.
    pub fn crop_resize(&self, center: (f64, f64), side: f64, out_size: usize) -> Result<GrayImage> {
        if side <= 0.0 || !side.is_finite() {
            return Err(CoreError::contract("crop_resize", format!("side must be positive, got {side}")));
        }
        if out_size == 0 {
            return Err(CoreError::contract("crop_resize", "out_size must be positive"));
        }
        let pad = self.mean();
        let scale = side / out_size as f64;
        let origin_x = center.0 - side / 2.0;
        let origin_y = center.1 - side / 2.0;
        let mut out = vec![0.0; out_size * out_size];
        for oy in 0..out_size {
            let sy = origin_y + (oy as f64 + 0.5) * scale - 0.5;
            for ox in 0..out_size {
                let sx = origin_x + (ox as f64 + 0.5) * scale - 0.5;
                out[oy * out_size + ox] = self.sample(sx, sy, pad);
            }
        }
        GrayImage::new(out_size, out_size, out)
    }
}
