//! Grayscale images and the image-space transforms consumed by the rest of
//! the pipeline: normalization, augmentation, contrast stretching, resizing.
//!
//! Pixel data is `f64` end to end; 8-bit quantization happens only at the
//! PGM file boundary.

use crate::error::{Error, Result};

/// A 2D scalar intensity field, stored row-major.
///
/// Raw inputs are nominally 0–255; derived fields (gradients, normalized
/// images, fingerprints) may take any finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite pixel value {v}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_vec(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Pixel at column `x`, row `y`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Map every pixel through `f`, keeping dimensions.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Zero-center the image and divide by its population standard deviation.
    ///
    /// Fails on constant images (zero standard deviation).
    pub fn zero_center_normalize(&self) -> Result<Self> {
        let n = self.data.len() as f64;
        let mean = self.mean();
        let var = self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std == 0.0 {
            return Err(Error::ConstantInput);
        }
        Ok(self.map(|v| (v - mean) / std))
    }

    /// Identity, horizontal mirror, and upside-down flip of the image.
    pub fn augment(&self) -> [Self; 3] {
        [self.clone(), self.mirror_horizontal(), self.flip_vertical()]
    }

    /// Reverse each row (left-right mirror).
    pub fn mirror_horizontal(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.width) {
            row.reverse();
        }
        Self { width: self.width, height: self.height, data }
    }

    /// Reverse the row order (upside-down flip).
    pub fn flip_vertical(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in (0..self.height).rev() {
            data.extend_from_slice(self.row(y));
        }
        Self { width: self.width, height: self.height, data }
    }

    /// Rescale linearly so the minimum maps to 0 and the maximum to 1.
    /// Constant images map to all zeros.
    pub fn rescale01(&self) -> Self {
        let (lo, hi) = self.min_max();
        if hi == lo {
            return self.map(|_| 0.0);
        }
        let span = hi - lo;
        self.map(|v| (v - lo) / span)
    }

    /// Saturate the lowest `lo_frac` and highest `hi_frac` of pixel values and
    /// stretch the rest linearly onto [0, 1]. Visualization-only transform;
    /// computations always consume the unsaturated image.
    ///
    /// Quantiles use sorted-rank with lower interpolation. All-equal pixels
    /// yield a constant zero image.
    pub fn contrast_stretch(&self, lo_frac: f64, hi_frac: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lo_frac)
            || !(0.0..1.0).contains(&hi_frac)
            || lo_frac + hi_frac >= 1.0
        {
            return Err(Error::Config(format!(
                "contrast stretch fractions ({lo_frac}, {hi_frac}) must be non-negative and sum below 1"
            )));
        }
        let mut sorted = self.data.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let rank = |f: f64| sorted[((f * (n - 1) as f64).floor() as usize).min(n - 1)];
        let lo = rank(lo_frac);
        let hi = rank(1.0 - hi_frac);
        if hi <= lo {
            return Ok(self.map(|_| 0.0));
        }
        let span = hi - lo;
        Ok(self.map(|v| ((v - lo) / span).clamp(0.0, 1.0)))
    }

    /// Bilinear resize with corner-aligned sampling: output corners sample
    /// input corners exactly, so affine intensity fields resize exactly.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Self> {
        if new_w == 0 || new_h == 0 {
            return Err(Error::ShapeMismatch(format!(
                "resize target must be at least 1x1, got {new_w}x{new_h}"
            )));
        }
        if new_w == self.width && new_h == self.height {
            return Ok(self.clone());
        }
        let scale = |out_i: usize, out_n: usize, in_n: usize| -> f64 {
            if out_n == 1 {
                0.0
            } else {
                out_i as f64 * (in_n - 1) as f64 / (out_n - 1) as f64
            }
        };
        let mut data = Vec::with_capacity(new_w * new_h);
        for oy in 0..new_h {
            let sy = scale(oy, new_h, self.height);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = sy - y0 as f64;
            for ox in 0..new_w {
                let sx = scale(ox, new_w, self.width);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = sx - x0 as f64;
                let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
                let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Self::from_vec(new_w, new_h, data)
    }
}
