//! Gradient masks and the |∇Y| transform, plus the scalar statistics
//! (total variation, means) used for the ordering claims.
//!
//! Masks apply by 2D convolution on the sign-flipped lattice:
//! `C(x,y) = Σ_{s,t∈{-1,0,1}} Z(s,t)·Y(x-s, y-t)`. Coefficients are stored
//! with z1 at the top-left, rows left to right, and `Z(s,t) = grid[t+1][s+1]`.
//! Raw responses are kept; nothing is normalized by mask weight sums.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// 3x3 convolution mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mask3x3 {
    grid: [[f64; 3]; 3],
}

impl Mask3x3 {
    pub const fn new(grid: [[f64; 3]; 3]) -> Self {
        Self { grid }
    }

    /// Coefficient at lattice offset (s horizontal, t vertical), each in -1..=1.
    #[inline]
    pub fn at(&self, s: isize, t: isize) -> f64 {
        self.grid[(t + 1) as usize][(s + 1) as usize]
    }

    pub fn grid(&self) -> &[[f64; 3]; 3] {
        &self.grid
    }
}

/// Horizontal-derivative Sobel mask; responds positively to intensity
/// increasing with x under the convolution convention above.
pub const SOBEL_X: Mask3x3 = Mask3x3::new([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]]);
pub const SOBEL_Y: Mask3x3 = Mask3x3::new([[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]]);
pub const PREWITT_X: Mask3x3 = Mask3x3::new([[1.0, 0.0, -1.0], [1.0, 0.0, -1.0], [1.0, 0.0, -1.0]]);
pub const PREWITT_Y: Mask3x3 = Mask3x3::new([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -1.0, -1.0]]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Out-of-range reads clamp to the nearest edge pixel.
    Replicate,
    /// Out-of-range reads are zero.
    Zero,
}

/// Horizontal and vertical derivative fields of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub gx: GrayImage,
    pub gy: GrayImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMethod {
    Forward,
    Prewitt,
    Sobel,
}

impl GradientMethod {
    pub fn name(&self) -> &'static str {
        match self {
            GradientMethod::Forward => "forward",
            GradientMethod::Prewitt => "prewitt",
            GradientMethod::Sobel => "sobel",
        }
    }
}

impl FromStr for GradientMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(GradientMethod::Forward),
            "prewitt" => Ok(GradientMethod::Prewitt),
            "sobel" => Ok(GradientMethod::Sobel),
            other => Err(Error::Config(format!(
                "unknown gradient method {other:?} (expected forward|prewitt|sobel)"
            ))),
        }
    }
}

/// 2D convolution of `img` with a 3x3 mask, output sized like the input.
pub fn mask_convolve(img: &GrayImage, mask: &Mask3x3, boundary: Boundary) -> GrayImage {
    let w = img.width() as isize;
    let h = img.height() as isize;
    let mut out = Vec::with_capacity(img.pixel_count());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for t in -1..=1isize {
                for s in -1..=1isize {
                    let sx = x - s;
                    let sy = y - t;
                    let v = match boundary {
                        Boundary::Replicate => {
                            img.get(sx.clamp(0, w - 1) as usize, sy.clamp(0, h - 1) as usize)
                        }
                        Boundary::Zero => {
                            if sx < 0 || sx >= w || sy < 0 || sy >= h {
                                0.0
                            } else {
                                img.get(sx as usize, sy as usize)
                            }
                        }
                    };
                    acc += mask.at(s, t) * v;
                }
            }
            out.push(acc);
        }
    }
    GrayImage::from_vec(img.width(), img.height(), out).expect("convolution preserves shape")
}

fn require_2x2(img: &GrayImage) -> Result<()> {
    if img.width() < 2 || img.height() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "gradient needs at least 2x2 pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Forward differences; the last row/column replicates the preceding
/// difference so the output keeps the input size.
pub fn gradient_forward(img: &GrayImage) -> Result<GradientPair> {
    require_2x2(img)?;
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w - 1 {
            gx[y * w + x] = img.get(x + 1, y) - img.get(x, y);
        }
        gx[y * w + w - 1] = gx[y * w + w - 2];
    }
    for y in 0..h - 1 {
        for x in 0..w {
            gy[y * w + x] = img.get(x, y + 1) - img.get(x, y);
        }
    }
    for x in 0..w {
        gy[(h - 1) * w + x] = gy[(h - 2) * w + x];
    }
    Ok(GradientPair {
        gx: GrayImage::from_vec(w, h, gx)?,
        gy: GrayImage::from_vec(w, h, gy)?,
    })
}

pub fn gradient_prewitt(img: &GrayImage) -> Result<GradientPair> {
    require_2x2(img)?;
    Ok(GradientPair {
        gx: mask_convolve(img, &PREWITT_X, Boundary::Replicate),
        gy: mask_convolve(img, &PREWITT_Y, Boundary::Replicate),
    })
}

pub fn gradient_sobel(img: &GrayImage) -> Result<GradientPair> {
    require_2x2(img)?;
    Ok(GradientPair {
        gx: mask_convolve(img, &SOBEL_X, Boundary::Replicate),
        gy: mask_convolve(img, &SOBEL_Y, Boundary::Replicate),
    })
}

pub fn gradient(img: &GrayImage, method: GradientMethod) -> Result<GradientPair> {
    match method {
        GradientMethod::Forward => gradient_forward(img),
        GradientMethod::Prewitt => gradient_prewitt(img),
        GradientMethod::Sobel => gradient_sobel(img),
    }
}

/// Pointwise √(gx² + gy²).
pub fn gradient_magnitude(pair: &GradientPair) -> Result<GrayImage> {
    if pair.gx.width() != pair.gy.width() || pair.gx.height() != pair.gy.height() {
        return Err(Error::ShapeMismatch(format!(
            "gradient components differ: {}x{} vs {}x{}",
            pair.gx.width(),
            pair.gx.height(),
            pair.gy.width(),
            pair.gy.height()
        )));
    }
    let data = pair
        .gx
        .data()
        .iter()
        .zip(pair.gy.data())
        .map(|(&x, &y)| (x * x + y * y).sqrt())
        .collect();
    GrayImage::from_vec(pair.gx.width(), pair.gx.height(), data)
}

/// Transform an intensity field into its gradient-magnitude image.
pub fn gradient_module_image(img: &GrayImage, method: GradientMethod) -> Result<GrayImage> {
    gradient_magnitude(&gradient(img, method)?)
}

/// Sum of the gradient magnitude over all pixels (discrete total variation).
pub fn total_variation(img: &GrayImage, method: GradientMethod) -> Result<f64> {
    Ok(gradient_module_image(img, method)?.data().iter().sum())
}

/// Total variation divided by pixel count.
pub fn mean_gradient_module(img: &GrayImage, method: GradientMethod) -> Result<f64> {
    Ok(total_variation(img, method)? / img.pixel_count() as f64)
}

/// Arithmetic mean of pixel intensities.
pub fn mean_intensity(img: &GrayImage) -> f64 {
    img.mean()
}
