//! Image and context-map buffers.
//!
//! All pixel data is `f32` in `[0,1]`, interleaved RGB, row-major. The color
//! space tag records whether a buffer holds LOG-encoded footage or sRGB; it
//! is metadata only — no transfer-curve math is applied anywhere, LOG frames
//! are consumed directly as lattice input.

use crate::error::{Error, Result};

/// Color space tag carried by an [`ImageBuffer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    /// Flat, wide-dynamic-range camera encoding (treated as generic [0,1] data).
    Log,
    /// Display-referred sRGB.
    Srgb,
}

/// H×W×3 image with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    space: ColorSpace,
    /// Interleaved RGB, `3 * width * height` values, row-major.
    data: Vec<f32>,
}

impl ImageBuffer {
    /// All-zero (black) image.
    pub fn new(width: usize, height: usize, space: ColorSpace) -> Result<Self> {
        Self::check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            space,
            data: vec![0.0; 3 * width * height],
        })
    }

    /// Wraps interleaved RGB data. Non-finite values are rejected; values
    /// outside `[0,1]` are clamped on load.
    pub fn from_data(width: usize, height: usize, space: ColorSpace, data: Vec<f32>) -> Result<Self> {
        Self::check_dims(width, height)?;
        if data.len() != 3 * width * height {
            return Err(Error::DimensionMismatch(format!(
                "image data length {} != 3*{width}*{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite pixel value {v}")));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            space,
            data,
        })
    }

    /// Builds an image from a per-pixel closure returning `[r,g,b]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_data(width, height, space, data)
    }

    fn check_dims(width: usize, height: usize) -> Result<()> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimension {
                what: "image side",
                value: width.min(height),
                allowed: ">= 1",
            });
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Interleaved RGB values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Retags the color space without touching pixel data.
    pub fn with_space(mut self, space: ColorSpace) -> Self {
        self.space = space;
        self
    }

    /// Largest per-channel absolute difference against another image.
    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f32 {
        assert_eq!(self.data.len(), other.data.len(), "image size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Single-channel field Γ ∈ [0,1]^{H×W}, aligned to a content image. Each
/// value is the pixel's coordinate along a 4D LUT's context axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ContextMap {
    /// Wraps raw values; each must be finite and is clamped to `[0,1]`.
    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimension {
                what: "context map side",
                value: width.min(height),
                allowed: ">= 1",
            });
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "context values length {} != {width}*{height}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite context value {v}")));
        }
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Constant-valued map.
    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::from_values(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// True when this map is aligned to `img` pixel-for-pixel.
    pub fn matches(&self, img: &ImageBuffer) -> bool {
        self.width == img.width() && self.height == img.height()
    }
}
