//! Small image buffers shared by the capture, rendering and metric paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit sRGB color image (the capture / on-disk representation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl SrgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0; 3]; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [u8; 3]) {
        self.data[y * self.width + x] = px;
    }

    /// Linear-light value of a pixel.
    pub fn linear(&self, x: usize, y: usize) -> [f32; 3] {
        let p = self.get(x, y);
        [
            srgb_to_linear(p[0]),
            srgb_to_linear(p[1]),
            srgb_to_linear(p[2]),
        ]
    }

    pub fn to_linear(&self) -> LinearImage {
        let data = self
            .data
            .iter()
            .map(|p| {
                [
                    srgb_to_linear(p[0]),
                    srgb_to_linear(p[1]),
                    srgb_to_linear(p[2]),
                ]
            })
            .collect();
        LinearImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Linear-light float RGB image (rendering and metrics representation).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, px: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![px; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [f32; 3]) {
        self.data[y * self.width + x] = px;
    }

    pub fn luminance(&self, x: usize, y: usize) -> f32 {
        let [r, g, b] = self.get(x, y);
        0.2126 * r + 0.7152 * g + 0.0722 * b
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to bounds.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (xc - x0 as f64) as f32;
        let fy = (yc - y0 as f64) as f32;
        let mut out = [0.0f32; 3];
        let (a, b, c, d) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        for i in 0..3 {
            let top = a[i] * (1.0 - fx) + b[i] * fx;
            let bot = c[i] * (1.0 - fx) + d[i] * fx;
            out[i] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Tone map to sRGB: clamp to [0,1] and apply the sRGB transfer curve.
    pub fn to_srgb(&self) -> SrgbImage {
        let data = self
            .data
            .iter()
            .map(|p| {
                [
                    linear_to_srgb(p[0]),
                    linear_to_srgb(p[1]),
                    linear_to_srgb(p[2]),
                ]
            })
            .collect();
        SrgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn ensure_same_shape(&self, other: &LinearImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Depth map in meters; 0 marks an invalid sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: f32) {
        self.data[y * self.width + x] = d;
    }
}

/// Per-depth-pixel confidence, matching the three-level sensor scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Confidence {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl Confidence {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Confidence::Low),
            1 => Ok(Confidence::Medium),
            2 => Ok(Confidence::High),
            _ => Err(Error::InvalidInput(format!(
                "confidence value {v} out of range"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidenceImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Confidence>,
}

impl ConfidenceImage {
    pub fn new(width: usize, height: usize, fill: Confidence) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Confidence {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Confidence) {
        self.data[y * self.width + x] = c;
    }
}

pub fn srgb_to_linear(v: u8) -> f32 {
    let s = v as f32 / 255.0;
    if s <= 0.04045 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f32) -> u8 {
    let l = v.clamp(0.0, 1.0);
    let s = if l <= 0.0031308 {
        l * 12.92
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round() as u8
}
