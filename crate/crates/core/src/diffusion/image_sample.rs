use crate::error::{Error, Result};
use crate::tensorgrad::Tensor;

/// An image held as `[C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pixels: Tensor,
    pub source_id: String,
    pub seed: u64,
}

pub const MIN_SIDE: usize = 32;
pub const MAX_SIDE: usize = 256;

pub fn validate_image_shape(channels: usize, height: usize, width: usize) -> Result<()> {
    let side_ok = |s: usize| s.is_power_of_two() && (MIN_SIDE..=MAX_SIDE).contains(&s);
    if !(channels == 1 || channels == 3) || !side_ok(height) || !side_ok(width) {
        return Err(Error::invalid(format!(
            "image shape {channels}x{height}x{width}: need C in {{1,3}} and power-of-two sides in [{MIN_SIDE}, {MAX_SIDE}]"
        )));
    }
    Ok(())
}

impl ImageSample {
    pub fn new(pixels: Tensor, source_id: impl Into<String>, seed: u64) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 3 {
            return Err(Error::invalid(format!("image tensor must be [C, H, W], got {s:?}")));
        }
        validate_image_shape(s[0], s[1], s[2])?;
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageSample { pixels, source_id: source_id.into(), seed })
    }

    /// From a model-space tensor in `[-1, 1]`; values outside are clamped.
    pub fn from_model(t: &Tensor, source_id: impl Into<String>, seed: u64) -> Result<Self> {
        Self::new(t.map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 0.5).clamp(0.0, 1.0)), source_id, seed)
    }

    /// Model-space copy in `[-1, 1]`.
    pub fn to_model(&self) -> Tensor {
        self.pixels.map(|v| v * 2.0 - 1.0)
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels(), self.height(), self.width()]
    }

    /// Luma plane (`0.299 R + 0.587 G + 0.114 B` for colour input).
    pub fn luma(&self) -> Vec<f64> {
        let hw = self.height() * self.width();
        let d = self.pixels.data();
        if self.channels() == 1 {
            d.iter().map(|&v| v as f64).collect()
        } else {
            (0..hw)
                .map(|i| 0.299 * d[i] as f64 + 0.587 * d[hw + i] as f64 + 0.114 * d[2 * hw + i] as f64)
                .collect()
        }
    }
}
