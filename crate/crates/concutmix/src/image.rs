//! Dense image tensor shared by the dataset and augmentation layers.
//!
//! Pixels are stored row-major, channel-interleaved: index `(y * width + x) * channels + c`.
//! Values live in `[0, 1]` and are `f32`, matching the on-disk dataset format; model code
//! widens to `f64` at batch assembly.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                width * height * channels
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    /// All-zero image of the given shape.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_channel_interleaved() {
        let mut img = Image::zeros(3, 2, 2).unwrap();
        let (x, y, c) = (1, 1, 1);
        img.set(x, y, c, 0.5);
        assert_eq!(img.pixels()[(y * 3 + x) * 2 + c], 0.5);
        assert_eq!(img.get(x, y, c), 0.5);
    }

    #[test]
    fn rejects_wrong_buffer_length() {
        assert!(Image::new(2, 2, 1, vec![0.0; 5]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
    }
}
