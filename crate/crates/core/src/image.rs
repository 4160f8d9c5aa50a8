use crate::tensor::Tensor;
use crate::{Error, Result};

/// Single-channel image with row-major pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGray {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageGray {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("image size {height}x{width} is empty")));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain(format!(
                "pixel {i} has value {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image after clamping every value into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.iter().any(|p| p.is_nan()) {
            return Err(Error::Domain("NaN pixel".into()));
        }
        Self::new(height, width, pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect())
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn same_size(&self, other: &ImageGray) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// The image as a `[1, 1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, 1, self.height, self.width], self.pixels.clone())
    }

    /// Interprets a tensor with `H*W` elements as an image, clamping values.
    pub fn from_tensor(t: &Tensor, height: usize, width: usize) -> Result<Self> {
        Self::from_clamped(height, width, t.data().to_vec())
    }
}
