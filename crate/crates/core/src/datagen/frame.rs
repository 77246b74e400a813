use super::Dihedral;
use crate::error::{Error, Result};

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape("frame", &[height, width], &[pixels.len()]));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("frame", "intensity outside [0, 1]"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    /// Number of pixels that differ.
    pub fn diff_count(&self, other: &Frame) -> usize {
        self.pixels.iter().zip(&other.pixels).filter(|(a, b)| a != b).count()
    }

    /// Applies a symmetry of the square. Only defined for square frames.
    pub fn transformed(&self, g: Dihedral) -> Frame {
        assert_eq!(self.width, self.height, "dihedral action needs a square frame");
        let e = self.width;
        let mut out = Frame::blank(e, e);
        for y in 0..e {
            for x in 0..e {
                let (tx, ty) = g.apply(x as i32, y as i32, e as i32);
                out.set(tx as usize, ty as usize, self.get(x, y));
            }
        }
        out
    }

    /// Pixelwise maximum, used to composite sprites.
    pub fn max_with(&mut self, other: &Frame) {
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a = a.max(*b);
        }
    }
}
