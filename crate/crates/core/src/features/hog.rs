use std::f64::consts::PI;

use crate::datagen::Frame;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HogConfig {
    pub cell: usize,
    pub bins: usize,
    /// Block side in cells; blocks advance one cell at a time.
    pub block: usize,
    pub eps: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell: 8,
            bins: 9,
            block: 2,
            eps: 1e-6,
        }
    }
}

impl HogConfig {
    /// Output width for a `width`×`height` image.
    pub fn width(&self, width: usize, height: usize) -> Result<usize> {
        let (cx, cy) = match self.cell {
            0 => (0, 0),
            c => (width / c, height / c),
        };
        if self.block == 0 || cx < self.block || cy < self.block {
            return Err(Error::invalid(
                "hog",
                format!(
                    "{width}x{height} image is smaller than one {0}x{0}-cell block",
                    self.block
                ),
            ));
        }
        Ok((cx - self.block + 1) * (cy - self.block + 1) * self.block * self.block * self.bins)
    }
}

/// Unnormalized per-cell orientation histograms, cell-row-major, each
/// `cfg.bins` wide.
///
/// Bin `i` is centered on `i * 180° / bins`, so a purely horizontal gradient
/// votes entirely into bin 0. Votes are split linearly between the two
/// nearest bin centers and weighted by gradient magnitude.
pub fn cell_histograms(img: &Frame, cfg: &HogConfig) -> Result<Vec<f64>> {
    cfg.width(img.width(), img.height())?;
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = (w / cfg.cell, h / cfg.cell);
    let at = |x: isize, y: isize| img.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize);
    let bin_width = PI / cfg.bins as f64;
    let mut hist = vec![0.0; cx * cy * cfg.bins];
    for y in 0..cy * cfg.cell {
        for x in 0..cx * cfg.cell {
            let (xi, yi) = (x as isize, y as isize);
            let gx = at(xi + 1, yi) - at(xi - 1, yi);
            let gy = at(xi, yi + 1) - at(xi, yi - 1);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(PI);
            let pos = theta / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % cfg.bins;
            let hi = (lo + 1) % cfg.bins;
            let cell = (y / cfg.cell) * cx + x / cfg.cell;
            hist[cell * cfg.bins + lo] += mag * (1.0 - frac);
            hist[cell * cfg.bins + hi] += mag * frac;
        }
    }
    Ok(hist)
}

/// Block-normalized HOG descriptor.
pub fn hog_features(img: &Frame, cfg: &HogConfig) -> Result<Vec<f64>> {
    let width = cfg.width(img.width(), img.height())?;
    let hist = cell_histograms(img, cfg)?;
    let (cx, cy) = (img.width() / cfg.cell, img.height() / cfg.cell);
    let mut out = Vec::with_capacity(width);
    let mut block = Vec::with_capacity(cfg.block * cfg.block * cfg.bins);
    for by in 0..=cy - cfg.block {
        for bx in 0..=cx - cfg.block {
            block.clear();
            for dy in 0..cfg.block {
                for dx in 0..cfg.block {
                    let cell = (by + dy) * cx + bx + dx;
                    block.extend_from_slice(&hist[cell * cfg.bins..(cell + 1) * cfg.bins]);
                }
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + cfg.eps * cfg.eps).sqrt();
            out.extend(block.iter().map(|v| v / norm));
        }
    }
    debug_assert_eq!(out.len(), width);
    Ok(out)
}
