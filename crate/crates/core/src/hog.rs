//! Histograms of oriented gradients.
//!
//! Gradients use the centred `(-1, 0, 1)` kernel and its transpose with
//! replicate padding. Orientations are unsigned (`[0, 180)` degrees) and
//! each pixel votes its magnitude into the two nearest bin centres with
//! linear weights, wrapping around 180. Cells are non-overlapping squares;
//! partial cells at the right and bottom edges are dropped. Blocks of
//! `block_size x block_size` cells slide by `block_stride` cells and are
//! L2-normalised.
//!
//! Descriptor order: blocks row-major (top to bottom, left to right), within
//! a block its cells row-major, within a cell the bins in increasing angle.

use serde::{Deserialize, Serialize};

use crate::dataset::Frame;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    pub cell_size: usize,
    pub block_size: usize,
    pub num_bins: usize,
    pub block_stride: usize,
    pub normalization_epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell_size: 8,
            block_size: 2,
            num_bins: 9,
            block_stride: 1,
            normalization_epsilon: 1e-12,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size < 2
            || self.num_bins < 2
            || self.block_size < 1
            || self.block_stride < 1
            || !(self.normalization_epsilon > 0.0)
        {
            return Err(Error::Config(format!("invalid HOG configuration {self:?}")));
        }
        Ok(())
    }

    /// Descriptor layout for a frame of the given size.
    pub fn layout(&self, height: usize, width: usize) -> Result<HogLayout> {
        self.validate()?;
        let (cells_y, cells_x) = (height / self.cell_size, width / self.cell_size);
        if cells_y < self.block_size || cells_x < self.block_size {
            return Err(Error::Dimension(format!(
                "{height}x{width} frame holds {cells_y}x{cells_x} cells, fewer than one {0}x{0} block",
                self.block_size
            )));
        }
        Ok(HogLayout {
            blocks_x: (cells_x - self.block_size) / self.block_stride + 1,
            blocks_y: (cells_y - self.block_size) / self.block_stride + 1,
            cells_per_block: self.block_size * self.block_size,
            bins: self.num_bins,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HogLayout {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub cells_per_block: usize,
    pub bins: usize,
}

impl HogLayout {
    pub fn len(&self) -> usize {
        self.blocks_x * self.blocks_y * self.cells_per_block * self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(blocks across, blocks down, cells per block, bins)`; `(19, 14, 4, 9)`
    /// for a 160x120 frame with the default configuration.
    pub fn tuple(&self) -> [u32; 4] {
        [
            self.blocks_x as u32,
            self.blocks_y as u32,
            self.cells_per_block as u32,
            self.bins as u32,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub magnitude: Vec<f64>,
    /// Degrees in `[0, 180)`.
    pub orientation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
    pub layout: HogLayout,
}

pub fn compute_gradients(frame: &Frame) -> Result<GradientField> {
    let (h, w) = (frame.height, frame.width);
    if h < 3 || w < 3 {
        return Err(Error::Dimension(format!(
            "{h}x{w} frame is smaller than the 3x3 kernel support"
        )));
    }
    let px = |y: usize, x: usize| frame.pixels[y * w + x] as f64;
    let mut magnitude = vec![0.0; h * w];
    let mut orientation = vec![0.0; h * w];
    for y in 0..h {
        let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let dx = px(y, right) - px(y, left);
            let dy = px(down, x) - px(up, x);
            magnitude[y * w + x] = (dx * dx + dy * dy).sqrt();
            orientation[y * w + x] = unsigned_angle(dx, dy);
        }
    }
    Ok(GradientField {
        height: h,
        width: w,
        magnitude,
        orientation,
    })
}

/// Orientation of `(dx, dy)` folded into `[0, 180)` degrees.
pub fn unsigned_angle(dx: f64, dy: f64) -> f64 {
    let mut deg = dy.atan2(dx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    deg
}

/// Splits a vote at `angle` between the two nearest bin centres.
/// Returns `(lower_bin, upper_bin, upper_weight)`.
#[inline]
fn bin_vote(angle: f64, bins: usize) -> (usize, usize, f64) {
    let width = 180.0 / bins as f64;
    let pos = angle / width - 0.5;
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = (lo as isize).rem_euclid(bins as isize) as usize;
    (lo, (lo + 1) % bins, frac)
}

/// Raw (unnormalised) per-cell histograms, `cells_y x cells_x x bins`.
pub fn cell_histograms(field: &GradientField, config: &HogConfig) -> (usize, usize, Vec<f64>) {
    let cs = config.cell_size;
    let bins = config.num_bins;
    let (cells_y, cells_x) = (field.height / cs, field.width / cs);
    let mut hist = vec![0.0; cells_y * cells_x * bins];
    for y in 0..cells_y * cs {
        let cy = y / cs;
        for x in 0..cells_x * cs {
            let i = y * field.width + x;
            let m = field.magnitude[i];
            if m == 0.0 {
                continue;
            }
            let (lo, hi, frac) = bin_vote(field.orientation[i], bins);
            let cell = &mut hist[(cy * cells_x + x / cs) * bins..][..bins];
            cell[lo] += m * (1.0 - frac);
            cell[hi] += m * frac;
        }
    }
    (cells_y, cells_x, hist)
}

pub fn compute_hog(frame: &Frame, config: &HogConfig) -> Result<HogDescriptor> {
    let layout = config.layout(frame.height, frame.width)?;
    let field = compute_gradients(frame)?;
    let (_, cells_x, hist) = cell_histograms(&field, config);
    let bins = config.num_bins;
    let bs = config.block_size;
    let block_len = layout.cells_per_block * bins;
    let mut values = Vec::with_capacity(layout.len());
    for by in 0..layout.blocks_y {
        for bx in 0..layout.blocks_x {
            let start = values.len();
            for cy in 0..bs {
                for cx in 0..bs {
                    let cell = (by * config.block_stride + cy) * cells_x + bx * config.block_stride + cx;
                    values.extend_from_slice(&hist[cell * bins..(cell + 1) * bins]);
                }
            }
            let block = &mut values[start..start + block_len];
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = 1.0 / (norm + config.normalization_epsilon);
            block.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(HogDescriptor { values, layout })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_from(h: usize, w: usize, f: impl Fn(usize, usize) -> u8) -> Frame {
        let mut px = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                px.push(f(y, x));
            }
        }
        Frame::new(h, w, px)
    }

    #[test]
    fn constant_frame_has_zero_gradient_and_descriptor() {
        let f = frame_from(32, 40, |_, _| 77);
        let g = compute_gradients(&f).unwrap();
        assert!(g.magnitude.iter().all(|&m| m == 0.0));
        let d = compute_hog(&f, &HogConfig::default()).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_four_five() {
        // Centre pixel sees left=0, right=3, up=0, down=4.
        let f = frame_from(3, 3, |y, x| match (y, x) {
            (1, 2) => 3,
            (2, 1) => 4,
            _ => 0,
        });
        let g = compute_gradients(&f).unwrap();
        assert_eq!(g.magnitude[4], 5.0);
        assert!((g.orientation[4] - (4.0f64 / 3.0).atan().to_degrees()).abs() < 1e-12);
        assert!((g.orientation[4] - 53.130_102_354_155_98).abs() < 1e-9);
    }

    #[test]
    fn vertical_step_edge() {
        let f = frame_from(16, 16, |_, x| if x < 8 { 0 } else { 255 });
        let g = compute_gradients(&f).unwrap();
        let max = g.magnitude.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 255.0);
        for y in 0..16 {
            for x in 0..16 {
                let i = y * 16 + x;
                assert_eq!(g.orientation[i], 0.0);
                let expect = if x == 7 || x == 8 { 255.0 } else { 0.0 };
                assert_eq!(g.magnitude[i], expect, "({y},{x})");
            }
        }
    }

    #[test]
    fn angle_folding() {
        assert_eq!(unsigned_angle(-1.0, 0.0), 0.0);
        assert!((unsigned_angle(0.0, -1.0) - 90.0).abs() < 1e-12);
        assert!((unsigned_angle(-1.0, -1.0) - 45.0).abs() < 1e-12);
        assert!((unsigned_angle(1.0, -1.0) - 135.0).abs() < 1e-12);
    }

    #[test]
    fn bin_interpolation() {
        // Bin centres at 10, 30, ..., 170.
        assert_eq!(bin_vote(10.0, 9), (0, 1, 0.0));
        let (lo, hi, f) = bin_vote(20.0, 9);
        assert_eq!((lo, hi), (0, 1));
        assert!((f - 0.5).abs() < 1e-12);
        let (lo, hi, f) = bin_vote(5.0, 9);
        assert_eq!((lo, hi), (8, 0));
        assert!((f - 0.75).abs() < 1e-12);
        let (lo, hi, f) = bin_vote(175.0, 9);
        assert_eq!((lo, hi), (8, 0));
        assert!((f - 0.25).abs() < 1e-12);
    }

    #[test]
    fn kth_layout() {
        let l = HogConfig::default().layout(120, 160).unwrap();
        assert_eq!(l.tuple(), [19, 14, 4, 9]);
        assert_eq!(l.len(), 9576);
    }

    #[test]
    fn too_small_for_a_block() {
        let f = frame_from(12, 40, |y, x| (x * y) as u8);
        assert!(matches!(
            compute_hog(&f, &HogConfig::default()),
            Err(Error::Dimension(_))
        ));
        let tiny = frame_from(2, 8, |_, _| 0);
        assert!(matches!(compute_gradients(&tiny), Err(Error::Dimension(_))));
    }
}
