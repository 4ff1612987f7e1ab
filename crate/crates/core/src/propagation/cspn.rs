//! Fixed 3×3 local propagation, the baseline the graph engine generalizes.

use crate::error::{Error, Result};
use crate::grid::DepthGrid;

/// Kernel slot of offset `(dy, dx)`, each in `-1..=1`. Slot 4 is the pixel itself.
#[inline]
pub fn kernel_slot(dy: isize, dx: isize) -> usize {
    ((dy + 1) * 3 + (dx + 1)) as usize
}

pub const SELF_SLOT: usize = 4;

/// Per-pixel 3×3 affinities, stored pixel-major with 9 slots per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityKernelField {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl AffinityKernelField {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != height * width * 9 {
            return Err(Error::Shape(format!(
                "kernel field {height}x{width} needs {} weights, got {}",
                height * width * 9,
                weights.len()
            )));
        }
        if let Some(index) = weights.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(AffinityKernelField { height, width, weights })
    }

    /// Normalize raw affinities: the eight neighbor weights are divided by
    /// the sum of their absolute values and the self weight becomes the
    /// residual, so every pixel's weights sum to one.
    pub fn normalized(height: usize, width: usize, raw: &[f64]) -> Result<Self> {
        let mut field = Self::new(height, width, raw.to_vec())?;
        for px in field.weights.chunks_exact_mut(9) {
            let abs_sum: f64 = px
                .iter()
                .enumerate()
                .filter(|&(s, _)| s != SELF_SLOT)
                .map(|(_, w)| w.abs())
                .sum();
            let mut nbr_sum = 0.0;
            for (s, w) in px.iter_mut().enumerate() {
                if s == SELF_SLOT {
                    continue;
                }
                *w = if abs_sum > 0.0 { *w / abs_sum } else { 0.0 };
                nbr_sum += *w;
            }
            px[SELF_SLOT] = 1.0 - nbr_sum;
        }
        Ok(field)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * 9;
        &self.weights[i..i + 9]
    }
}

/// One local propagation step. Weights of neighbors that fall outside the
/// image are added to the self weight; negative results clamp to 0.
pub fn cspn_step(depth: &DepthGrid, kern: &AffinityKernelField) -> Result<DepthGrid> {
    let (h, w) = (depth.height(), depth.width());
    if kern.height != h || kern.width != w {
        return Err(Error::Shape(format!(
            "kernel field {}x{} vs depth {h}x{w}",
            kern.height, kern.width
        )));
    }
    let mut out = vec![0.0; h * w];
    crate::par::for_each_chunk_mut(&mut out, w, |row, line| {
        for (col, slot) in line.iter_mut().enumerate() {
            let a = kern.pixel(row, col);
            let mut self_w = a[SELF_SLOT];
            let mut acc = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let s = kernel_slot(dy, dx);
                    let (y, x) = (row as isize + dy, col as isize + dx);
                    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        self_w += a[s];
                    } else {
                        acc += a[s] * depth.get(y as usize, x as usize);
                    }
                }
            }
            *slot = self_w * depth.get(row, col) + acc;
        }
    });
    DepthGrid::from_clamped(h, w, out)
}
