//! Dense grids for depth, validity masks and multi-channel features.
//!
//! All grids are row-major with row 0 at the top. A depth of exactly `0.0`
//! marks a pixel without a measurement.

mod io;

pub use io::{read_pfm, write_pfm, write_pgm16, Plane, RawPlane};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthGrid {
    /// Build a grid, rejecting non-finite or negative entries.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "depth grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if value < 0.0 {
                return Err(Error::NegativeDepth { index, value });
            }
        }
        Ok(DepthGrid { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        DepthGrid {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Clamp negatives to zero instead of rejecting them. Non-finite values
    /// are still an error.
    pub fn from_clamped(height: usize, width: usize, mut values: Vec<f64>) -> Result<Self> {
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn valid_mask(&self) -> Mask {
        valid_mask(self)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn same_shape(&self, other: &DepthGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_shape(&self, other: &DepthGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }
}

/// Boolean grid, `true` where a depth measurement exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col]
    }
}

pub fn valid_mask(grid: &DepthGrid) -> Mask {
    Mask {
        height: grid.height,
        width: grid.width,
        values: grid.values.iter().map(|&v| v > 0.0).collect(),
    }
}

/// H×W×C grid stored pixel-major: channel index varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature grid {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    values.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, values)
    }

    /// Copy one depth plane into every channel.
    pub fn replicate(plane: &DepthGrid, channels: usize) -> Self {
        let mut values = Vec::with_capacity(plane.len() * channels);
        for &v in plane.values() {
            values.extend(std::iter::repeat_n(v, channels));
        }
        FeatureGrid {
            height: plane.height(),
            width: plane.width(),
            channels,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    /// Extract a single channel as a depth plane (negatives clamped).
    pub fn channel_plane(&self, channel: usize) -> Result<DepthGrid> {
        if channel >= self.channels {
            return Err(Error::InvalidArgument(format!(
                "channel {channel} out of range for {} channels",
                self.channels
            )));
        }
        let values = self
            .values
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect();
        DepthGrid::from_clamped(self.height, self.width, values)
    }
}

/// Pinhole intrinsics. `p` indexes image rows and `q` image columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fp: f64,
    pub fq: f64,
    pub cp: f64,
    pub cq: f64,
}

impl CameraIntrinsics {
    pub fn new(fp: f64, fq: f64, cp: f64, cq: f64) -> Result<Self> {
        if !(fp > 0.0 && fq > 0.0) || !fp.is_finite() || !fq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fp={fp} fq={fq}"
            )));
        }
        if !cp.is_finite() || !cq.is_finite() {
            return Err(Error::InvalidArgument("principal point must be finite".into()));
        }
        Ok(CameraIntrinsics { fp, fq, cp, cq })
    }

    /// Centered principal point with equal focal lengths, for a `height`×`width` image.
    pub fn centered(height: usize, width: usize, focal: f64) -> Self {
        CameraIntrinsics {
            fp: focal,
            fq: focal,
            cp: (height as f64 - 1.0) / 2.0,
            cq: (width as f64 - 1.0) / 2.0,
        }
    }
}
