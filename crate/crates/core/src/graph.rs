//! Patch-graph construction: feature grid to node sequence and back.
//!
//! A `C = P_h·P_w` channel grid is cut into non-overlapping patches. Local
//! offset `(i, j)` of a patch maps to node element `l = i·P_w + j`, which is
//! read from channel `l` at that offset's own pixel. Scattering writes
//! element `l` back to the same pixel, so gather and scatter are exact
//! inverses on channel-replicated planes.

use crate::error::{Error, Result};
use crate::geometry::{backproject, knn, NeighborTable, Point3};
use crate::grid::{CameraIntrinsics, DepthGrid, FeatureGrid};
use crate::matrix::Matrix;

/// Depth floor used when back-projecting patch centers.
pub const MIN_CENTER_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub patch_h: usize,
    pub patch_w: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl PatchLayout {
    pub fn new(height: usize, width: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        if height == 0 || width == 0 || !height.is_multiple_of(patch_h) || !width.is_multiple_of(patch_w) {
            return Err(Error::Shape(format!(
                "image {height}x{width} is not divisible into {patch_h}x{patch_w} patches"
            )));
        }
        Ok(PatchLayout {
            patch_h,
            patch_w,
            grid_h: height / patch_h,
            grid_w: width / patch_w,
        })
    }

    pub fn height(&self) -> usize {
        self.grid_h * self.patch_h
    }

    pub fn width(&self) -> usize {
        self.grid_w * self.patch_w
    }

    pub fn n_nodes(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Elements per patch, which is also the channel count graph construction expects.
    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w
    }

    /// Node feature length: patch plus 3D position.
    pub fn feature_len(&self) -> usize {
        self.patch_len() + 3
    }

    /// Top-left pixel `(row, col)` of node `n`.
    #[inline]
    pub fn origin(&self, n: usize) -> (usize, usize) {
        ((n / self.grid_w) * self.patch_h, (n % self.grid_w) * self.patch_w)
    }

    /// Flat pixel index of element `l` of node `n`.
    #[inline]
    pub fn pixel_of(&self, n: usize, l: usize) -> usize {
        let (y, x) = self.origin(n);
        (y + l / self.patch_w) * self.width() + x + l % self.patch_w
    }

    /// Node and element owning flat pixel index `idx`.
    #[inline]
    pub fn node_of(&self, idx: usize) -> (usize, usize) {
        let (y, x) = (idx / self.width(), idx % self.width());
        let n = (y / self.patch_h) * self.grid_w + x / self.patch_w;
        (n, (y % self.patch_h) * self.patch_w + x % self.patch_w)
    }

    /// Continuous pixel coordinate of the patch center.
    pub fn center(&self, n: usize) -> (f64, f64) {
        let (y, x) = self.origin(n);
        (
            y as f64 + (self.patch_h as f64 - 1.0) / 2.0,
            x as f64 + (self.patch_w as f64 - 1.0) / 2.0,
        )
    }

    fn check_dims(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if height != self.height() || width != self.width() {
            return Err(Error::Shape(format!(
                "{what} is {height}x{width}, layout expects {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// Node features (`N × L`), their unscaled 3D positions, and the current topology.
#[derive(Debug, Clone)]
pub struct PatchGraph {
    pub layout: PatchLayout,
    pub features: Matrix,
    pub positions: Vec<Point3>,
    pub neighbors: NeighborTable,
    pub intr: CameraIntrinsics,
}

impl PatchGraph {
    pub fn new(
        layout: PatchLayout,
        features: Matrix,
        positions: Vec<Point3>,
        neighbors: NeighborTable,
        intr: CameraIntrinsics,
    ) -> Result<Self> {
        let n = layout.n_nodes();
        if features.cols() != layout.feature_len() {
            return Err(Error::Shape(format!(
                "node feature length {} != patch length + 3 = {}",
                features.cols(),
                layout.feature_len()
            )));
        }
        if features.rows() != n || positions.len() != n || neighbors.n_nodes() != n {
            return Err(Error::Shape(format!(
                "graph has {n} nodes but features/positions/neighbors give {}/{}/{}",
                features.rows(),
                positions.len(),
                neighbors.n_nodes()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(PatchGraph {
            layout,
            features,
            positions,
            neighbors,
            intr,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.layout.n_nodes()
    }

    pub fn feature_len(&self) -> usize {
        self.features.cols()
    }
}

pub fn gather_patches(feat: &FeatureGrid, layout: &PatchLayout) -> Result<Matrix> {
    layout.check_dims(feat.height(), feat.width(), "feature grid")?;
    let c = layout.patch_len();
    if feat.channels() != c {
        return Err(Error::Shape(format!(
            "feature grid has {} channels, {}x{} patches need {c}",
            feat.channels(),
            layout.patch_h,
            layout.patch_w
        )));
    }
    let n = layout.n_nodes();
    let mut out = Matrix::zeros(n, c);
    for node in 0..n {
        let (y, x) = layout.origin(node);
        let row = out.row_mut(node);
        for (l, slot) in row.iter_mut().enumerate() {
            *slot = feat.get(y + l / layout.patch_w, x + l % layout.patch_w, l);
        }
    }
    Ok(out)
}

/// Place node values at their pixels without clamping.
pub fn scatter_raw(nodes: &Matrix, layout: &PatchLayout) -> Result<Vec<f64>> {
    if nodes.cols() != layout.patch_len() || nodes.rows() != layout.n_nodes() {
        return Err(Error::Shape(format!(
            "node matrix {}x{} does not match layout ({} nodes of {})",
            nodes.rows(),
            nodes.cols(),
            layout.n_nodes(),
            layout.patch_len()
        )));
    }
    let mut out = vec![0.0; layout.height() * layout.width()];
    for node in 0..nodes.rows() {
        for (l, &v) in nodes.row(node).iter().enumerate() {
            out[layout.pixel_of(node, l)] = v;
        }
    }
    Ok(out)
}

/// Graph-to-image readout. Negative node values become 0 (no depth).
pub fn scatter_patches(nodes: &Matrix, layout: &PatchLayout) -> Result<DepthGrid> {
    let raw = scatter_raw(nodes, layout)?;
    DepthGrid::from_clamped(layout.height(), layout.width(), raw)
}

/// Back-projected patch centers, using each patch's mean depth (floored at
/// [`MIN_CENTER_DEPTH`]).
pub fn patch_positions(depth: &DepthGrid, layout: &PatchLayout, intr: &CameraIntrinsics) -> Result<Vec<Point3>> {
    layout.check_dims(depth.height(), depth.width(), "depth readout")?;
    let c = layout.patch_len() as f64;
    (0..layout.n_nodes())
        .map(|n| {
            let mean = (0..layout.patch_len())
                .map(|l| depth.values()[layout.pixel_of(n, l)])
                .sum::<f64>()
                / c;
            let (p, q) = layout.center(n);
            backproject(p, q, mean.max(MIN_CENTER_DEPTH), intr)
        })
        .collect()
}

/// Append scaled positions to node patch values: rows become `[patch ‖ (u,v,w)/scale]`.
pub fn append_positions(nodes: &Matrix, positions: &[Point3], scale: f64) -> Result<Matrix> {
    if positions.len() != nodes.rows() {
        return Err(Error::Shape("position count differs from node count".into()));
    }
    let l = nodes.cols() + 3;
    let mut out = Matrix::zeros(nodes.rows(), l);
    for (n, pos) in positions.iter().enumerate() {
        let row = out.row_mut(n);
        row[..l - 3].copy_from_slice(nodes.row(n));
        row[l - 3] = pos.u / scale;
        row[l - 2] = pos.v / scale;
        row[l - 1] = pos.w / scale;
    }
    Ok(out)
}

pub fn embed_positions(
    nodes: &Matrix,
    depth_readout: &DepthGrid,
    layout: &PatchLayout,
    intr: &CameraIntrinsics,
    scale: f64,
) -> Result<Matrix> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "position scale must be positive, got {scale}"
        )));
    }
    if nodes.cols() != layout.patch_len() || nodes.rows() != layout.n_nodes() {
        return Err(Error::Shape("node matrix does not match layout".into()));
    }
    let positions = patch_positions(depth_readout, layout, intr)?;
    append_positions(nodes, &positions, scale)
}

pub fn rebuild_topology(graph: &PatchGraph, k: usize) -> Result<NeighborTable> {
    knn(&graph.positions, k)
}
