//! Pinhole back-projection and exhaustive k-nearest-neighbor search.

use crate::error::{Error, Result};
use crate::grid::CameraIntrinsics;
use crate::par;

/// A camera-frame point in meters. `w` is the depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl Point3 {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        Point3 { u, v, w }
    }

    pub fn dist2(&self, other: &Point3) -> f64 {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        let dw = self.w - other.w;
        du * du + dv * dv + dw * dw
    }

    pub fn scaled(&self, s: f64) -> Point3 {
        Point3::new(self.u * s, self.v * s, self.w * s)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }
}

/// Lift pixel `(p, q)` (row, column) at depth `d` into the camera frame.
pub fn backproject(p: f64, q: f64, d: f64, intr: &CameraIntrinsics) -> Result<Point3> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "backprojection needs positive depth, got {d}"
        )));
    }
    Ok(Point3 {
        u: d * (p - intr.cp) / intr.fp,
        v: d * (q - intr.cq) / intr.fq,
        w: d,
    })
}

/// Inverse of [`backproject`]: returns `(p, q, d)`.
pub fn project(pt: &Point3, intr: &CameraIntrinsics) -> Result<(f64, f64, f64)> {
    if !(pt.w > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "projection needs positive w, got {}",
            pt.w
        )));
    }
    Ok((intr.cp + pt.u * intr.fp / pt.w, intr.cq + pt.v * intr.fq / pt.w, pt.w))
}

/// Per-node neighbor lists. Row `i` holds the `k` nearest other nodes,
/// ordered by (distance, index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    n_nodes: usize,
    k: usize,
    entries: Vec<usize>,
}

impl NeighborTable {
    /// Build from explicit rows, checking the table invariants.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let n_nodes = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        let mut entries = Vec::with_capacity(n_nodes * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            for (a, &j) in row.iter().enumerate() {
                if j >= n_nodes || j == i || row[..a].contains(&j) {
                    return Err(Error::InvalidArgument(format!("row {i}: invalid neighbor {j}")));
                }
            }
            entries.extend(row);
        }
        Ok(NeighborTable { n_nodes, k, entries })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.entries.chunks(self.k.max(1)).take(self.n_nodes)
    }

    /// Row `i` re-sorted by ascending node index; the summation order used
    /// by propagation.
    pub fn row_by_index(&self, i: usize) -> Vec<usize> {
        let mut r = self.row(i).to_vec();
        r.sort_unstable();
        r
    }
}

/// Exact k-NN in 3D, Euclidean metric, self excluded, ties to the lower index.
pub fn knn(points: &[Point3], k: usize) -> Result<NeighborTable> {
    let flat: Vec<f64> = points.iter().flat_map(|p| p.as_array()).collect();
    knn_flat(&flat, 3, k)
}

/// Exact k-NN over `points.len() / dim` points stored contiguously.
pub fn knn_flat(points: &[f64], dim: usize, k: usize) -> Result<NeighborTable> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "{} coordinates do not split into points of dimension {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k must satisfy 1 <= k < {n}, got {k}")));
    }
    if let Some(index) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let rows = par::map_range(n, |i| {
        let pi = &points[i * dim..(i + 1) * dim];
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let pj = &points[j * dim..(j + 1) * dim];
                let d2: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, j)
            })
            .collect();
        let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_key);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_key);
        cand.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
    });
    Ok(NeighborTable {
        n_nodes: n,
        k,
        entries: rows.into_iter().flatten().collect(),
    })
}
