//! Occupancy grids on a lattice anchored at the origin of the frame they are
//! built in: cell `i` along an axis spans `[i·res, (i+1)·res)` and is occupied
//! when its center lies inside the solid. Two grids at the same resolution
//! built in the same frame therefore share cells and intersect by index.

use super::shapes::{Aabb, Solid};
use super::GeomError;
use crate::posediff::Pose;
use bitvec::vec::BitVec;
use nalgebra::Vector3;

pub const DEFAULT_RESOLUTION: f64 = 0.002;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub resolution: f64,
    pub min_index: [i64; 3],
    pub dims: [usize; 3],
    bits: BitVec,
}

/// Inclusive lattice index range whose cell centers may fall in `b`, widened
/// by one cell on each side.
pub(crate) fn index_range(b: &Aabb, res: f64) -> ([i64; 3], [i64; 3]) {
    let lo = std::array::from_fn(|k| (b.min[k] / res - 0.5).floor() as i64 - 1);
    let hi = std::array::from_fn(|k| (b.max[k] / res - 0.5).ceil() as i64 + 1);
    (lo, hi)
}

pub(crate) fn cell_center(idx: [i64; 3], res: f64) -> Vector3<f64> {
    Vector3::new(
        (idx[0] as f64 + 0.5) * res,
        (idx[1] as f64 + 0.5) * res,
        (idx[2] as f64 + 0.5) * res,
    )
}

impl VoxelGrid {
    pub fn empty(resolution: f64) -> Self {
        VoxelGrid {
            resolution,
            min_index: [0; 3],
            dims: [0; 3],
            bits: BitVec::new(),
        }
    }

    fn with_range(resolution: f64, lo: [i64; 3], hi: [i64; 3]) -> Self {
        let dims = std::array::from_fn(|k| (hi[k] - lo[k] + 1).max(0) as usize);
        let n = dims[0] * dims[1] * dims[2];
        VoxelGrid {
            resolution,
            min_index: lo,
            dims,
            bits: BitVec::repeat(false, n),
        }
    }

    /// World position of the grid's minimum corner.
    pub fn origin(&self) -> Vector3<f64> {
        Vector3::new(
            self.min_index[0] as f64 * self.resolution,
            self.min_index[1] as f64 * self.resolution,
            self.min_index[2] as f64 * self.resolution,
        )
    }

    pub fn voxel_volume(&self) -> f64 {
        self.resolution.powi(3)
    }

    fn offset(&self, idx: [i64; 3]) -> Option<usize> {
        let mut local = [0usize; 3];
        for k in 0..3 {
            let d = idx[k] - self.min_index[k];
            if d < 0 || d as usize >= self.dims[k] {
                return None;
            }
            local[k] = d as usize;
        }
        Some((local[0] * self.dims[1] + local[1]) * self.dims[2] + local[2])
    }

    pub fn get(&self, idx: [i64; 3]) -> bool {
        self.offset(idx).is_some_and(|o| self.bits[o])
    }

    fn set(&mut self, idx: [i64; 3]) {
        if let Some(o) = self.offset(idx) {
            self.bits.set(o, true);
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn volume(&self) -> f64 {
        self.occupied_count() as f64 * self.voxel_volume()
    }

    pub fn max_index(&self) -> [i64; 3] {
        std::array::from_fn(|k| self.min_index[k] + self.dims[k] as i64 - 1)
    }

    /// Calls `f` with the index of every occupied cell inside `[lo, hi]`.
    pub fn for_each_occupied_in(&self, lo: [i64; 3], hi: [i64; 3], mut f: impl FnMut([i64; 3])) {
        let max = self.max_index();
        let a: [i64; 3] = std::array::from_fn(|k| lo[k].max(self.min_index[k]));
        let b: [i64; 3] = std::array::from_fn(|k| hi[k].min(max[k]));
        if (0..3).any(|k| a[k] > b[k]) {
            return;
        }
        for i in a[0]..=b[0] {
            for j in a[1]..=b[1] {
                let base = self.offset([i, j, a[2]]).unwrap();
                let len = (b[2] - a[2] + 1) as usize;
                for (dk, bit) in self.bits[base..base + len].iter().enumerate() {
                    if *bit {
                        f([i, j, a[2] + dk as i64]);
                    }
                }
            }
        }
    }

    pub fn occupied_indices(&self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        self.for_each_occupied_in(self.min_index, self.max_index(), |idx| out.push(idx));
        out
    }

    /// Cell centers as `x y z` lines, for external viewers.
    pub fn to_xyz(&self) -> String {
        self.occupied_indices()
            .into_iter()
            .map(|idx| {
                let c = cell_center(idx, self.resolution);
                format!("{} {} {}\n", c.x, c.y, c.z)
            })
            .collect()
    }
}

/// Rasterizes `solid` placed at `pose`, part by part, into a grid whose
/// index range covers the posed bounds with a one-cell margin.
pub fn voxelize(solid: &Solid, pose: &Pose, resolution: f64) -> Result<VoxelGrid, GeomError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(GeomError::BadResolution(resolution));
    }
    let bounds = solid.aabb().transformed(pose);
    if solid.parts.is_empty() || bounds.is_empty() {
        return Ok(VoxelGrid::empty(resolution));
    }
    let (lo, hi) = index_range(&bounds, resolution);
    let mut grid = VoxelGrid::with_range(resolution, lo, hi);
    let inv = pose.inverse();
    for part in &solid.parts {
        let (plo, phi) = index_range(&part.aabb().transformed(pose), resolution);
        for i in plo[0]..=phi[0] {
            for j in plo[1]..=phi[1] {
                for k in plo[2]..=phi[2] {
                    let idx = [i, j, k];
                    let local = inv.transform_point(&cell_center(idx, resolution));
                    if part.contains(&local) {
                        grid.set(idx);
                    }
                }
            }
        }
    }
    Ok(grid)
}

fn same_resolution(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Number of cells occupied in both grids.
pub fn overlap_count(a: &VoxelGrid, b: &VoxelGrid) -> Result<usize, GeomError> {
    if !same_resolution(a.resolution, b.resolution) {
        return Err(GeomError::ResolutionMismatch(a.resolution, b.resolution));
    }
    let (small, big) = if a.occupied_count() <= b.occupied_count() { (a, b) } else { (b, a) };
    let mut n = 0;
    small.for_each_occupied_in(big.min_index, big.max_index(), |idx| {
        if big.get(idx) {
            n += 1;
        }
    });
    Ok(n)
}

/// Shared occupied volume of two grids (m³).
pub fn overlap_volume(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, GeomError> {
    Ok(overlap_count(a, b)? as f64 * a.voxel_volume())
}
