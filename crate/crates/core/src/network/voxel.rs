use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dense::DenseTensor;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::sparse::{Coord, SparseTensor};

/// Points as a flat row-major array of `(x, y, z, extras...)` in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    num_extra: usize,
    values: Vec<f64>,
}

impl PointCloud {
    pub fn new(num_extra: usize, values: Vec<f64>) -> Result<Self> {
        if !values.len().is_multiple_of(3 + num_extra) {
            return Err(shape_err!("{} values do not form points of width {}", values.len(), 3 + num_extra));
        }
        Ok(Self { num_extra, values })
    }

    pub fn empty(num_extra: usize) -> Self {
        Self { num_extra, values: Vec::new() }
    }

    pub fn num_extra(&self) -> usize {
        self.num_extra
    }

    pub fn width(&self) -> usize {
        3 + self.num_extra
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.width()..(i + 1) * self.width()]
    }

    pub fn push(&mut self, point: &[f64]) -> Result<()> {
        if point.len() != self.width() {
            return Err(shape_err!("point of width {} pushed into cloud of width {}", point.len(), self.width()));
        }
        self.values.extend_from_slice(point);
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Width of the per-voxel feature vector produced by [`voxelize_dynamic`].
    pub fn feature_width(&self) -> usize {
        point_feature_width(self.num_extra)
    }
}

/// `(x, y, z, extras..., dx, dy, dz)`.
pub fn point_feature_width(num_extra: usize) -> usize {
    6 + num_extra
}

/// Axis-aligned voxel grid, all arrays in `(x, y, z)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGridSpec {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub voxel_size: [f64; 3],
}

const DIM_TOLERANCE: f64 = 1e-6;

impl VoxelGridSpec {
    pub fn waymo() -> Self {
        Self { range_min: [-75.2, -75.2, -2.0], range_max: [75.2, 75.2, 4.0], voxel_size: [0.08, 0.08, 0.15] }
    }

    pub fn nuscenes() -> Self {
        Self { range_min: [-54.0, -54.0, -5.0], range_max: [54.0, 54.0, 3.0], voxel_size: [0.075, 0.075, 0.2] }
    }

    /// Pillar grid over the Waymo range.
    pub fn pillars() -> Self {
        Self { voxel_size: [0.32, 0.32, 6.0], ..Self::waymo() }
    }

    /// 64 x 64 x 16 grid for small experiments.
    pub fn desk() -> Self {
        Self { range_min: [-25.6, -25.6, -2.0], range_max: [25.6, 25.6, 4.0], voxel_size: [0.8, 0.8, 0.375] }
    }

    /// Cell counts along `(x, y, z)`. Ratios within 1e-6 of an integer are
    /// rounded to it; others are floored.
    pub fn dims(&self) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let (lo, hi, s) = (self.range_min[a], self.range_max[a], self.voxel_size[a]);
            if !(lo.is_finite() && hi.is_finite() && s.is_finite()) || hi <= lo || s <= 0.0 {
                return Err(Error::Config(format!("voxel grid axis {a}: range [{lo}, {hi}) with size {s} is invalid")));
            }
            let r = (hi - lo) / s;
            let n = if (r - r.round()).abs() <= DIM_TOLERANCE { r.round() } else { r.floor() };
            if n < 1.0 || n > i32::MAX as f64 {
                return Err(Error::Config(format!("voxel grid axis {a} derives {n} cells")));
            }
            out[a] = n as usize;
        }
        Ok(out)
    }

    /// Spatial shape of voxelized tensors, `(z, y, x)`.
    pub fn grid_shape(&self) -> Result<Vec<usize>> {
        let [x, y, z] = self.dims()?;
        Ok(vec![z, y, x])
    }

    /// Voxel index of `p` along each axis, or `None` if outside the grid.
    pub fn locate(&self, p: &[f64], dims: &[usize; 3]) -> Option<[i32; 3]> {
        let mut idx = [0i32; 3];
        for a in 0..3 {
            let (lo, s, n) = (self.range_min[a], self.voxel_size[a], dims[a]);
            if !(p[a] >= lo && p[a] < self.range_max[a]) {
                return None;
            }
            let r = (p[a] - lo) / s;
            let mut i = r.floor();
            if i >= n as f64 {
                // Rounding can push a point just below the upper edge onto
                // the next cell; anything further out is past the last cell.
                if r - n as f64 > 4.0 * f64::EPSILON * r {
                    return None;
                }
                i = n as f64 - 1.0;
            }
            idx[a] = i.max(0.0) as i32;
        }
        Some(idx)
    }
}

/// Result of voxelizing a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Voxelized<T> {
    pub tensor: SparseTensor<T>,
    pub points_kept: usize,
    pub dropped_out_of_range: usize,
    pub dropped_nonfinite: usize,
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Dynamic voxelization with mean pooling and no per-voxel point cap.
///
/// Every point inside the half-open range contributes the feature vector
/// `(x, y, z, extras..., offset from its voxel center)`. Points are placed
/// in batch `batch`; the tensor has `batch + 1` batch entries and spatial
/// shape `(z, y, x)`. Points with non-finite values are dropped and counted.
///
/// Within a voxel the points are summed in the order of their feature
/// vectors, so the result does not depend on input point order.
pub fn voxelize_dynamic<T: Scalar>(pc: &PointCloud, spec: &VoxelGridSpec, batch: usize) -> Result<Voxelized<T>> {
    let dims = spec.dims()?;
    let shape = vec![dims[2], dims[1], dims[0]];
    let width = pc.feature_width();
    let b = i32::try_from(batch).map_err(|_| Error::Config(format!("batch index {batch} too large")))?;

    let mut keys: Vec<(Coord, usize)> = Vec::with_capacity(pc.len());
    let mut feats = vec![0.0f64; pc.len() * width];
    let (mut nonfinite, mut outside) = (0, 0);
    for i in 0..pc.len() {
        let p = pc.point(i);
        if p.iter().any(|v| !v.is_finite()) {
            nonfinite += 1;
            continue;
        }
        let Some(idx) = spec.locate(p, &dims) else {
            outside += 1;
            continue;
        };
        let row = &mut feats[keys.len() * width..(keys.len() + 1) * width];
        row[..p.len()].copy_from_slice(p);
        for a in 0..3 {
            let center = spec.range_min[a] + (idx[a] as f64 + 0.5) * spec.voxel_size[a];
            row[p.len() + a] = p[a] - center;
        }
        keys.push((Coord::new(b, &[idx[2], idx[1], idx[0]]), keys.len()));
    }
    let kept = keys.len();
    let row = |k: usize| &feats[k * width..(k + 1) * width];
    keys.sort_by(|(ca, ia), (cb, ib)| ca.cmp(cb).then_with(|| cmp_rows(row(*ia), row(*ib))));

    let mut coords = Vec::new();
    let mut out = Vec::new();
    let mut sum = vec![0.0f64; width];
    let mut start = 0;
    while start < keys.len() {
        let coord = keys[start].0;
        let mut end = start;
        sum.iter_mut().for_each(|s| *s = 0.0);
        while end < keys.len() && keys[end].0 == coord {
            for (s, v) in sum.iter_mut().zip(row(keys[end].1)) {
                *s += v;
            }
            end += 1;
        }
        let n = (end - start) as f64;
        coords.push(coord);
        out.extend(sum.iter().map(|s| T::from_wide(s / n)));
        start = end;
    }
    let tensor = SparseTensor::new(coords, out, shape, batch + 1, width)?;
    Ok(Voxelized { tensor, points_kept: kept, dropped_out_of_range: outside, dropped_nonfinite: nonfinite })
}

/// Folds the vertical axis of a `(z, y, x)` tensor into channels: dense
/// output `(B, C * D, H, W)` with source `(c, z)` at channel `z * C + c`.
pub fn bev_compress<T: Scalar>(t: &SparseTensor<T>) -> Result<DenseTensor<T>> {
    if t.ndim() != 3 {
        return Err(shape_err!("BEV compression needs a 3-d tensor, got {}-d", t.ndim()));
    }
    let (c, s) = (t.channels(), t.spatial_shape());
    let (d, h, w) = (s[0], s[1], s[2]);
    let mut out = DenseTensor::zeros(vec![t.batch_size(), c * d, h, w]);
    for (i, coord) in t.coords().iter().enumerate() {
        let [z, y, x] = [0, 1, 2].map(|a| coord.spatial()[a] as usize);
        let b = coord.batch() as usize;
        for (ch, &v) in t.row(i).iter().enumerate() {
            out.set(&[b, z * c + ch, y, x], v);
        }
    }
    Ok(out)
}
