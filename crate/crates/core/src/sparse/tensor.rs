use crate::dense::DenseTensor;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::sparse::coord::{Coord, MAX_SPATIAL};

/// Coordinate list plus an `N x C` row-major feature matrix over a grid of
/// `spatial_shape` cells per batch.
///
/// Coordinates are kept strictly increasing, so they are duplicate free and
/// feature row `i` belongs to `coords[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor<T> {
    coords: Vec<Coord>,
    features: Vec<T>,
    spatial_shape: Vec<usize>,
    batch_size: usize,
    channels: usize,
}

pub(crate) fn check_grid(spatial_shape: &[usize], batch_size: usize, channels: usize) -> Result<()> {
    if !(2..=MAX_SPATIAL).contains(&spatial_shape.len()) {
        return Err(Error::InvalidTensor(format!(
            "dimensionality {} not in {{2, 3}}",
            spatial_shape.len()
        )));
    }
    if spatial_shape.iter().any(|&s| s == 0 || s > i32::MAX as usize) {
        return Err(Error::InvalidTensor(format!("spatial shape {spatial_shape:?} out of range")));
    }
    if batch_size == 0 || batch_size > i32::MAX as usize {
        return Err(Error::InvalidTensor(format!("batch size {batch_size} out of range")));
    }
    if channels == 0 {
        return Err(Error::InvalidTensor("channel count must be positive".into()));
    }
    Ok(())
}

impl<T: Scalar> SparseTensor<T> {
    /// Builds a tensor from canonically sorted coordinates.
    pub fn new(
        coords: Vec<Coord>,
        features: Vec<T>,
        spatial_shape: Vec<usize>,
        batch_size: usize,
        channels: usize,
    ) -> Result<Self> {
        check_grid(&spatial_shape, batch_size, channels)?;
        if features.len() != coords.len() * channels {
            return Err(shape_err!(
                "{} coordinates x {} channels needs {} features, got {}",
                coords.len(),
                channels,
                coords.len() * channels,
                features.len()
            ));
        }
        for (i, c) in coords.iter().enumerate() {
            check_bounds(c, &spatial_shape, batch_size)?;
            if i > 0 {
                let prev = &coords[i - 1];
                if prev == c {
                    return Err(Error::DuplicateCoordinate(*c));
                }
                if prev > c {
                    return Err(Error::InvalidTensor(format!(
                        "coordinates not sorted at row {i}: {prev} > {c}"
                    )));
                }
            }
        }
        Ok(Self { coords, features, spatial_shape, batch_size, channels })
    }

    /// Builds a tensor from rows in any order, sorting them canonically.
    pub fn from_unsorted(
        coords: Vec<Coord>,
        features: Vec<T>,
        spatial_shape: Vec<usize>,
        batch_size: usize,
        channels: usize,
    ) -> Result<Self> {
        if features.len() != coords.len() * channels {
            return Err(shape_err!(
                "{} coordinates x {} channels needs {} features, got {}",
                coords.len(),
                channels,
                coords.len() * channels,
                features.len()
            ));
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&i| coords[i]);
        let sorted_coords: Vec<Coord> = order.iter().map(|&i| coords[i]).collect();
        let mut sorted_features = Vec::with_capacity(features.len());
        for &i in &order {
            sorted_features.extend_from_slice(&features[i * channels..(i + 1) * channels]);
        }
        Self::new(sorted_coords, sorted_features, spatial_shape, batch_size, channels)
    }

    pub fn empty(spatial_shape: Vec<usize>, batch_size: usize, channels: usize) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), spatial_shape, batch_size, channels)
    }

    /// Replaces the feature matrix, keeping the coordinate set.
    pub fn with_features(&self, features: Vec<T>, channels: usize) -> Result<Self> {
        if channels == 0 || features.len() != self.coords.len() * channels {
            return Err(shape_err!(
                "feature matrix of {} values does not fit {} rows x {} channels",
                features.len(),
                self.coords.len(),
                channels
            ));
        }
        Ok(Self {
            coords: self.coords.clone(),
            features,
            spatial_shape: self.spatial_shape.clone(),
            batch_size: self.batch_size,
            channels,
        })
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [T] {
        &mut self.features
    }

    pub fn into_features(self) -> Vec<T> {
        self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.channels;
        &mut self.features[i * c..(i + 1) * c]
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.spatial_shape
    }

    pub fn ndim(&self) -> usize {
        self.spatial_shape.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Fraction of grid cells not occupied by an active coordinate.
    pub fn sparsity(&self) -> f64 {
        let cells = self.batch_size as f64 * self.spatial_shape.iter().map(|&s| s as f64).product::<f64>();
        1.0 - self.coords.len() as f64 / cells
    }

    /// Scatters the rows into a dense `(batch, C, spatial...)` tensor.
    pub fn to_dense(&self) -> DenseTensor<T> {
        let mut shape = vec![self.batch_size, self.channels];
        shape.extend_from_slice(&self.spatial_shape);
        let mut out = DenseTensor::zeros(shape);
        let plane: usize = self.spatial_shape.iter().product();
        let c = self.channels;
        let data = out.data_mut();
        for (i, coord) in self.coords.iter().enumerate() {
            let cell = spatial_linear(coord, &self.spatial_shape);
            let base = coord.batch() as usize * c * plane + cell;
            for ch in 0..c {
                data[base + ch * plane] = self.features[i * c + ch];
            }
        }
        out
    }

    /// Keeps every cell of `dense` where some channel is nonzero.
    pub fn from_dense(dense: &DenseTensor<T>) -> Result<Self> {
        let shape = dense.shape();
        if shape.len() < 4 {
            return Err(shape_err!("dense tensor of rank {} has no spatial axes to sparsify", shape.len()));
        }
        let (b, c) = (shape[0], shape[1]);
        let spatial = shape[2..].to_vec();
        check_grid(&spatial, b, c)?;
        let plane = dense.plane();
        let data = dense.data();
        let mut coords = Vec::new();
        let mut features = Vec::new();
        let mut idx = vec![0i32; spatial.len()];
        for bi in 0..b {
            for cell in 0..plane {
                let base = bi * c * plane + cell;
                if (0..c).any(|ch| data[base + ch * plane] != T::zero()) {
                    unravel(cell, &spatial, &mut idx);
                    coords.push(Coord::new(bi as i32, &idx));
                    features.extend((0..c).map(|ch| data[base + ch * plane]));
                }
            }
        }
        Self::new(coords, features, spatial, b, c)
    }

    pub fn cast<U: Scalar>(&self) -> SparseTensor<U> {
        SparseTensor {
            coords: self.coords.clone(),
            features: crate::scalar::cast_slice(&self.features),
            spatial_shape: self.spatial_shape.clone(),
            batch_size: self.batch_size,
            channels: self.channels,
        }
    }

    /// Removes spatial axis `axis`, which must have extent 1 (pillar grids).
    pub fn squeeze_axis(&self, axis: usize) -> Result<Self> {
        if self.ndim() != 3 || axis >= 3 || self.spatial_shape[axis] != 1 {
            return Err(shape_err!(
                "cannot squeeze axis {axis} of spatial shape {:?}",
                self.spatial_shape
            ));
        }
        let coords = self.coords.iter().map(|c| c.drop_axis(axis)).collect();
        let mut shape = self.spatial_shape.clone();
        shape.remove(axis);
        Self::new(coords, self.features.clone(), shape, self.batch_size, self.channels)
    }

    /// Elementwise sum of two tensors over the identical coordinate set.
    pub fn add_same_coords(&self, other: &Self) -> Result<Self> {
        if self.coords != other.coords || self.spatial_shape != other.spatial_shape {
            return Err(Error::Topology(format!(
                "cannot add tensors over different coordinate sets ({} vs {} rows)",
                self.len(),
                other.len()
            )));
        }
        if self.channels != other.channels {
            return Err(shape_err!("channel mismatch {} vs {}", self.channels, other.channels));
        }
        let features = self.features.iter().zip(&other.features).map(|(&a, &b)| a + b).collect();
        self.with_features(features, self.channels)
    }
}

fn check_bounds(c: &Coord, shape: &[usize], batch_size: usize) -> Result<()> {
    if c.ndim() != shape.len() {
        return Err(Error::InvalidTensor(format!(
            "coordinate {c} has {} spatial axes, tensor has {}",
            c.ndim(),
            shape.len()
        )));
    }
    if c.batch() < 0 || c.batch() as usize >= batch_size {
        return Err(Error::InvalidTensor(format!("coordinate {c} outside batch size {batch_size}")));
    }
    if c.spatial().iter().zip(shape).any(|(&v, &s)| v < 0 || v as usize >= s) {
        return Err(Error::InvalidTensor(format!("coordinate {c} outside spatial shape {shape:?}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn spatial_linear(c: &Coord, shape: &[usize]) -> usize {
    c.spatial().iter().zip(shape).fold(0, |acc, (&v, &s)| acc * s + v as usize)
}

pub(crate) fn unravel(mut cell: usize, shape: &[usize], out: &mut [i32]) {
    for a in (0..shape.len()).rev() {
        out[a] = (cell % shape[a]) as i32;
        cell /= shape[a];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c2(y: i32, x: i32) -> Coord {
        Coord::new(0, &[y, x])
    }

    #[test]
    fn rejects_unsorted_and_duplicates() {
        let e = SparseTensor::<f64>::new(vec![c2(0, 1), c2(0, 0)], vec![1.0, 2.0], vec![4, 4], 1, 1);
        assert!(matches!(e, Err(Error::InvalidTensor(_))));
        let e = SparseTensor::<f64>::new(vec![c2(0, 1), c2(0, 1)], vec![1.0, 2.0], vec![4, 4], 1, 1);
        assert_eq!(e.unwrap_err(), Error::DuplicateCoordinate(c2(0, 1)));
        let e = SparseTensor::<f64>::new(vec![c2(0, 4)], vec![1.0], vec![4, 4], 1, 1);
        assert!(matches!(e, Err(Error::InvalidTensor(_))));
    }

    #[test]
    fn from_unsorted_sorts_rows_with_features() {
        let t = SparseTensor::<f64>::from_unsorted(
            vec![c2(1, 0), c2(0, 3)],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![4, 4],
            1,
            2,
        )
        .unwrap();
        assert_eq!(t.coords(), &[c2(0, 3), c2(1, 0)]);
        assert_eq!(t.features(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn sparsity_values() {
        let coords = vec![c2(0, 0), c2(1, 1), c2(2, 2), c2(3, 3)];
        let t = SparseTensor::<f64>::new(coords, vec![1.0; 4], vec![4, 4], 1, 1).unwrap();
        assert_eq!(t.sparsity(), 0.75);
        assert_eq!(SparseTensor::<f64>::empty(vec![4, 4], 1, 1).unwrap().sparsity(), 1.0);
        let full: Vec<_> = (0..2).flat_map(|y| (0..3).map(move |x| c2(y, x))).collect();
        let t = SparseTensor::<f64>::new(full, vec![1.0; 6], vec![2, 3], 1, 1).unwrap();
        assert_eq!(t.sparsity(), 0.0);
    }

    #[test]
    fn scatter_single_row() {
        let t = SparseTensor::<f64>::new(vec![Coord::new(0, &[1, 0, 1])], vec![3.0, 4.0], vec![2, 2, 2], 1, 2)
            .unwrap();
        let d = t.to_dense();
        assert_eq!(d.shape(), &[1, 2, 2, 2, 2]);
        assert_eq!(d.get(&[0, 0, 1, 0, 1]), 3.0);
        assert_eq!(d.get(&[0, 1, 1, 0, 1]), 4.0);
        assert_eq!(d.data().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn empty_scatter_and_gather() {
        let t = SparseTensor::<f32>::empty(vec![3, 5], 2, 4).unwrap();
        let d = t.to_dense();
        assert!(d.data().iter().all(|&v| v == 0.0));
        let back = SparseTensor::from_dense(&d).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.batch_size(), 2);
    }

    #[test]
    fn single_nonzero_cell_gathers_one_row() {
        let mut d = DenseTensor::<f64>::zeros(vec![1, 3, 4, 4]);
        d.set(&[0, 1, 2, 3], -1.5);
        let t = SparseTensor::from_dense(&d).unwrap();
        assert_eq!(t.coords(), &[c2(2, 3)]);
        assert_eq!(t.features(), &[0.0, -1.5, 0.0]);
    }

    #[test]
    fn squeeze_drops_unit_axis() {
        let t = SparseTensor::<f64>::new(vec![Coord::new(0, &[0, 2, 1])], vec![1.0], vec![1, 4, 4], 1, 1)
            .unwrap();
        let s = t.squeeze_axis(0).unwrap();
        assert_eq!(s.coords(), &[c2(2, 1)]);
        assert_eq!(s.spatial_shape(), &[4, 4]);
        assert!(t.squeeze_axis(1).is_err());
    }
}
