use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Contiguous row-major tensor laid out as `(batch, channels, spatial...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!("shape {:?} needs {} elements, got {}", shape, n, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> &[usize] {
        &self.shape[2..]
    }

    /// Number of elements in one `(batch, channel)` plane.
    pub fn plane(&self) -> usize {
        self.shape[2..].iter().product()
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], v: T) {
        let k = self.flat_index(index);
        self.data[k] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err!("add: shapes {:?} and {:?} differ", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn cast<U: Scalar>(&self) -> DenseTensor<U> {
        DenseTensor { shape: self.shape.clone(), data: crate::scalar::cast_slice(&self.data) }
    }

    /// Count of spatial cells (per batch) where some channel is nonzero.
    pub fn active_cells(&self) -> usize {
        let (b, c, plane) = (self.batch(), self.channels(), self.plane());
        let mut count = 0;
        for bi in 0..b {
            for p in 0..plane {
                if (0..c).any(|ci| self.data[(bi * c + ci) * plane + p] != T::zero()) {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }
}
