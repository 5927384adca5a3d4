use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Maximum number of spatial axes a coordinate can carry.
pub const MAX_SPATIAL: usize = 3;

/// A voxel position: batch index plus `d` spatial indices ordered `(z, y, x)`
/// for `d = 3` and `(y, x)` for `d = 2`.
///
/// Unused trailing spatial slots are zero, so the derived ordering is the
/// lexicographic order over `(batch, spatial...)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    batch: i32,
    spatial: [i32; MAX_SPATIAL],
    ndim: u8,
}

impl Coord {
    pub fn new(batch: i32, spatial: &[i32]) -> Self {
        assert!(
            (1..=MAX_SPATIAL).contains(&spatial.len()),
            "coordinate dimensionality {} unsupported",
            spatial.len()
        );
        let mut s = [0; MAX_SPATIAL];
        s[..spatial.len()].copy_from_slice(spatial);
        Self { batch, spatial: s, ndim: spatial.len() as u8 }
    }

    #[inline]
    pub fn batch(&self) -> i32 {
        self.batch
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.ndim as usize
    }

    #[inline]
    pub fn spatial(&self) -> &[i32] {
        &self.spatial[..self.ndim as usize]
    }

    /// Returns the coordinate shifted by `offset`, or `None` if any component
    /// leaves `[0, shape)`.
    #[inline]
    pub fn offset_within(&self, offset: &[i32], shape: &[usize]) -> Option<Coord> {
        let mut out = *self;
        for a in 0..self.ndim() {
            let v = self.spatial[a] as i64 + offset[a] as i64;
            if v < 0 || v >= shape[a] as i64 {
                return None;
            }
            out.spatial[a] = v as i32;
        }
        Some(out)
    }

    /// Drops spatial axis `axis`.
    pub fn drop_axis(&self, axis: usize) -> Coord {
        let mut s: Vec<i32> = self.spatial().to_vec();
        s.remove(axis);
        Coord::new(self.batch, &s)
    }

    /// Chebyshev distance over the spatial axes (batch must match).
    pub fn chebyshev(&self, other: &Coord) -> Option<u32> {
        if self.batch != other.batch || self.ndim != other.ndim {
            return None;
        }
        self.spatial()
            .iter()
            .zip(other.spatial())
            .map(|(a, b)| a.abs_diff(*b))
            .max()
    }
}

impl fmt::Debug for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(b{}", self.batch)?;
        for v in self.spatial() {
            write!(f, ", {v}")?;
        }
        write!(f, ")")
    }
}

/// Hash index from coordinate to its row in the owning tensor.
#[derive(Debug, Clone, Default)]
pub struct CoordIndex {
    map: HashMap<Coord, usize>,
}

impl CoordIndex {
    #[inline]
    pub fn get(&self, c: &Coord) -> Option<usize> {
        self.map.get(c).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Builds the coordinate-to-row index. Fails on the first duplicate.
pub fn build_coord_index(coords: &[Coord]) -> Result<CoordIndex> {
    let mut map = HashMap::with_capacity(coords.len());
    for (i, c) in coords.iter().enumerate() {
        if map.insert(*c, i).is_some() {
            return Err(Error::DuplicateCoordinate(*c));
        }
    }
    Ok(CoordIndex { map })
}
