use std::collections::BTreeSet;

use hednet_core::sparse::{Coord, SparseTensor};
use thiserror::Error;

/// Perturbation added to every channel of the probed row.
pub const INFLUENCE_DELTA: f64 = 1.0;
/// Smallest absolute output change counted as influence.
pub const INFLUENCE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("probe {0} is not an active coordinate")]
    NotActive(Coord),
    #[error("pipeline failed: {0}")]
    Pipeline(#[from] hednet_core::Error),
    #[error("pipeline output coordinates depend on feature values")]
    CoordsChanged,
}

/// Output coordinates whose features moved when one input row was perturbed.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceSet {
    pub coords: BTreeSet<Coord>,
    pub threshold: f64,
}

impl InfluenceSet {
    pub fn contains(&self, c: &Coord) -> bool {
        self.coords.contains(c)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Runs `pipeline` on `base` and on `base` with row `probe` shifted by
/// [`INFLUENCE_DELTA`], and collects output coordinates whose change exceeds
/// [`INFLUENCE_THRESHOLD`] in any channel. Use identity activations in the
/// pipeline so that zero influence means no connection.
pub fn influence_set<F>(pipeline: F, base: &SparseTensor<f64>, probe: &Coord) -> Result<InfluenceSet, ProbeError>
where
    F: Fn(&SparseTensor<f64>) -> hednet_core::Result<SparseTensor<f64>>,
{
    let row = base.coords().iter().position(|c| c == probe).ok_or(ProbeError::NotActive(*probe))?;
    let mut bumped = base.clone();
    bumped.row_mut(row).iter_mut().for_each(|v| *v += INFLUENCE_DELTA);
    let a = pipeline(base)?;
    let b = pipeline(&bumped)?;
    if a.coords() != b.coords() || a.channels() != b.channels() {
        return Err(ProbeError::CoordsChanged);
    }
    let coords = a
        .coords()
        .iter()
        .enumerate()
        .filter(|&(i, _)| a.row(i).iter().zip(b.row(i)).any(|(x, y)| (x - y).abs() > INFLUENCE_THRESHOLD))
        .map(|(_, c)| *c)
        .collect();
    Ok(InfluenceSet { coords, threshold: INFLUENCE_THRESHOLD })
}

fn cheb(a: &Coord, b: &Coord) -> Option<u32> {
    if a.batch() != b.batch() || a.spatial().len() != b.spatial().len() {
        return None;
    }
    a.spatial().iter().zip(b.spatial()).map(|(x, y)| x.abs_diff(*y)).max()
}

/// Every grid cell within Chebyshev distance `radius` of some coordinate,
/// found by scanning the whole grid.
pub fn chebyshev_dilation(coords: &[Coord], spatial_shape: &[usize], radius: u32) -> BTreeSet<Coord> {
    let mut out = BTreeSet::new();
    let batches: BTreeSet<i32> = coords.iter().map(|c| c.batch()).collect();
    let cells: usize = spatial_shape.iter().product();
    let mut p = vec![0i32; spatial_shape.len()];
    for b in batches {
        for cell in 0..cells {
            let mut rest = cell;
            for a in (0..spatial_shape.len()).rev() {
                p[a] = (rest % spatial_shape[a]) as i32;
                rest /= spatial_shape[a];
            }
            let c = Coord::new(b, &p);
            if coords.iter().any(|q| cheb(q, &c).is_some_and(|d| d <= radius)) {
                out.insert(c);
            }
        }
    }
    out
}

/// Connected-component label of each coordinate, linking coordinates within
/// Chebyshev distance `reach` of each other. Labels count up from 0 in order
/// of first appearance.
pub fn components(coords: &[Coord], reach: u32) -> Vec<usize> {
    let n = coords.len();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if label[j] == usize::MAX && cheb(&coords[i], &coords[j]).is_some_and(|d| d <= reach) {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    label
}
