//! Gather-scatter execution plans for sparse convolutions.
//!
//! A rulebook stores, for every kernel tap in lexicographic order, the
//! `(input_row, output_row)` pairs the tap connects. Within one tap the pairs
//! are sorted by output row and no output row repeats, so applying a rulebook
//! visits each output row's contributions in tap order regardless of how the
//! work is split.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::sparse::coord::{build_coord_index, Coord};
use crate::sparse::kernel::KernelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RulePair {
    pub input: u32,
    pub output: u32,
}

impl RulePair {
    #[inline]
    pub fn new(input: usize, output: usize) -> Self {
        Self { input: input as u32, output: output as u32 }
    }

    #[inline]
    fn key(&self) -> (u32, u32) {
        (self.output, self.input)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rulebook {
    offsets: Vec<Vec<RulePair>>,
    out_rows: usize,
}

/// Per-output-row view of a rulebook: `(tap, input_row)` lists in tap order.
#[derive(Debug, Clone)]
pub struct GatherIndex {
    row_start: Vec<usize>,
    entries: Vec<(u32, u32)>,
}

impl GatherIndex {
    #[inline]
    pub fn row(&self, j: usize) -> &[(u32, u32)] {
        &self.entries[self.row_start[j]..self.row_start[j + 1]]
    }
}

impl Rulebook {
    /// Validates the ordering contract and wraps the pair lists.
    pub fn new(offsets: Vec<Vec<RulePair>>, out_rows: usize) -> Result<Self> {
        for (t, pairs) in offsets.iter().enumerate() {
            for p in pairs {
                if p.output as usize >= out_rows {
                    return Err(shape_err!("tap {t}: output row {} >= {out_rows}", p.output));
                }
            }
            for w in pairs.windows(2) {
                if w[0].output >= w[1].output {
                    return Err(shape_err!(
                        "tap {t}: pairs not strictly ordered by output row ({:?}, {:?})",
                        w[0],
                        w[1]
                    ));
                }
            }
        }
        Ok(Self { offsets, out_rows })
    }

    pub fn offsets(&self) -> &[Vec<RulePair>] {
        &self.offsets
    }

    pub fn num_offsets(&self) -> usize {
        self.offsets.len()
    }

    pub fn out_rows(&self) -> usize {
        self.out_rows
    }

    pub fn pair_count(&self) -> usize {
        self.offsets.iter().map(Vec::len).sum()
    }

    /// One past the largest input row referenced.
    pub fn min_inputs(&self) -> usize {
        self.offsets.iter().flatten().map(|p| p.input as usize + 1).max().unwrap_or(0)
    }

    pub fn check_inputs(&self, n_in: usize) -> Result<()> {
        if self.min_inputs() > n_in {
            return Err(shape_err!(
                "rulebook references input row {} but only {n_in} rows exist",
                self.min_inputs() - 1
            ));
        }
        Ok(())
    }

    pub fn gather_index(&self) -> GatherIndex {
        let mut counts = vec![0usize; self.out_rows + 1];
        for p in self.offsets.iter().flatten() {
            counts[p.output as usize + 1] += 1;
        }
        for j in 0..self.out_rows {
            counts[j + 1] += counts[j];
        }
        let mut cursor = counts.clone();
        let mut entries = vec![(0u32, 0u32); self.pair_count()];
        for (t, pairs) in self.offsets.iter().enumerate() {
            for p in pairs {
                let slot = &mut cursor[p.output as usize];
                entries[*slot] = (t as u32, p.input);
                *slot += 1;
            }
        }
        GatherIndex { row_start: counts, entries }
    }
}

/// Output of a strided (regular) sparse convolution plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsample {
    pub coords: Vec<Coord>,
    pub spatial_shape: Vec<usize>,
    pub rulebook: Arc<Rulebook>,
}

const PAR_CHUNK: usize = 4096;

/// Plan for a submanifold convolution: output coordinates are the input
/// coordinates, and output `j` gathers input `i` at centered offset `o`
/// exactly when `coords[j] + o == coords[i]`.
pub fn build_submanifold_rulebook(coords: &[Coord], spatial_shape: &[usize], kernel: &KernelSpec) -> Result<Rulebook> {
    kernel.require_submanifold()?;
    if kernel.ndim() != spatial_shape.len() {
        return Err(Error::InvalidKernel(format!(
            "kernel has {} axes, tensor has {}",
            kernel.ndim(),
            spatial_shape.len()
        )));
    }
    let index = build_coord_index(coords)?;
    let offsets = kernel.centered_offsets();
    let taps = offsets.len();

    let chunks: Vec<Vec<Vec<RulePair>>> = coords
        .par_chunks(PAR_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut local = vec![Vec::new(); taps];
            for (k, c) in chunk.iter().enumerate() {
                let j = ci * PAR_CHUNK + k;
                for (t, o) in offsets.iter().enumerate() {
                    if let Some(n) = c.offset_within(o, spatial_shape) {
                        if let Some(i) = index.get(&n) {
                            local[t].push(RulePair::new(i, j));
                        }
                    }
                }
            }
            local
        })
        .collect();

    let mut merged = vec![Vec::new(); taps];
    for chunk in chunks {
        for (t, pairs) in chunk.into_iter().enumerate() {
            merged[t].extend(pairs);
        }
    }
    Ok(Rulebook { offsets: merged, out_rows: coords.len() })
}

/// Plan for a strided convolution. Output cell `j` reads input positions
/// `j * stride - pad + t` for taps `t`; every output cell covering at least
/// one active input becomes an output coordinate.
pub fn build_downsample_rulebook(coords: &[Coord], spatial_shape: &[usize], kernel: &KernelSpec) -> Result<Downsample> {
    let out_shape = kernel.output_shape(spatial_shape)?;
    let d = spatial_shape.len();
    let taps = kernel.volume();

    // (out coord, tap, input row) for every tap that lands on an active input.
    let mut hits: Vec<(Coord, u32, u32)> = Vec::new();
    let mut per_axis: Vec<Vec<(usize, i32)>> = vec![Vec::new(); d];
    let mut tap = vec![0usize; d];
    let mut out_pos = vec![0i32; d];
    for (i, c) in coords.iter().enumerate() {
        for a in 0..d {
            per_axis[a].clear();
            let p = c.spatial()[a] as i64;
            let pad = kernel.padding[a] as i64;
            let s = kernel.stride[a] as i64;
            for t in 0..kernel.kernel_size[a] {
                let num = p
                    .checked_add(pad)
                    .and_then(|v| v.checked_sub(t as i64))
                    .ok_or_else(|| Error::CoordinateOverflow(format!("axis {a} of {c}")))?;
                if num >= 0 && num % s == 0 {
                    let j = num / s;
                    if j < out_shape[a] as i64 {
                        per_axis[a].push((t, j as i32));
                    }
                }
            }
            if per_axis[a].is_empty() {
                break;
            }
        }
        if per_axis.iter().any(Vec::is_empty) {
            continue;
        }
        // Cartesian product over axes, last axis fastest.
        let combos: usize = per_axis.iter().map(Vec::len).product();
        for combo in 0..combos {
            let mut rest = combo;
            for a in (0..d).rev() {
                let n = per_axis[a].len();
                let (t, j) = per_axis[a][rest % n];
                rest /= n;
                tap[a] = t;
                out_pos[a] = j;
            }
            let flat = tap.iter().zip(&kernel.kernel_size).fold(0, |acc, (&t, &k)| acc * k + t);
            hits.push((Coord::new(c.batch(), &out_pos), flat as u32, i as u32));
        }
    }

    let mut out_coords: Vec<Coord> = hits.iter().map(|h| h.0).collect();
    out_coords.par_sort_unstable();
    out_coords.dedup();

    let mut offsets: Vec<Vec<RulePair>> = vec![Vec::new(); taps];
    for (oc, t, i) in &hits {
        let j = out_coords.binary_search(oc).expect("output coordinate collected above");
        offsets[*t as usize].push(RulePair { input: *i, output: j as u32 });
    }
    offsets.par_iter_mut().for_each(|pairs| pairs.sort_unstable_by_key(RulePair::key));

    Ok(Downsample {
        rulebook: Arc::new(Rulebook { offsets, out_rows: out_coords.len() }),
        coords: out_coords,
        spatial_shape: out_shape,
    })
}

/// Reverses every pair; the result has `n_in` output rows.
pub fn transpose_rulebook(rb: &Rulebook, n_in: usize) -> Result<Rulebook> {
    rb.check_inputs(n_in)?;
    let offsets = rb
        .offsets
        .par_iter()
        .map(|pairs| {
            let mut t: Vec<RulePair> = pairs.iter().map(|p| RulePair { input: p.output, output: p.input }).collect();
            t.sort_unstable_by_key(RulePair::key);
            t
        })
        .collect();
    Ok(Rulebook { offsets, out_rows: n_in })
}
