use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::ops::weights::ConvWeights;
use crate::scalar::Scalar;
use crate::sparse::{
    build_downsample_rulebook, build_submanifold_rulebook, transpose_rulebook, Coord, Downsample, KernelSpec, Rulebook,
    SparseTensor,
};

const ROWS_PER_TASK: usize = 256;

/// State a forward convolution keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct ConvSavedContext<T> {
    pub rulebook: Arc<Rulebook>,
    pub input: Vec<T>,
    pub weights: ConvWeights<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Vec<T>,
    /// Same layout as [`ConvWeights::weights`].
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// `out[j] = bias + sum over taps t, pairs (i, j) of x[i] * W[t]`.
///
/// Each output row accumulates in tap order, then input-channel order, so the
/// result is bitwise independent of how rows are distributed over threads.
pub fn apply_rulebook<T: Scalar>(features: &[T], rb: &Rulebook, w: &ConvWeights<T>) -> Result<Vec<T>> {
    let (cin, cout) = (w.in_channels(), w.out_channels());
    if !features.len().is_multiple_of(cin) {
        return Err(shape_err!("{} feature values are not a multiple of {cin} channels", features.len()));
    }
    if rb.num_offsets() != w.volume() {
        return Err(shape_err!("rulebook has {} taps, weights have {}", rb.num_offsets(), w.volume()));
    }
    rb.check_inputs(features.len() / cin)?;

    let gather = rb.gather_index();
    let mut out = vec![T::zero(); rb.out_rows() * cout];
    out.par_chunks_mut(cout * ROWS_PER_TASK).enumerate().for_each(|(chunk, rows)| {
        for (k, acc) in rows.chunks_mut(cout).enumerate() {
            let j = chunk * ROWS_PER_TASK + k;
            if let Some(b) = w.bias() {
                acc.copy_from_slice(b);
            }
            for &(t, i) in gather.row(j) {
                let x = &features[i as usize * cin..(i as usize + 1) * cin];
                let wt = w.tap(t as usize);
                for (ci, &xv) in x.iter().enumerate() {
                    let wrow = &wt[ci * cout..(ci + 1) * cout];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a += xv * wv;
                    }
                }
            }
        }
    });
    Ok(out)
}

fn check_input<T: Scalar>(t: &SparseTensor<T>, w: &ConvWeights<T>) -> Result<()> {
    if t.channels() != w.in_channels() {
        return Err(shape_err!("tensor has {} channels, weights expect {}", t.channels(), w.in_channels()));
    }
    if w.kernel_size().len() != t.ndim() {
        return Err(shape_err!("{}-d weights on a {}-d tensor", w.kernel_size().len(), t.ndim()));
    }
    Ok(())
}

/// Submanifold convolution: output coordinates are the input coordinates.
pub fn ss_conv_forward<T: Scalar>(
    t: &SparseTensor<T>,
    k: &KernelSpec,
    w: &ConvWeights<T>,
) -> Result<(SparseTensor<T>, ConvSavedContext<T>)> {
    k.require_submanifold()?;
    w.check_spec(k)?;
    check_input(t, w)?;
    let rb = Arc::new(build_submanifold_rulebook(t.coords(), t.spatial_shape(), k)?);
    ss_conv_with_rulebook(t, &rb, w)
}

/// Submanifold convolution over a prebuilt rulebook for `t`'s coordinates.
pub fn ss_conv_with_rulebook<T: Scalar>(
    t: &SparseTensor<T>,
    rb: &Arc<Rulebook>,
    w: &ConvWeights<T>,
) -> Result<(SparseTensor<T>, ConvSavedContext<T>)> {
    check_input(t, w)?;
    if rb.out_rows() != t.len() {
        return Err(Error::Topology(format!(
            "submanifold rulebook has {} rows, tensor has {}",
            rb.out_rows(),
            t.len()
        )));
    }
    let features = apply_rulebook(t.features(), rb, w)?;
    let out = t.with_features(features, w.out_channels())?;
    Ok((out, ConvSavedContext { rulebook: rb.clone(), input: t.features().to_vec(), weights: w.clone() }))
}

/// Regular sparse convolution: every output cell touched by an active input
/// through some tap becomes active.
pub fn rs_conv_forward<T: Scalar>(
    t: &SparseTensor<T>,
    k: &KernelSpec,
    w: &ConvWeights<T>,
) -> Result<(SparseTensor<T>, ConvSavedContext<T>)> {
    w.check_spec(k)?;
    check_input(t, w)?;
    let plan = build_downsample_rulebook(t.coords(), t.spatial_shape(), k)?;
    rs_conv_with_plan(t, &plan, w)
}

pub fn rs_conv_with_plan<T: Scalar>(
    t: &SparseTensor<T>,
    plan: &Downsample,
    w: &ConvWeights<T>,
) -> Result<(SparseTensor<T>, ConvSavedContext<T>)> {
    let out = rs_conv_apply(t, plan, w)?;
    Ok((out, ConvSavedContext { rulebook: plan.rulebook.clone(), input: t.features().to_vec(), weights: w.clone() }))
}

/// [`rs_conv_with_plan`] without the backward context.
pub fn rs_conv_apply<T: Scalar>(t: &SparseTensor<T>, plan: &Downsample, w: &ConvWeights<T>) -> Result<SparseTensor<T>> {
    check_input(t, w)?;
    let features = apply_rulebook(t.features(), &plan.rulebook, w)?;
    SparseTensor::new(plan.coords.clone(), features, plan.spatial_shape.clone(), t.batch_size(), w.out_channels())
}

/// Sparse inverse convolution: runs the transposed plan of `down`, writing
/// exactly onto `target_coords` (the coordinates `down` was built from).
pub fn inv_conv_forward<T: Scalar>(
    t: &SparseTensor<T>,
    target_coords: &[Coord],
    target_shape: &[usize],
    down: &Downsample,
    w: &ConvWeights<T>,
) -> Result<(SparseTensor<T>, ConvSavedContext<T>)> {
    let rb = Arc::new(inverse_rulebook(t, target_coords, down)?);
    let out = inv_conv_execute(t, target_coords, target_shape, &rb, w)?;
    Ok((out, ConvSavedContext { rulebook: rb, input: t.features().to_vec(), weights: w.clone() }))
}

/// [`inv_conv_forward`] without the backward context.
pub fn inv_conv_apply<T: Scalar>(
    t: &SparseTensor<T>,
    target_coords: &[Coord],
    target_shape: &[usize],
    down: &Downsample,
    w: &ConvWeights<T>,
) -> Result<SparseTensor<T>> {
    let rb = inverse_rulebook(t, target_coords, down)?;
    inv_conv_execute(t, target_coords, target_shape, &rb, w)
}

fn inverse_rulebook<T: Scalar>(t: &SparseTensor<T>, target_coords: &[Coord], down: &Downsample) -> Result<Rulebook> {
    if t.coords() != down.coords.as_slice() || t.spatial_shape() != down.spatial_shape.as_slice() {
        return Err(Error::Topology(format!(
            "inverse convolution input ({} rows, shape {:?}) is not the output of its downsample plan ({} rows, shape {:?})",
            t.len(),
            t.spatial_shape(),
            down.coords.len(),
            down.spatial_shape
        )));
    }
    if down.rulebook.min_inputs() > target_coords.len() {
        return Err(Error::Topology(format!(
            "downsample plan reads {} input rows, target has {}",
            down.rulebook.min_inputs(),
            target_coords.len()
        )));
    }
    transpose_rulebook(&down.rulebook, target_coords.len())
}

fn inv_conv_execute<T: Scalar>(
    t: &SparseTensor<T>,
    target_coords: &[Coord],
    target_shape: &[usize],
    rb: &Rulebook,
    w: &ConvWeights<T>,
) -> Result<SparseTensor<T>> {
    check_input(t, w)?;
    let features = apply_rulebook(t.features(), rb, w)?;
    SparseTensor::new(target_coords.to_vec(), features, target_shape.to_vec(), t.batch_size(), w.out_channels())
}

/// Analytic gradients of the gather-matmul-scatter map.
pub fn conv_backward<T: Scalar>(ctx: &ConvSavedContext<T>, grad_out: &[T]) -> Result<ConvGrads<T>> {
    let w = &ctx.weights;
    let (cin, cout) = (w.in_channels(), w.out_channels());
    let rb = &ctx.rulebook;
    if grad_out.len() != rb.out_rows() * cout {
        return Err(shape_err!(
            "grad_out has {} values, expected {} x {}",
            grad_out.len(),
            rb.out_rows(),
            cout
        ));
    }
    let x = &ctx.input;
    let mut gin = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.weights().len()];
    let mut gb = vec![T::zero(); cout];

    for j in 0..rb.out_rows() {
        for (b, &g) in gb.iter_mut().zip(&grad_out[j * cout..(j + 1) * cout]) {
            *b += g;
        }
    }
    let per_tap = cin * cout;
    for (t, pairs) in rb.offsets().iter().enumerate() {
        let wt = w.tap(t);
        let gwt = &mut gw[t * per_tap..(t + 1) * per_tap];
        for p in pairs {
            let (i, j) = (p.input as usize, p.output as usize);
            let g = &grad_out[j * cout..(j + 1) * cout];
            let xi = &x[i * cin..(i + 1) * cin];
            let gi = &mut gin[i * cin..(i + 1) * cin];
            for ci in 0..cin {
                let wrow = &wt[ci * cout..(ci + 1) * cout];
                let gwrow = &mut gwt[ci * cout..(ci + 1) * cout];
                let mut acc = T::zero();
                for co in 0..cout {
                    acc += g[co] * wrow[co];
                    gwrow[co] += xi[ci] * g[co];
                }
                gi[ci] += acc;
            }
        }
    }
    Ok(ConvGrads { input: gin, weights: gw, bias: gb })
}
