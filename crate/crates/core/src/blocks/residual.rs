use std::sync::Arc;

use crate::dense::{dense_conv2d_forward, dense_norm_act, DenseTensor};
use crate::error::{shape_err, Error, Result};
use crate::ops::{apply_rulebook, norm_act, rs_conv_apply, Activation};
use crate::params::{ConvNorm, ParamSource};
use crate::scalar::Scalar;
use crate::sparse::{build_downsample_rulebook, build_submanifold_rulebook, Coord, KernelSpec, Rulebook, SparseTensor};

/// Two conv-norm layers and an identity skip; `proj` is the 1x1 projection
/// on the skip path of strided dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualWeights<T> {
    pub conv1: ConvNorm<T>,
    pub conv2: ConvNorm<T>,
    pub proj: Option<ConvNorm<T>>,
}

impl<T: Scalar> ResidualWeights<T> {
    /// Weights for a sparse residual block (SSR or RSR) of cubic `kernel`.
    pub fn build_sparse(
        src: &mut dyn ParamSource,
        name: &str,
        ndim: usize,
        kernel: usize,
        channels: usize,
    ) -> Result<Self> {
        let k = vec![kernel; ndim];
        Ok(Self {
            conv1: ConvNorm::build(src, &format!("{name}.conv1"), &k, channels, channels)?,
            conv2: ConvNorm::build(src, &format!("{name}.conv2"), &k, channels, channels)?,
            proj: None,
        })
    }

    /// Weights for a dense residual block; stride 2 adds the skip projection.
    pub fn build_dense(src: &mut dyn ParamSource, name: &str, channels: usize, stride: usize) -> Result<Self> {
        let proj = match stride {
            1 => None,
            2 => Some(ConvNorm::build(src, &format!("{name}.proj"), &[1, 1], channels, channels)?),
            s => return Err(Error::Config(format!("{name}: dense residual stride {s} unsupported"))),
        };
        Ok(Self {
            conv1: ConvNorm::build(src, &format!("{name}.conv1"), &[3, 3], channels, channels)?,
            conv2: ConvNorm::build(src, &format!("{name}.conv2"), &[3, 3], channels, channels)?,
            proj,
        })
    }

    /// All-zero convolutions and identity normalizations.
    pub fn zeros(kernel: &[usize], channels: usize) -> Self {
        Self {
            conv1: ConvNorm::zeros(kernel, channels, channels),
            conv2: ConvNorm::zeros(kernel, channels, channels),
            proj: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.conv.in_channels()
    }

    fn check_sparse(&self, t_channels: usize) -> Result<()> {
        let (c1, c2) = (&self.conv1.conv, &self.conv2.conv);
        if self.proj.is_some() {
            return Err(shape_err!("sparse residual blocks have no skip projection"));
        }
        let c = t_channels;
        if c1.in_channels() != c || c1.out_channels() != c || c2.in_channels() != c || c2.out_channels() != c {
            return Err(shape_err!(
                "residual block on {c} channels has convolutions {}->{} and {}->{}",
                c1.in_channels(),
                c1.out_channels(),
                c2.in_channels(),
                c2.out_channels()
            ));
        }
        if self.conv1.norm.channels() != c || self.conv2.norm.channels() != c {
            return Err(shape_err!("residual block normalization width differs from {c} channels"));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ResidualWeights<U> {
        ResidualWeights { conv1: self.conv1.cast(), conv2: self.conv2.cast(), proj: self.proj.as_ref().map(|p| p.cast()) }
    }
}

/// Submanifold rulebooks for one coordinate set, built once per kernel size.
#[derive(Debug)]
pub(crate) struct SubmanifoldPlans {
    coords: Vec<Coord>,
    shape: Vec<usize>,
    built: Vec<(Vec<usize>, Arc<Rulebook>)>,
}

impl SubmanifoldPlans {
    pub(crate) fn for_tensor<T: Scalar>(t: &SparseTensor<T>) -> Self {
        Self { coords: t.coords().to_vec(), shape: t.spatial_shape().to_vec(), built: Vec::new() }
    }

    pub(crate) fn get(&mut self, kernel_size: &[usize]) -> Result<Arc<Rulebook>> {
        if let Some((_, rb)) = self.built.iter().find(|(k, _)| k == kernel_size) {
            return Ok(rb.clone());
        }
        let mut spec = KernelSpec::submanifold(kernel_size.len(), 1, 1, 1);
        spec.kernel_size = kernel_size.to_vec();
        spec.padding = kernel_size.iter().map(|k| k / 2).collect();
        let rb = Arc::new(build_submanifold_rulebook(&self.coords, &self.shape, &spec)?);
        self.built.push((kernel_size.to_vec(), rb.clone()));
        Ok(rb)
    }
}

fn residual_out<T: Scalar>(h: &mut [T], skip: &[T], act: Activation) {
    for (v, &s) in h.iter_mut().zip(skip) {
        *v = act.apply(*v + s);
    }
}

/// `act(N2(SS2(act(N1(SS1(x))))) + x)`; output coordinates equal the input's.
pub fn ssr_block_forward<T: Scalar>(
    t: &SparseTensor<T>,
    w: &ResidualWeights<T>,
    act: Activation,
) -> Result<SparseTensor<T>> {
    ssr_block_planned(t, w, act, &mut SubmanifoldPlans::for_tensor(t))
}

pub(crate) fn ssr_block_planned<T: Scalar>(
    t: &SparseTensor<T>,
    w: &ResidualWeights<T>,
    act: Activation,
    plans: &mut SubmanifoldPlans,
) -> Result<SparseTensor<T>> {
    w.check_sparse(t.channels())?;
    let rb1 = plans.get(w.conv1.conv.kernel_size())?;
    let rb2 = plans.get(w.conv2.conv.kernel_size())?;
    let h = apply_rulebook(t.features(), &rb1, &w.conv1.conv)?;
    let h = norm_act(&h, &w.conv1.norm, act)?;
    let h = apply_rulebook(&h, &rb2, &w.conv2.conv)?;
    let mut h = norm_act(&h, &w.conv2.norm, Activation::Identity)?;
    residual_out(&mut h, t.features(), act);
    t.with_features(h, t.channels())
}

/// `m` chained SSR blocks sharing one set of rulebooks.
pub(crate) fn ssr_stack<T: Scalar>(
    t: &SparseTensor<T>,
    blocks: &[ResidualWeights<T>],
    act: Activation,
) -> Result<SparseTensor<T>> {
    let mut plans = SubmanifoldPlans::for_tensor(t);
    let mut x = t.clone();
    for w in blocks {
        x = ssr_block_planned(&x, w, act, &mut plans)?;
    }
    Ok(x)
}

/// Residual block of two regular sparse convolutions at stride 1 with
/// `(k - 1) / 2` padding. Each convolution dilates the active set by the
/// kernel footprint; the skip contributes the input features at their own
/// coordinates and zero elsewhere.
pub fn rsr_block_forward<T: Scalar>(
    t: &SparseTensor<T>,
    w: &ResidualWeights<T>,
    act: Activation,
) -> Result<SparseTensor<T>> {
    w.check_sparse(t.channels())?;
    let c = t.channels();
    let spec = |conv: &crate::ops::ConvWeights<T>| -> Result<KernelSpec> {
        let ks = conv.kernel_size();
        if ks.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidKernel(format!("RSR block needs odd kernels, got {ks:?}")));
        }
        Ok(KernelSpec {
            kernel_size: ks.to_vec(),
            stride: vec![1; ks.len()],
            padding: ks.iter().map(|k| k / 2).collect(),
            in_channels: c,
            out_channels: c,
        })
    };
    let plan1 = build_downsample_rulebook(t.coords(), t.spatial_shape(), &spec(&w.conv1.conv)?)?;
    let h = rs_conv_apply(t, &plan1, &w.conv1.conv)?;
    let h = h.with_features(norm_act(h.features(), &w.conv1.norm, act)?, c)?;
    let plan2 = build_downsample_rulebook(h.coords(), h.spatial_shape(), &spec(&w.conv2.conv)?)?;
    let h = rs_conv_apply(&h, &plan2, &w.conv2.conv)?;
    let mut feats = norm_act(h.features(), &w.conv2.norm, Activation::Identity)?;

    let mut skip = vec![T::zero(); feats.len()];
    for (i, coord) in t.coords().iter().enumerate() {
        let j = h
            .coords()
            .binary_search(coord)
            .map_err(|_| Error::Topology(format!("RSR output lost input coordinate {coord}")))?;
        skip[j * c..(j + 1) * c].copy_from_slice(t.row(i));
    }
    residual_out(&mut feats, &skip, act);
    h.with_features(feats, c)
}

fn dense_conv_norm<T: Scalar>(
    x: &DenseTensor<T>,
    layer: &ConvNorm<T>,
    stride: usize,
    act: Activation,
) -> Result<DenseTensor<T>> {
    let ks = layer.conv.kernel_size();
    let k = KernelSpec {
        kernel_size: ks.to_vec(),
        stride: vec![stride; ks.len()],
        padding: ks.iter().map(|k| k / 2).collect(),
        in_channels: layer.conv.in_channels(),
        out_channels: layer.conv.out_channels(),
    };
    let y = dense_conv2d_forward(x, &k, &layer.conv)?;
    dense_norm_act(&y, &layer.norm, act)
}

/// Dense residual block on a `(B, C, H, W)` map. Stride 1: two 3x3
/// convolutions and an identity skip. Stride 2: the first convolution is
/// strided and the skip is a normalized 1x1 stride-2 projection.
pub fn dr_block_forward<T: Scalar>(
    x: &DenseTensor<T>,
    stride: usize,
    w: &ResidualWeights<T>,
    act: Activation,
) -> Result<DenseTensor<T>> {
    if x.shape().len() != 4 {
        return Err(shape_err!("dense residual block needs a (B, C, H, W) input, got {:?}", x.shape()));
    }
    let skip = match (stride, &w.proj) {
        (1, None) => x.clone(),
        (2, Some(proj)) => {
            if !x.shape()[2].is_multiple_of(2) || !x.shape()[3].is_multiple_of(2) {
                return Err(shape_err!("stride-2 dense residual block needs even spatial dims, got {:?}", x.spatial()));
            }
            dense_conv_norm(x, proj, 2, Activation::Identity)?
        }
        (s, p) => {
            return Err(shape_err!(
                "dense residual block with stride {s} {} a skip projection",
                if p.is_some() { "cannot have" } else { "needs" }
            ))
        }
    };
    let h = dense_conv_norm(x, &w.conv1, stride, act)?;
    let h = dense_conv_norm(&h, &w.conv2, 1, Activation::Identity)?;
    let mut out = h.add(&skip)?;
    for v in out.data_mut() {
        *v = act.apply(*v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SeededSource;

    fn tensor(coords: &[[i32; 2]], c: usize, shape: [usize; 2]) -> SparseTensor<f64> {
        let coords: Vec<Coord> = coords.iter().map(|p| Coord::new(0, p)).collect();
        let n = coords.len();
        let feats = (0..n * c).map(|v| ((v * 7 % 11) as f64) - 5.0).collect();
        SparseTensor::from_unsorted(coords, feats, shape.to_vec(), 1, c).unwrap()
    }

    #[test]
    fn zero_ssr_is_relu_of_input() {
        let t = tensor(&[[0, 0], [0, 1], [3, 3]], 2, [4, 4]);
        let out = ssr_block_forward(&t, &ResidualWeights::zeros(&[3, 3], 2), Activation::Relu).unwrap();
        assert_eq!(out.coords(), t.coords());
        let relu: Vec<f64> = t.features().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(out.features(), relu.as_slice());
    }

    #[test]
    fn ssr_keeps_coordinates() {
        let t = tensor(&[[0, 0], [0, 1], [1, 1], [5, 2], [7, 7]], 3, [8, 8]);
        let w = ResidualWeights::build_sparse(&mut SeededSource::new(1), "b", 2, 3, 3).unwrap();
        let out = ssr_block_forward(&t, &w, Activation::Relu).unwrap();
        assert_eq!(out.coords(), t.coords());
    }

    #[test]
    fn rsr_single_site_grows_to_5x5() {
        let t = tensor(&[[4, 4]], 1, [10, 10]);
        let w = ResidualWeights::build_sparse(&mut SeededSource::new(2), "b", 2, 3, 1).unwrap();
        let out = rsr_block_forward(&t, &w, Activation::Relu).unwrap();
        assert_eq!(out.len(), 25);
        assert!(out.coords().iter().all(|c| c.chebyshev(&t.coords()[0]).unwrap() <= 2));
    }

    #[test]
    fn zero_rsr_keeps_input_at_original_sites() {
        let t = tensor(&[[1, 1]], 2, [6, 6]);
        let out = rsr_block_forward(&t, &ResidualWeights::zeros(&[3, 3], 2), Activation::Relu).unwrap();
        assert_eq!(out.len(), 16);
        for (i, c) in out.coords().iter().enumerate() {
            if c == &t.coords()[0] {
                let relu: Vec<f64> = t.row(0).iter().map(|v| v.max(0.0)).collect();
                assert_eq!(out.row(i), relu.as_slice());
            } else {
                assert!(out.row(i).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn dr_zero_weights_and_shapes() {
        let x = DenseTensor::from_vec(vec![1, 2, 4, 4], (0..32).map(|v| v as f64 - 16.0).collect()).unwrap();
        let out = dr_block_forward(&x, 1, &ResidualWeights::zeros(&[3, 3], 2), Activation::Relu).unwrap();
        assert_eq!(out, x.map(|v| v.max(0.0)));

        let w2 = ResidualWeights::build_dense(&mut SeededSource::new(5), "d", 2, 2).unwrap();
        let y = dr_block_forward(&x, 2, &w2, Activation::Relu).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        let odd = DenseTensor::<f64>::zeros(vec![1, 2, 5, 4]);
        assert!(matches!(dr_block_forward(&odd, 2, &w2, Activation::Relu), Err(Error::Shape(_))));
        assert!(dr_block_forward(&x, 2, &ResidualWeights::zeros(&[3, 3], 2), Activation::Relu).is_err());
    }
}
