use serde::{Deserialize, Serialize};

use crate::blocks::residual::{ssr_stack, ResidualWeights};
use crate::error::{shape_err, Error, Result};
use crate::ops::{apply_rulebook, inv_conv_apply, norm_act, Activation};
use crate::params::{ConvNorm, ParamSource};
use crate::scalar::Scalar;
use crate::sparse::{build_downsample_rulebook, Downsample, KernelSpec, SparseTensor};

/// Shape of a sparse encoder-decoder block: `scales` resolutions, `m` SSR
/// blocks per resolution, constant width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SedBlockSpec {
    pub ndim: usize,
    pub scales: usize,
    pub m: usize,
    pub channels: usize,
    /// Submanifold kernel size inside the SSR blocks.
    pub kernel: usize,
    /// One downsampling convolution per descent (`scales - 1` entries).
    pub down: Vec<KernelSpec>,
}

impl SedBlockSpec {
    /// Default layout: 3-wide submanifold kernels and k3 s2 p1 descents.
    pub fn new(ndim: usize, scales: usize, m: usize, channels: usize) -> Self {
        let down = (1..scales.max(1)).map(|_| KernelSpec::uniform(ndim, 3, 2, 1, channels, channels)).collect();
        Self { ndim, scales, m, channels, kernel: 3, down }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.ndim) {
            return Err(Error::Config(format!("SED block dimensionality must be 2 or 3, got {}", self.ndim)));
        }
        if self.scales == 0 || self.m == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "SED block needs scales, m and channels >= 1 (got {}, {}, {})",
                self.scales, self.m, self.channels
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!("submanifold kernel must be odd, got {}", self.kernel)));
        }
        if self.down.len() != self.scales - 1 {
            return Err(Error::Config(format!(
                "{} scales need {} downsampling kernels, got {}",
                self.scales,
                self.scales - 1,
                self.down.len()
            )));
        }
        for k in &self.down {
            k.validate()?;
            if k.ndim() != self.ndim || k.in_channels != self.channels || k.out_channels != self.channels {
                return Err(Error::Config(format!("downsampling kernel {k:?} does not fit the block")));
            }
        }
        Ok(())
    }
}

/// Parameters of one SED block. `scales[j]` holds the `m` SSR blocks at
/// resolution `j`; `downs[j]` / `ups[j]` connect resolution `j` and `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SedWeights<T> {
    pub scales: Vec<Vec<ResidualWeights<T>>>,
    pub downs: Vec<ConvNorm<T>>,
    pub ups: Vec<ConvNorm<T>>,
}

impl<T: Scalar> SedWeights<T> {
    pub fn build(spec: &SedBlockSpec, src: &mut dyn ParamSource, name: &str) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels;
        let mut scales = Vec::with_capacity(spec.scales);
        for j in 0..spec.scales {
            let blocks = (0..spec.m)
                .map(|k| ResidualWeights::build_sparse(src, &format!("{name}.scale{j}.ssr{k}"), spec.ndim, spec.kernel, c))
                .collect::<Result<Vec<_>>>()?;
            scales.push(blocks);
        }
        let mut downs = Vec::with_capacity(spec.down.len());
        let mut ups = Vec::with_capacity(spec.down.len());
        for (j, k) in spec.down.iter().enumerate() {
            downs.push(ConvNorm::build(src, &format!("{name}.down{j}"), &k.kernel_size, c, c)?);
            ups.push(ConvNorm::build(src, &format!("{name}.up{j}"), &k.kernel_size, c, c)?);
        }
        Ok(Self { scales, downs, ups })
    }

    pub fn cast<U: Scalar>(&self) -> SedWeights<U> {
        SedWeights {
            scales: self.scales.iter().map(|s| s.iter().map(|b| b.cast()).collect()).collect(),
            downs: self.downs.iter().map(|d| d.cast()).collect(),
            ups: self.ups.iter().map(|u| u.cast()).collect(),
        }
    }

    fn check(&self, spec: &SedBlockSpec) -> Result<()> {
        let ok = self.scales.len() == spec.scales
            && self.scales.iter().all(|s| s.len() == spec.m)
            && self.downs.len() == spec.down.len()
            && self.ups.len() == spec.down.len();
        if !ok {
            return Err(shape_err!("SED weights do not match a {}-scale block with m = {}", spec.scales, spec.m));
        }
        Ok(())
    }
}

/// Sparse encoder-decoder block. Each descent runs `m` SSR blocks and a
/// strided sparse convolution; each ascent runs the inverse convolution on
/// the transposed plan of its paired descent and adds the skip features.
/// The output has exactly the input's coordinates and spatial shape.
pub fn sed_block_forward<T: Scalar>(
    t: &SparseTensor<T>,
    spec: &SedBlockSpec,
    w: &SedWeights<T>,
    act: Activation,
) -> Result<SparseTensor<T>> {
    spec.validate()?;
    w.check(spec)?;
    if t.ndim() != spec.ndim || t.channels() != spec.channels {
        return Err(shape_err!(
            "SED block expects {}-d input with {} channels, got {}-d with {}",
            spec.ndim,
            spec.channels,
            t.ndim(),
            t.channels()
        ));
    }
    let c = spec.channels;
    let mut skips: Vec<SparseTensor<T>> = Vec::with_capacity(spec.scales);
    let mut plans: Vec<Downsample> = Vec::with_capacity(spec.scales - 1);
    let mut x = ssr_stack(t, &w.scales[0], act)?;
    for (j, kernel) in spec.down.iter().enumerate() {
        let plan = build_downsample_rulebook(x.coords(), x.spatial_shape(), kernel)?;
        let down = &w.downs[j];
        down.conv.check_spec(kernel)?;
        let h = apply_rulebook(x.features(), &plan.rulebook, &down.conv)?;
        let h = norm_act(&h, &down.norm, act)?;
        let coarse = SparseTensor::new(plan.coords.clone(), h, plan.spatial_shape.clone(), x.batch_size(), c)?;
        skips.push(x);
        plans.push(plan);
        x = ssr_stack(&coarse, &w.scales[j + 1], act)?;
    }
    for j in (0..plans.len()).rev() {
        let skip = skips.pop().expect("one skip per descent");
        let up = &w.ups[j];
        let h = inv_conv_apply(&x, skip.coords(), skip.spatial_shape(), &plans[j], &up.conv)?;
        let h = h.with_features(norm_act(h.features(), &up.norm, act)?, c)?;
        x = h.add_same_coords(&skip)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::ssr_block_forward;
    use crate::params::SeededSource;
    use crate::sparse::Coord;

    fn random_tensor(n: usize, shape: [usize; 2], c: usize) -> SparseTensor<f64> {
        let mut coords = Vec::new();
        let mut s = 12345u64;
        while coords.len() < n {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let y = ((s >> 33) % shape[0] as u64) as i32;
            let x = ((s >> 17) % shape[1] as u64) as i32;
            let p = Coord::new(0, &[y, x]);
            if !coords.contains(&p) {
                coords.push(p);
            }
        }
        let feats = (0..n * c).map(|v| ((v * 13 % 17) as f64 - 8.0) / 4.0).collect();
        SparseTensor::from_unsorted(coords, feats, shape.to_vec(), 1, c).unwrap()
    }

    #[test]
    fn single_scale_is_plain_ssr_stack() {
        let t = random_tensor(30, [12, 12], 3);
        let spec = SedBlockSpec::new(2, 1, 2, 3);
        let w = SedWeights::build(&spec, &mut SeededSource::new(9), "sed").unwrap();
        let out = sed_block_forward(&t, &spec, &w, Activation::Relu).unwrap();
        let mut x = t.clone();
        for b in &w.scales[0] {
            x = ssr_block_forward(&x, b, Activation::Relu).unwrap();
        }
        assert_eq!(out, x);
    }

    #[test]
    fn coordinates_preserved_for_three_scales() {
        let t = random_tensor(40, [16, 16], 2);
        let spec = SedBlockSpec::new(2, 3, 2, 2);
        let w = SedWeights::build(&spec, &mut SeededSource::new(3), "sed").unwrap();
        let out = sed_block_forward(&t, &spec, &w, Activation::Relu).unwrap();
        assert_eq!(out.coords(), t.coords());
        assert_eq!(out.spatial_shape(), t.spatial_shape());
    }

    #[test]
    fn mismatched_weights_rejected() {
        let t = random_tensor(5, [8, 8], 2);
        let spec = SedBlockSpec::new(2, 2, 1, 2);
        let w = SedWeights::build(&SedBlockSpec::new(2, 3, 1, 2), &mut SeededSource::new(3), "sed").unwrap();
        assert!(matches!(sed_block_forward(&t, &spec, &w, Activation::Relu), Err(Error::Shape(_))));
        let mut bad = spec.clone();
        bad.down.clear();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
