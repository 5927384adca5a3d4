use std::time::{Duration, Instant};

use crate::blocks::{
    ded_block_forward, sed_block_forward, ssr_block_planned, DedWeights, ResidualWeights, SedWeights, SubmanifoldPlans,
};
use crate::dense::DenseTensor;
use crate::error::{shape_err, Error, Result};
use crate::network::config::{NetworkConfig, NetworkPlan};
use crate::network::voxel::{bev_compress, voxelize_dynamic, PointCloud};
use crate::ops::{apply_rulebook, norm_act, rs_conv_apply, Activation};
use crate::params::{ConvNorm, ParamSource};
use crate::scalar::Scalar;
use crate::sparse::{build_downsample_rulebook, build_submanifold_rulebook, KernelSpec, SparseTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights<T> {
    pub down: Option<ConvNorm<T>>,
    pub sed: SedWeights<T>,
}

/// Every parameter of a network. Record names: `vfe`, `stem.ssr{k}`,
/// `stage{i}.down`, `stage{i}.sed.scale{j}.ssr{k}`, `stage{i}.sed.down{j}`,
/// `stage{i}.sed.up{j}`, `ded{i}.scale{j}.dr{k}`, `ded{i}.down{j}`,
/// `ded{i}.up{j}`, each followed by `.w`, `.gamma`, `.beta`, `.mean`, `.var`
/// (residual blocks add `.conv1` / `.conv2` / `.proj`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T> {
    pub vfe: ConvNorm<T>,
    pub stem: Vec<ResidualWeights<T>>,
    pub stages: Vec<StageWeights<T>>,
    pub ded: Vec<DedWeights<T>>,
}

impl<T: Scalar> NetworkWeights<T> {
    pub fn build(cfg: &NetworkConfig, src: &mut dyn ParamSource) -> Result<Self> {
        let plan = cfg.plan()?;
        let d = cfg.dimensionality;
        let c0 = cfg.channels[0];
        let vfe = ConvNorm::build(src, "vfe", &vec![1; d], cfg.point_feature_width(), c0)?;
        let stem = (0..cfg.stem_blocks)
            .map(|k| ResidualWeights::build_sparse(src, &format!("stem.ssr{k}"), d, 3, c0))
            .collect::<Result<Vec<_>>>()?;
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (i, stage) in cfg.stages.iter().enumerate() {
            let (cin, cout) = cfg.stage_channels(i);
            let down = match stage.downsample {
                Some(g) => Some(ConvNorm::build(src, &format!("stage{i}.down"), &vec![g.kernel; d], cin, cout)?),
                None => None,
            };
            let sed = SedWeights::build(&cfg.sed_spec(i), src, &format!("stage{i}.sed"))?;
            stages.push(StageWeights { down, sed });
        }
        let ded_spec = cfg.ded_spec(plan.bev[0]);
        let ded = (0..cfg.ded_count)
            .map(|i| DedWeights::build(&ded_spec, src, &format!("ded{i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { vfe, stem, stages, ded })
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            vfe: self.vfe.cast(),
            stem: self.stem.iter().map(|b| b.cast()).collect(),
            stages: self
                .stages
                .iter()
                .map(|s| StageWeights { down: s.down.as_ref().map(|d| d.cast()), sed: s.sed.cast() })
                .collect(),
            ded: self.ded.iter().map(|b| b.cast()).collect(),
        }
    }
}

/// Active sites, sparsity and wall time of one layer of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub active: usize,
    pub sparsity: f64,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput<T> {
    pub bev: DenseTensor<T>,
    pub layers: Vec<LayerRecord>,
}

/// Layer names in the order a forward pass reports them.
pub fn layer_names(cfg: &NetworkConfig) -> Vec<String> {
    let mut names = vec!["vfe".to_string()];
    names.extend((0..cfg.stem_blocks).map(|k| format!("stem.ssr{k}")));
    for (i, stage) in cfg.stages.iter().enumerate() {
        if stage.downsample.is_some() {
            names.push(format!("stage{i}.down"));
        }
        names.push(format!("stage{i}.sed"));
    }
    names.push("bev".into());
    names.extend((0..cfg.ded_count).map(|i| format!("ded{i}")));
    names
}

struct Trace {
    layers: Vec<LayerRecord>,
    clock: Instant,
}

impl Trace {
    fn new() -> Self {
        Self { layers: Vec::new(), clock: Instant::now() }
    }

    fn sparse<T: Scalar>(&mut self, name: String, t: &SparseTensor<T>) {
        self.push(name, t.len(), t.sparsity());
    }

    fn dense<T: Scalar>(&mut self, name: String, t: &DenseTensor<T>) {
        let cells = t.batch() * t.plane();
        let active = t.active_cells();
        let sparsity = if cells == 0 { 1.0 } else { 1.0 - active as f64 / cells as f64 };
        self.push(name, active, sparsity);
    }

    fn push(&mut self, name: String, active: usize, sparsity: f64) {
        let now = Instant::now();
        self.layers.push(LayerRecord { name, active, sparsity, elapsed: now - self.clock });
        self.clock = now;
    }
}

fn check_structure<T: Scalar>(cfg: &NetworkConfig, plan: &NetworkPlan, w: &NetworkWeights<T>) -> Result<()> {
    let err = |what: &str| Err(Error::Config(format!("weights: {what} does not match the config")));
    if w.stem.len() != cfg.stem_blocks {
        return err("stem block count");
    }
    if w.stages.len() != cfg.stages.len() {
        return err("stage count");
    }
    if w.ded.len() != cfg.ded_count {
        return err("DED block count");
    }
    let d = cfg.dimensionality;
    let vfe_k = vec![1; d];
    if w.vfe.conv.kernel_size() != vfe_k.as_slice()
        || w.vfe.conv.in_channels() != cfg.point_feature_width()
        || w.vfe.conv.out_channels() != cfg.channels[0]
    {
        return err("vfe");
    }
    for (i, (s, sc)) in w.stages.iter().zip(&cfg.stages).enumerate() {
        let (cin, cout) = cfg.stage_channels(i);
        let ok = match (&s.down, sc.downsample) {
            (None, None) => true,
            (Some(down), Some(g)) => down.conv.check_spec(&g.kernel_spec(d, cin, cout)).is_ok(),
            _ => false,
        };
        if !ok {
            return err(&format!("stage{i}.down"));
        }
    }
    if let Some(b) = w.ded.first().and_then(|b| b.scales.first()).and_then(|s| s.first()) {
        if b.channels() != plan.bev[0] {
            return err("ded0 width");
        }
    }
    Ok(())
}

/// Pointwise linear layer with normalization on voxel features.
fn vfe_forward<T: Scalar>(t: &SparseTensor<T>, w: &ConvNorm<T>, act: Activation) -> Result<SparseTensor<T>> {
    let k = KernelSpec::submanifold(t.ndim(), 1, t.channels(), w.conv.out_channels());
    w.conv.check_spec(&k)?;
    let rb = build_submanifold_rulebook(t.coords(), t.spatial_shape(), &k)?;
    let h = apply_rulebook(t.features(), &rb, &w.conv)?;
    t.with_features(norm_act(&h, &w.norm, act)?, w.conv.out_channels())
}

/// Runs the network on voxel features as produced by voxelization: a
/// `(z, y, x)` tensor for 3-d configs (a single-cell `z` axis is squeezed
/// for 2-d configs) with the point feature width.
pub fn forward_voxels<T: Scalar>(
    voxels: &SparseTensor<T>,
    cfg: &NetworkConfig,
    w: &NetworkWeights<T>,
    act: Activation,
) -> Result<NetworkOutput<T>> {
    let plan = cfg.plan()?;
    check_structure(cfg, &plan, w)?;
    let d = cfg.dimensionality;
    let mut trace = Trace::new();
    let x = if d == 2 && voxels.ndim() == 3 { voxels.squeeze_axis(0)? } else { voxels.clone() };
    if x.spatial_shape() != plan.input_shape.as_slice() || x.channels() != cfg.point_feature_width() {
        return Err(shape_err!(
            "network input must have spatial shape {:?} and {} channels, got {:?} and {}",
            plan.input_shape,
            cfg.point_feature_width(),
            x.spatial_shape(),
            x.channels()
        ));
    }
    let mut x = vfe_forward(&x, &w.vfe, act)?;
    trace.sparse("vfe".into(), &x);
    let mut plans = SubmanifoldPlans::for_tensor(&x);
    for (k, b) in w.stem.iter().enumerate() {
        x = ssr_block_planned(&x, b, act, &mut plans)?;
        trace.sparse(format!("stem.ssr{k}"), &x);
    }
    for (i, (stage, sc)) in w.stages.iter().zip(&cfg.stages).enumerate() {
        if let (Some(down), Some(g)) = (&stage.down, sc.downsample) {
            let (cin, cout) = cfg.stage_channels(i);
            let plan = build_downsample_rulebook(x.coords(), x.spatial_shape(), &g.kernel_spec(d, cin, cout))?;
            let h = rs_conv_apply(&x, &plan, &down.conv)?;
            x = h.with_features(norm_act(h.features(), &down.norm, act)?, cout)?;
            trace.sparse(format!("stage{i}.down"), &x);
        }
        x = sed_block_forward(&x, &cfg.sed_spec(i), &stage.sed, act)?;
        trace.sparse(format!("stage{i}.sed"), &x);
    }
    let mut bev = if d == 3 { bev_compress(&x)? } else { x.to_dense() };
    trace.dense("bev".into(), &bev);
    let ded_spec = cfg.ded_spec(plan.bev[0]);
    for (i, b) in w.ded.iter().enumerate() {
        bev = ded_block_forward(&bev, &ded_spec, b, act)?;
        trace.dense(format!("ded{i}"), &bev);
    }
    Ok(NetworkOutput { bev, layers: trace.layers })
}

/// Voxelizes a point cloud (batch 0) and runs the full network.
pub fn hednet_forward<T: Scalar>(
    pc: &PointCloud,
    cfg: &NetworkConfig,
    w: &NetworkWeights<T>,
) -> Result<NetworkOutput<T>> {
    if pc.num_extra() != cfg.point_extras {
        return Err(Error::Config(format!(
            "config: point_extras is {} but the cloud carries {} extra channels",
            cfg.point_extras,
            pc.num_extra()
        )));
    }
    let v = voxelize_dynamic::<T>(pc, &cfg.voxel_grid, 0)?;
    forward_voxels(&v.tensor, cfg, w, Activation::Relu)
}

/// The pillar variant: requires a 2-d config and a single vertical cell.
pub fn hednet2d_forward<T: Scalar>(
    pc: &PointCloud,
    cfg: &NetworkConfig,
    w: &NetworkWeights<T>,
) -> Result<NetworkOutput<T>> {
    if cfg.dimensionality != 2 {
        return Err(Error::Config(format!("config: 2-d forward needs dimensionality 2, got {}", cfg.dimensionality)));
    }
    hednet_forward(pc, cfg, w)
}
