use serde::{Deserialize, Serialize};

use crate::blocks::{DedBlockSpec, SedBlockSpec};
use crate::error::{Error, Result};
use crate::network::voxel::{point_feature_width, VoxelGridSpec};
use crate::sparse::KernelSpec;

/// Cubic convolution geometry shared by every axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const DOWN: Self = Self { kernel: 3, stride: 2, padding: 1 };

    pub fn kernel_spec(&self, ndim: usize, cin: usize, cout: usize) -> KernelSpec {
        KernelSpec::uniform(ndim, self.kernel, self.stride, self.padding, cin, cout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Strided sparse convolution entering the stage; it also changes the
    /// channel width. Without it the stage keeps the previous width.
    pub downsample: Option<ConvGeometry>,
}

fn default_stem() -> usize {
    2
}
fn default_scales() -> usize {
    3
}
fn default_m() -> usize {
    2
}
fn default_ded_count() -> usize {
    4
}
fn default_sed_down() -> ConvGeometry {
    ConvGeometry::DOWN
}

/// Full network description. `channels[0]` is the stem width and
/// `channels[i + 1]` the width of stage `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub dimensionality: usize,
    pub voxel_grid: VoxelGridSpec,
    /// Extra per-point channels after x, y, z (e.g. intensity).
    pub point_extras: usize,
    #[serde(default = "default_stem")]
    pub stem_blocks: usize,
    pub channels: Vec<usize>,
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_scales")]
    pub sed_scales: usize,
    #[serde(default = "default_sed_down")]
    pub sed_down: ConvGeometry,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_ded_count")]
    pub ded_count: usize,
    #[serde(default = "default_scales")]
    pub ded_scales: usize,
    #[serde(default = "default_m")]
    pub ded_m: usize,
}

/// Shapes the network produces for a config, derived once by `plan`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPlan {
    pub input_shape: Vec<usize>,
    pub stage_shapes: Vec<Vec<usize>>,
    /// `(C, H, W)` of the dense backbone.
    pub bev: [usize; 3],
}

impl NetworkConfig {
    fn base(dimensionality: usize, voxel_grid: VoxelGridSpec, channels: Vec<usize>, stages: Vec<StageConfig>) -> Self {
        Self {
            dimensionality,
            voxel_grid,
            point_extras: 1,
            stem_blocks: default_stem(),
            channels,
            stages,
            sed_scales: default_scales(),
            sed_down: ConvGeometry::DOWN,
            m: default_m(),
            ded_count: default_ded_count(),
            ded_scales: default_scales(),
            ded_m: default_m(),
        }
    }

    /// 3-d network with three stride-2 stages.
    pub fn hednet(voxel_grid: VoxelGridSpec, channels: Vec<usize>) -> Self {
        let stages = vec![StageConfig { downsample: Some(ConvGeometry::DOWN) }; channels.len().saturating_sub(1)];
        Self::base(3, voxel_grid, channels, stages)
    }

    /// Small 3-d network on a 64 x 64 x 16 grid with two DED blocks.
    pub fn desk() -> Self {
        Self { ded_count: 2, ..Self::hednet(VoxelGridSpec::desk(), vec![16, 32, 64, 128]) }
    }

    pub fn nuscenes() -> Self {
        Self::hednet(VoxelGridSpec::nuscenes(), vec![16, 32, 64, 128])
    }

    /// 2-d pillar network: no stem, no stage downsampling, full-resolution output.
    pub fn hednet2d(voxel_grid: VoxelGridSpec, channels: usize, stages: usize) -> Self {
        Self {
            stem_blocks: 0,
            ..Self::base(2, voxel_grid, vec![channels; stages + 1], vec![StageConfig { downsample: None }; stages])
        }
    }

    pub fn point_feature_width(&self) -> usize {
        point_feature_width(self.point_extras)
    }

    pub fn stage_channels(&self, i: usize) -> (usize, usize) {
        (self.channels[i], self.channels[i + 1])
    }

    pub fn sed_spec(&self, stage: usize) -> SedBlockSpec {
        let c = self.channels[stage + 1];
        let mut spec = SedBlockSpec::new(self.dimensionality, self.sed_scales, self.m, c);
        spec.down = (1..self.sed_scales).map(|_| self.sed_down.kernel_spec(self.dimensionality, c, c)).collect();
        spec
    }

    pub fn ded_spec(&self, bev_channels: usize) -> DedBlockSpec {
        DedBlockSpec { scales: self.ded_scales, m: self.ded_m, channels: bev_channels }
    }

    /// Validates the config and derives every intermediate shape.
    pub fn plan(&self) -> Result<NetworkPlan> {
        let cfg_err = |msg: String| Error::Config(format!("config: {msg}"));
        if !(2..=3).contains(&self.dimensionality) {
            return Err(cfg_err(format!("dimensionality must be 2 or 3, got {}", self.dimensionality)));
        }
        if self.channels.len() != self.stages.len() + 1 {
            return Err(cfg_err(format!(
                "channels has {} entries but {} stages need {}",
                self.channels.len(),
                self.stages.len(),
                self.stages.len() + 1
            )));
        }
        if self.channels.contains(&0) {
            return Err(cfg_err("channels must be positive".into()));
        }
        if self.sed_scales == 0 || self.m == 0 || self.ded_scales == 0 || self.ded_m == 0 {
            return Err(cfg_err("sed_scales, m, ded_scales and ded_m must be >= 1".into()));
        }
        let grid = self.voxel_grid.grid_shape()?;
        let mut shape = match self.dimensionality {
            3 => grid,
            _ => {
                if grid[0] != 1 {
                    return Err(cfg_err(format!("2-d network needs a single vertical cell, grid has {}", grid[0])));
                }
                grid[1..].to_vec()
            }
        };
        let input_shape = shape.clone();
        let mut stage_shapes = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let (cin, cout) = self.stage_channels(i);
            match stage.downsample {
                Some(g) => {
                    let k = g.kernel_spec(self.dimensionality, cin, cout);
                    shape = k.output_shape(&shape).map_err(|e| cfg_err(format!("stages[{i}].downsample: {e}")))?;
                }
                None if cin != cout => {
                    return Err(cfg_err(format!(
                        "stages[{i}] has no downsample but changes channels {cin} -> {cout}"
                    )))
                }
                None => {}
            }
            let sed = self.sed_spec(i);
            sed.validate().map_err(|e| cfg_err(format!("stages[{i}].sed: {e}")))?;
            let mut s = shape.clone();
            for (j, k) in sed.down.iter().enumerate() {
                s = k.output_shape(&s).map_err(|e| cfg_err(format!("stages[{i}].sed.down{j}: {e}")))?;
            }
            stage_shapes.push(shape.clone());
        }
        let c = *self.channels.last().expect("non-empty channels");
        let bev = match self.dimensionality {
            3 => [c * shape[0], shape[1], shape[2]],
            _ => [c, shape[0], shape[1]],
        };
        let factor = 1usize << (self.ded_scales - 1);
        if self.ded_count > 0 && (bev[1] % factor != 0 || bev[2] % factor != 0) {
            return Err(cfg_err(format!(
                "BEV map {}x{} is not divisible by {factor} as {} DED scales require",
                bev[1], bev[2], self.ded_scales
            )));
        }
        Ok(NetworkPlan { input_shape, stage_shapes, bev })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_plan() {
        let plan = NetworkConfig::desk().plan().unwrap();
        assert_eq!(plan.input_shape, vec![16, 64, 64]);
        assert_eq!(plan.stage_shapes, vec![vec![8, 32, 32], vec![4, 16, 16], vec![2, 8, 8]]);
        assert_eq!(plan.bev, [256, 8, 8]);
    }

    #[test]
    fn presets_plan() {
        assert_eq!(NetworkConfig::nuscenes().plan().unwrap().bev, [128 * 5, 180, 180]);
        // 1880 / 8 = 235 cannot be halved twice by the dense backbone.
        let waymo = NetworkConfig::hednet(VoxelGridSpec::waymo(), vec![16, 32, 64, 128]);
        assert!(matches!(waymo.plan(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = NetworkConfig::desk();
        cfg.channels.pop();
        assert!(matches!(cfg.plan(), Err(Error::Config(_))));
        let mut cfg = NetworkConfig::hednet2d(VoxelGridSpec::desk(), 8, 1);
        assert!(cfg.plan().is_err());
        cfg.voxel_grid.voxel_size[2] = 6.0;
        cfg.ded_count = 1;
        assert_eq!(cfg.plan().unwrap().bev, [8, 64, 64]);
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(NetworkConfig::desk()).unwrap();
        let back: NetworkConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, NetworkConfig::desk());
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<NetworkConfig>(v).is_err());
    }
}
