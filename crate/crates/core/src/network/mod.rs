//! Voxelization, BEV compression and the assembled backbone.

mod config;
mod model;
mod voxel;

pub use config::{ConvGeometry, NetworkConfig, NetworkPlan, StageConfig};
pub use model::{
    forward_voxels, hednet2d_forward, hednet_forward, layer_names, LayerRecord, NetworkOutput, NetworkWeights,
    StageWeights,
};
pub use voxel::{bev_compress, point_feature_width, voxelize_dynamic, PointCloud, Voxelized, VoxelGridSpec};
