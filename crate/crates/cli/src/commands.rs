//! The subcommands, callable without going through argument parsing.

use std::path::{Path, PathBuf};

use hednet_core::digest::tensor_digest;
use hednet_core::network::{
    forward_voxels, hednet_forward, voxelize_dynamic, NetworkConfig, NetworkOutput, NetworkWeights, VoxelGridSpec,
};
use hednet_core::ops::Activation;
use hednet_core::params::{RecordSource, SeededSource};
use hednet_core::sparse::SparseTensor;
use hednet_core::Scalar;
use hednet_oracle::{random_coords, random_vec};

use crate::error::{CliError, CliResult};
use crate::formats::{read_config, read_point_cloud, read_sparse, read_weights, write_sparse, write_weights};
use crate::gradcheck::{gradcheck, GradLayer, GradOptions};
use crate::report::{bench_report, format_digest, RunReport};

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GridPreset {
    Waymo,
    Nuscenes,
    Pillars,
    Desk,
}

impl GridPreset {
    pub fn spec(self) -> VoxelGridSpec {
        match self {
            GridPreset::Waymo => VoxelGridSpec::waymo(),
            GridPreset::Nuscenes => VoxelGridSpec::nuscenes(),
            GridPreset::Pillars => VoxelGridSpec::pillars(),
            GridPreset::Desk => VoxelGridSpec::desk(),
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn voxelize(input: &Path, grid: &VoxelGridSpec, output: &Path) -> CliResult<()> {
    let pc = read_point_cloud(input)?;
    let v = voxelize_dynamic::<f32>(&pc, grid, 0).map_err(|e| CliError::Config(format!("voxel grid: {e}")))?;
    write_sparse(output, &v.tensor)?;
    println!("points {}", pc.len());
    println!("kept {}", v.points_kept);
    println!("out_of_range {}", v.dropped_out_of_range);
    println!("nonfinite {}", v.dropped_nonfinite);
    println!("voxels {}", v.tensor.len());
    println!("sparsity {}", v.tensor.sparsity());
    if v.dropped_nonfinite > 0 {
        eprintln!("warning: dropped {} points with non-finite values", v.dropped_nonfinite);
    }
    Ok(())
}

/// Weights from a file, checked against the config record by record.
pub fn load_weights(cfg: &NetworkConfig, path: &Path) -> CliResult<NetworkWeights<f32>> {
    let mut src = RecordSource::new(read_weights(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let w = NetworkWeights::build(cfg, &mut src).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    src.finish().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(w)
}

/// Network input from a point cloud (`.csv`, `.bin`) or voxel tensor (`.spt`).
enum Input {
    Cloud(hednet_core::network::PointCloud),
    Voxels(SparseTensor<f32>),
}

fn read_input(path: &Path) -> CliResult<Input> {
    if path.extension().is_some_and(|e| e == "spt") {
        Ok(Input::Voxels(read_sparse(path)?))
    } else {
        Ok(Input::Cloud(read_point_cloud(path)?))
    }
}

fn run_network<T: Scalar>(cfg: &NetworkConfig, w: &NetworkWeights<f32>, input: &Input) -> CliResult<NetworkOutput<T>> {
    let w = w.cast::<T>();
    let out = match input {
        Input::Cloud(pc) => hednet_forward(pc, cfg, &w),
        Input::Voxels(t) => forward_voxels(&t.cast::<T>(), cfg, &w, Activation::Relu),
    };
    Ok(out?)
}

fn forward_typed<T: Scalar>(
    cfg: &NetworkConfig,
    w: &NetworkWeights<f32>,
    input: &Input,
    output: &Path,
    report: Option<&Path>,
    precision: Precision,
) -> CliResult<u64> {
    let out = run_network::<T>(cfg, w, input)?;
    let digest = tensor_digest(&out.bev);
    let map = SparseTensor::from_dense(&out.bev.cast::<f32>())?;
    write_sparse(output, &map)?;
    let rep = RunReport::new(precision.name(), &out.layers, out.bev.shape().to_vec(), digest);
    for l in &rep.layers {
        println!("{:<24} active {:>8}  sparsity {:.6}  {:>10.3} ms", l.name, l.active, l.sparsity, l.time_ms);
    }
    println!("output {:?}", rep.output_shape);
    println!("digest {}", rep.digest);
    if let Some(path) = report {
        write_json(path, &rep)?;
    }
    Ok(digest)
}

pub struct ForwardArgs<'a> {
    pub config: &'a Path,
    pub weights: &'a Path,
    pub input: &'a Path,
    pub output: &'a Path,
    pub report: Option<&'a Path>,
    pub precision: Precision,
}

pub fn forward(a: &ForwardArgs) -> CliResult<u64> {
    let cfg = read_config(a.config)?;
    let w = load_weights(&cfg, a.weights)?;
    let input = read_input(a.input)?;
    if let Input::Cloud(pc) = &input {
        if !pc.is_empty() && pc.num_extra() != cfg.point_extras {
            return Err(CliError::Config(format!(
                "{}: point_extras is {} but {} carries {} extra columns",
                a.config.display(),
                cfg.point_extras,
                a.input.display(),
                pc.num_extra()
            )));
        }
    }
    // An empty CSV has no header to say how many extras it would carry.
    let input = match input {
        Input::Cloud(pc) if pc.is_empty() => Input::Cloud(hednet_core::network::PointCloud::empty(cfg.point_extras)),
        other => other,
    };
    match a.precision {
        Precision::F32 => forward_typed::<f32>(&cfg, &w, &input, a.output, a.report, a.precision),
        Precision::F64 => forward_typed::<f64>(&cfg, &w, &input, a.output, a.report, a.precision),
    }
}

pub fn init_weights(config: &Path, seed: u64, output: &Path) -> CliResult<()> {
    let cfg = read_config(config)?;
    let mut src = SeededSource::new(seed);
    NetworkWeights::<f32>::build(&cfg, &mut src)?;
    let records = src.into_records();
    let params: usize = records.iter().map(|r| r.data.len()).sum();
    write_weights(output, &records)?;
    println!("records {}", records.len());
    println!("parameters {params}");
    Ok(())
}

pub struct BenchArgs<'a> {
    pub config: &'a Path,
    pub weights: &'a Path,
    pub density: f64,
    pub repeats: usize,
    pub seed: u64,
    pub precision: Precision,
    pub report: Option<&'a Path>,
}

/// Seeded voxel input: each grid cell active with probability `density`.
pub fn random_voxels(cfg: &NetworkConfig, density: f64, seed: u64) -> CliResult<SparseTensor<f32>> {
    let shape = cfg.voxel_grid.grid_shape()?;
    let coords = random_coords(seed, &shape, density);
    let width = cfg.point_feature_width();
    let feats = random_vec(seed ^ 0x5eed, coords.len() * width).into_iter().map(|v| v as f32).collect();
    Ok(SparseTensor::new(coords, feats, shape, 1, width)?)
}

fn bench_typed<T: Scalar>(cfg: &NetworkConfig, w: &NetworkWeights<f32>, a: &BenchArgs) -> CliResult<()> {
    let voxels = random_voxels(cfg, a.density, a.seed)?;
    let input = Input::Voxels(voxels.clone());
    let mut runs = Vec::with_capacity(a.repeats);
    let mut digests = Vec::with_capacity(a.repeats);
    for _ in 0..a.repeats {
        let out = run_network::<T>(cfg, w, &input)?;
        digests.push(tensor_digest(&out.bev));
        runs.push(out.layers);
    }
    let rep = bench_report(a.precision.name(), a.density, voxels.len(), &runs, &digests);
    println!("input active {} of {} cells", voxels.len(), voxels.spatial_shape().iter().product::<usize>());
    for l in &rep.layers {
        println!(
            "{:<24} active {:>8}  sparsity {:.6}  median {:>10.3} ms  min {:>10.3} ms",
            l.name, l.active, l.sparsity, l.timing.median_ms, l.timing.min_ms
        );
    }
    println!("end-to-end median {:.3} ms  min {:.3} ms over {} runs", rep.end_to_end.median_ms, rep.end_to_end.min_ms, a.repeats);
    if let Some(path) = a.report {
        write_json(path, &rep)?;
    }
    if let Some(d) = digests.iter().find(|&&d| d != digests[0]) {
        return Err(CliError::Check(format!(
            "runs disagree: digest {} vs {}",
            format_digest(digests[0]),
            format_digest(*d)
        )));
    }
    if let Some(d) = digests.first() {
        println!("digest {}", format_digest(*d));
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.density) {
        return Err(CliError::Config(format!("density must lie in [0, 1], got {}", a.density)));
    }
    if a.repeats == 0 {
        return Err(CliError::Config("repeats must be at least 1".into()));
    }
    let cfg = read_config(a.config)?;
    let w = load_weights(&cfg, a.weights)?;
    match a.precision {
        Precision::F32 => bench_typed::<f32>(&cfg, &w, a),
        Precision::F64 => bench_typed::<f64>(&cfg, &w, a),
    }
}

pub struct GradcheckArgs<'a> {
    pub config: Option<&'a Path>,
    pub seed: u64,
    pub layer: Option<GradLayer>,
    pub instances: usize,
    pub corrupt: bool,
}

pub fn run_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let mut opts = GradOptions { seed: a.seed, instances: a.instances, corrupt: a.corrupt, ..Default::default() };
    if let Some(path) = a.config {
        let cfg = read_config(path)?;
        opts.ndim = cfg.dimensionality;
        opts.max_channels = cfg.channels[0].clamp(1, 4);
    }
    let layers = a.layer.map_or(GradLayer::ALL.to_vec(), |l| vec![l]);
    let mut failures = Vec::new();
    for layer in layers {
        let r = gradcheck(layer, &opts)?;
        println!(
            "{layer}: max rel err {:.3e} over {} components in {} instances ({} skipped near kinks)",
            r.max_rel_err, r.components, r.instances, r.skipped
        );
        if r.max_rel_err.is_nan() || r.max_rel_err >= GRADCHECK_TOLERANCE {
            let w = r.worst.as_ref().expect("a failing check has a worst component");
            failures.push(format!(
                "{layer}: worst component {} of instance {}: analytic {:.9e}, numeric {:.9e}",
                w.component, w.instance, w.analytic, w.numeric
            ));
        }
    }
    if failures.is_empty() {
        println!("gradcheck passed (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        Err(CliError::Check(failures.join("\n")))
    }
}

/// Resolves the voxel grid for `voxelize`: a config file wins over a preset.
pub fn grid_for(config: Option<&PathBuf>, preset: GridPreset) -> CliResult<VoxelGridSpec> {
    match config {
        Some(p) => Ok(read_config(p)?.voxel_grid),
        None => Ok(preset.spec()),
    }
}
