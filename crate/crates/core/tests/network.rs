use hednet_core::digest::tensor_digest;
use hednet_core::network::{
    bev_compress, forward_voxels, hednet2d_forward, hednet_forward, voxelize_dynamic, NetworkConfig, NetworkWeights,
    PointCloud, VoxelGridSpec,
};
use hednet_core::ops::Activation;
use hednet_core::params::SeededSource;
use hednet_core::sparse::{Coord, SparseTensor};
use hednet_oracle::{chebyshev_dilation, influence_set, random_vec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk_cloud(seed: u64, n: usize) -> PointCloud {
    let u = random_vec(seed, 4 * n);
    let mut values = Vec::with_capacity(4 * n);
    for p in u.chunks(4) {
        // Squash normals into the desk range with some points left outside.
        values.extend([p[0].tanh() * 27.0, p[1].tanh() * 27.0, p[2].tanh() * 3.5 + 1.0, p[3].abs()]);
    }
    PointCloud::new(1, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn voxelization_ignores_point_order(seed in any::<u64>(), n in 0usize..400, dup in 0usize..50) {
        let base = desk_cloud(seed, n);
        // Repeat some points so several voxels pool more than one point.
        let mut values = base.values().to_vec();
        for i in 0..dup.min(n) {
            values.extend_from_slice(base.point(i));
        }
        let pc = PointCloud::new(1, values).unwrap();
        let mut order: Vec<usize> = (0..pc.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut shuffled = PointCloud::empty(1);
        for &i in &order {
            shuffled.push(pc.point(i)).unwrap();
        }
        let spec = VoxelGridSpec::desk();
        let a = voxelize_dynamic::<f32>(&pc, &spec, 0).unwrap();
        let b = voxelize_dynamic::<f32>(&shuffled, &spec, 0).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.points_kept + a.dropped_out_of_range, pc.len());
        let bev = bev_compress(&a.tensor).unwrap();
        prop_assert!(bev.active_cells() <= a.tensor.len());
    }
}

#[test]
fn desk_forward_is_thread_count_independent() {
    let cfg = NetworkConfig::desk();
    let w = NetworkWeights::<f32>::build(&cfg, &mut SeededSource::new(42)).unwrap();
    let pc = desk_cloud(1, 3000);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| tensor_digest(&hednet_forward(&pc, &cfg, &w).unwrap().bev))
    };
    let d1 = run(1);
    assert_eq!(d1, run(3));
    assert_eq!(d1, run(1));
    let out = hednet_forward(&pc, &cfg, &w).unwrap();
    assert_eq!(out.bev.shape(), &[1, 256, 8, 8]);
    assert!(out.bev.data().iter().any(|&v| v != 0.0));
}

fn pillar_config() -> NetworkConfig {
    let mut grid = VoxelGridSpec::desk();
    grid.voxel_size[2] = 6.0;
    let mut cfg = NetworkConfig::hednet2d(grid, 4, 1);
    cfg.ded_count = 0;
    cfg
}

#[test]
fn pillar_network_keeps_grid_resolution() {
    let cfg = pillar_config();
    let w = NetworkWeights::<f64>::build(&cfg, &mut SeededSource::new(3)).unwrap();
    let out = hednet2d_forward(&desk_cloud(5, 500), &cfg, &w).unwrap();
    assert_eq!(out.bev.shape(), &[1, 4, 64, 64]);
}

#[test]
fn pillar_impulse_stays_within_receptive_field() {
    let cfg = pillar_config();
    let w = NetworkWeights::<f64>::build(&cfg, &mut SeededSource::new(9)).unwrap();
    let width = cfg.point_feature_width();
    let coords: Vec<Coord> = (0..64).step_by(3).flat_map(|y| (0..64).step_by(2).map(move |x| Coord::new(0, &[y, x]))).collect();
    let base = SparseTensor::new(coords.clone(), random_vec(1, coords.len() * width), vec![64, 64], 1, width).unwrap();
    let probe = Coord::new(0, &[3, 2]);
    // The sparse path keeps the input coordinates, so the map is read back there.
    let run = |t: &SparseTensor<f64>| {
        let out = forward_voxels(t, &cfg, &w, Activation::Identity)?;
        t.with_features(gather(&out.bev, t.coords()), 4)
    };
    let set = influence_set(run, &base, &probe).unwrap();
    assert!(set.contains(&probe));
    // One SED block of three scales: two SSR blocks reach 4 cells at each
    // scale (4, 8 and 16 fine cells), and each k3 s2 p1 descent or ascent
    // adds at most 2 or 4 fine cells.
    let bound: Vec<Coord> = chebyshev_dilation(&[probe], &[64, 64], 4 + 8 + 16 + 2 * (2 + 4)).into_iter().collect();
    assert!(set.coords.iter().all(|c| bound.contains(c)));
    assert!(set.len() > 1);
    assert!(set.len() < coords.len());
}

fn gather(bev: &hednet_core::dense::DenseTensor<f64>, coords: &[Coord]) -> Vec<f64> {
    let c = bev.channels();
    coords
        .iter()
        .flat_map(|p| (0..c).map(move |ch| bev.get(&[0, ch, p.spatial()[0] as usize, p.spatial()[1] as usize])))
        .collect()
}

#[test]
fn empty_cloud_gives_zero_map() {
    let cfg = NetworkConfig::desk();
    let w = NetworkWeights::<f64>::build(&cfg, &mut SeededSource::new(1)).unwrap();
    let out = hednet_forward(&PointCloud::empty(1), &cfg, &w).unwrap();
    assert!(out.bev.data().iter().all(|&v| v == 0.0));
    assert!(out.layers.iter().all(|l| l.active == 0 && l.sparsity == 1.0));
}
