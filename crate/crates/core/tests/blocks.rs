use hednet_core::blocks::{
    ded_block_forward, dr_block_forward, rsr_block_forward, sed_block_forward, ssr_block_forward, DedBlockSpec,
    DedWeights, ResidualWeights, SedBlockSpec, SedWeights,
};
use hednet_core::dense::{dense_norm_act, DenseTensor};
use hednet_core::ops::Activation;
use hednet_core::params::{ConvNorm, SeededSource};
use hednet_core::sparse::{Coord, KernelSpec, SparseTensor};
use hednet_oracle::{
    chebyshev_dilation, dense_conv_reference, dense_conv_transpose_reference, influence_set, random_sparse_tensor,
    random_vec,
};
use proptest::prelude::*;

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![prop::collection::vec(4usize..24, 2), prop::collection::vec(2usize..10, 3)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sed_preserves_coordinates(
        shape in shape_strategy(),
        seed in any::<u64>(),
        density in 0.02f64..0.4,
        scales in 1usize..5,
        m in 1usize..3,
    ) {
        let t = random_sparse_tensor(seed, &shape, density, 2);
        let spec = SedBlockSpec::new(shape.len(), scales, m, 2);
        let w = SedWeights::build(&spec, &mut SeededSource::new(seed), "sed").unwrap();
        let out = sed_block_forward(&t, &spec, &w, Activation::Relu).unwrap();
        prop_assert_eq!(out.coords(), t.coords());
        prop_assert_eq!(out.spatial_shape(), t.spatial_shape());
    }

    #[test]
    fn single_scale_blocks_are_residual_stacks(seed in any::<u64>(), density in 0.05f64..0.6, m in 1usize..4) {
        let t = random_sparse_tensor(seed, &[9, 11], density, 3);
        let spec = SedBlockSpec::new(2, 1, m, 3);
        let w = SedWeights::build(&spec, &mut SeededSource::new(seed), "sed").unwrap();
        let mut x = t.clone();
        for b in &w.scales[0] {
            x = ssr_block_forward(&x, b, Activation::Relu).unwrap();
        }
        prop_assert_eq!(sed_block_forward(&t, &spec, &w, Activation::Relu).unwrap(), x);

        let dspec = DedBlockSpec { scales: 1, m, channels: 3 };
        let dw = DedWeights::build(&dspec, &mut SeededSource::new(seed), "ded").unwrap();
        let dense = t.to_dense();
        let mut y = dense.clone();
        for b in &dw.scales[0] {
            y = dr_block_forward(&y, 1, b, Activation::Relu).unwrap();
        }
        prop_assert_eq!(ded_block_forward(&dense, &dspec, &dw, Activation::Relu).unwrap(), y);
    }
}

#[test]
fn rsr_grows_chebyshev_balls() {
    for (shape, site) in [(vec![15, 15], vec![7, 7]), (vec![9, 9, 9], vec![1, 4, 8]), (vec![20, 20], vec![0, 3])] {
        let c = Coord::new(0, &site);
        let mut t = SparseTensor::new(vec![c], vec![1.0, -0.5], shape.clone(), 1, 2).unwrap();
        for l in 1..=3u32 {
            let w = ResidualWeights::build_sparse(&mut SeededSource::new(l as u64), "rsr", shape.len(), 3, 2).unwrap();
            t = rsr_block_forward(&t, &w, Activation::Relu).unwrap();
            let expected: Vec<Coord> = chebyshev_dilation(&[c], &shape, 2 * l).into_iter().collect();
            assert_eq!(t.coords(), expected.as_slice(), "L = {l}, shape {shape:?}");
        }
    }
}

fn pair_tensor(shape: &[usize], c: usize) -> SparseTensor<f64> {
    let coords = vec![Coord::new(0, &[0, 0]), Coord::new(0, &[0, 4])];
    SparseTensor::new(coords, random_vec(11, 2 * c), shape.to_vec(), 1, c).unwrap()
}

#[test]
fn ssr_stacks_keep_components_apart() {
    let t = pair_tensor(&[9, 9], 2);
    let (probe, far) = (Coord::new(0, &[0, 4]), Coord::new(0, &[0, 0]));
    for depth in 1..=8 {
        for seed in 0..3 {
            let mut src = SeededSource::new(seed);
            let blocks: Vec<_> =
                (0..depth).map(|k| ResidualWeights::build_sparse(&mut src, &format!("b{k}"), 2, 3, 2).unwrap()).collect();
            let run = |x: &SparseTensor<f64>| {
                blocks.iter().try_fold(x.clone(), |acc, b| ssr_block_forward(&acc, b, Activation::Identity))
            };
            let set = influence_set(run, &t, &probe).unwrap();
            assert!(set.contains(&probe));
            assert!(!set.contains(&far), "depth {depth}");
        }
    }
}

#[test]
fn two_scale_sed_connects_components() {
    let t = pair_tensor(&[9, 9], 2);
    let mut spec = SedBlockSpec::new(2, 2, 1, 2);
    spec.down = vec![KernelSpec::uniform(2, 3, 3, 0, 2, 2)];
    for seed in 0..10 {
        let w = SedWeights::build(&spec, &mut SeededSource::new(seed), "sed").unwrap();
        let set = influence_set(|x| sed_block_forward(x, &spec, &w, Activation::Identity), &t, &Coord::new(0, &[0, 4]))
            .unwrap();
        assert!(set.contains(&Coord::new(0, &[0, 0])), "seed {seed}");
    }
}

fn dense_cn(x: &DenseTensor<f64>, l: &ConvNorm<f64>, k: &KernelSpec, act: Activation) -> DenseTensor<f64> {
    dense_norm_act(&dense_conv_reference(x, k, &l.conv).unwrap(), &l.norm, act).unwrap()
}

fn dense_ssr(x: &DenseTensor<f64>, w: &ResidualWeights<f64>) -> DenseTensor<f64> {
    let k = KernelSpec::submanifold(x.shape().len() - 2, 3, x.channels(), x.channels());
    let h = dense_cn(x, &w.conv1, &k, Activation::Relu);
    let h = dense_cn(&h, &w.conv2, &k, Activation::Identity);
    h.add(x).unwrap().map(|v| v.max(0.0))
}

/// The SED block written with dense references only, valid when every cell
/// of the grid is active.
fn dense_sed(x: &DenseTensor<f64>, spec: &SedBlockSpec, w: &SedWeights<f64>) -> DenseTensor<f64> {
    let stack = |x: &DenseTensor<f64>, j: usize| w.scales[j].iter().fold(x.clone(), |acc, b| dense_ssr(&acc, b));
    let mut skips = Vec::new();
    let mut h = stack(x, 0);
    for (j, k) in spec.down.iter().enumerate() {
        let down = dense_cn(&h, &w.downs[j], k, Activation::Relu);
        skips.push(h);
        h = stack(&down, j + 1);
    }
    for (j, k) in spec.down.iter().enumerate().rev() {
        let skip = skips.pop().unwrap();
        let up = dense_conv_transpose_reference(&h, k, &w.ups[j].conv, &skip.shape()[2..]).unwrap();
        h = dense_norm_act(&up, &w.ups[j].norm, Activation::Relu).unwrap().add(&skip).unwrap();
    }
    h
}

#[test]
fn full_grid_sed_matches_dense_composition() {
    for (scales, shape) in [(1, vec![6, 7]), (2, vec![8, 8]), (3, vec![9, 6]), (3, vec![5, 4, 6])] {
        let t = random_sparse_tensor(scales as u64, &shape, 1.0, 2);
        let spec = SedBlockSpec::new(shape.len(), scales, 2, 2);
        let w = SedWeights::build(&spec, &mut SeededSource::new(7), "sed").unwrap();
        let sparse = sed_block_forward(&t, &spec, &w, Activation::Relu).unwrap().to_dense();
        let dense = dense_sed(&t.to_dense(), &spec, &w);
        for (a, b) in sparse.data().iter().zip(dense.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "S = {scales}: {a} vs {b}");
        }
        let sparse32 =
            sed_block_forward(&t.cast::<f32>(), &spec, &w.cast::<f32>(), Activation::Relu).unwrap().to_dense();
        for (a, b) in sparse32.data().iter().zip(dense.data()) {
            assert!((*a as f64 - b).abs() <= 1e-5 * b.abs().max(1.0), "S = {scales} (f32): {a} vs {b}");
        }
    }
}

#[test]
fn dr_matches_reference_composition() {
    let x = DenseTensor::from_vec(vec![2, 3, 6, 8], random_vec(3, 288)).unwrap();
    for stride in [1, 2] {
        let w = ResidualWeights::build_dense(&mut SeededSource::new(stride as u64), "dr", 3, stride).unwrap();
        let k1 = KernelSpec::uniform(2, 3, stride, 1, 3, 3);
        let k2 = KernelSpec::uniform(2, 3, 1, 1, 3, 3);
        let h = dense_cn(&x, &w.conv1, &k1, Activation::Relu);
        let h = dense_cn(&h, &w.conv2, &k2, Activation::Identity);
        let skip = match &w.proj {
            Some(p) => dense_cn(&x, p, &KernelSpec::uniform(2, 1, 2, 0, 3, 3), Activation::Identity),
            None => x.clone(),
        };
        let expected = h.add(&skip).unwrap().map(|v| v.max(0.0));
        let got = dr_block_forward(&x, stride, &w, Activation::Relu).unwrap();
        assert_eq!(got.shape(), expected.shape());
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

/// Nonzero features only on the square ring at Chebyshev distance `r` from
/// the grid center.
fn ring(n: usize, r: usize, c: usize, seed: u64) -> DenseTensor<f64> {
    let mut x = DenseTensor::zeros(vec![1, c, n, n]);
    let center = n / 2;
    let vals = random_vec(seed, n * n * c);
    for y in 0..n {
        for xx in 0..n {
            if y.abs_diff(center).max(xx.abs_diff(center)) == r {
                for ch in 0..c {
                    x.set(&[0, ch, y, xx], vals[(y * n + xx) * c + ch].abs() + 0.1);
                }
            }
        }
    }
    x
}

#[test]
fn ded_reaches_ring_center() {
    let (n, r, c) = (64, 17, 8);
    let mut hits = 0;
    for seed in 0..5 {
        let x = ring(n, r, c, seed);
        let run = |scales: usize| {
            let spec = DedBlockSpec { scales, m: 2, channels: c };
            let mut src = SeededSource::new(seed);
            let blocks: Vec<_> = (0..2).map(|i| DedWeights::build(&spec, &mut src, &format!("ded{i}")).unwrap()).collect();
            blocks.iter().fold(x.clone(), |acc, b| ded_block_forward(&acc, &spec, b, Activation::Relu).unwrap())
        };
        let center = |y: &DenseTensor<f64>| (0..c).map(|ch| y.get(&[0, ch, n / 2, n / 2]).abs()).sum::<f64>();
        assert_eq!(center(&run(1)), 0.0);
        if center(&run(3)) > 0.0 {
            hits += 1;
        }
    }
    assert!(hits >= 4, "{hits}/5");
}
