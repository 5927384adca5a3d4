use hednet_core::dense::{dense_conv2d_forward, dense_deconv2d_forward, DenseTensor};
use hednet_core::ops::{inv_conv_forward, rs_conv_forward, ss_conv_forward, ConvWeights};
use hednet_core::sparse::{build_downsample_rulebook, KernelSpec, SparseTensor};
use hednet_oracle::{
    dense_conv_reference, dense_conv_transpose_reference, random_sparse_tensor, random_vec, submanifold_reference,
};
use proptest::prelude::*;

fn weights(seed: u64, kernel: &[usize], cin: usize, cout: usize, bias: bool) -> ConvWeights<f64> {
    let taps: usize = kernel.iter().product();
    let w = random_vec(seed, taps * cin * cout);
    let b = bias.then(|| random_vec(seed + 1, cout));
    ConvWeights::new(kernel.to_vec(), cin, cout, w, b).unwrap()
}

/// Values of `dense` at the rows of `coords`, in row-major `(row, channel)` order.
fn gather(dense: &DenseTensor<f64>, like: &SparseTensor<f64>) -> Vec<f64> {
    let c = dense.channels();
    let mut out = Vec::with_capacity(like.len() * c);
    let mut idx = vec![0; dense.shape().len()];
    for coord in like.coords() {
        idx[0] = coord.batch() as usize;
        for (a, &v) in coord.spatial().iter().enumerate() {
            idx[a + 2] = v as usize;
        }
        for ch in 0..c {
            idx[1] = ch;
            out.push(dense.get(&idx));
        }
    }
    out
}

fn close_f32(a: &[f32], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| (x as f64 - y).abs() <= 1e-5 * y.abs().max(1.0))
}

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![prop::collection::vec(3usize..16, 2), prop::collection::vec(2usize..8, 3)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn submanifold_matches_masked_reference(
        shape in shape_strategy(),
        seed in any::<u64>(),
        density in 0.05f64..0.7,
        k in prop_oneof![Just(1usize), Just(3), Just(5)],
        cin in 1usize..4,
        cout in 1usize..4,
    ) {
        let t = random_sparse_tensor(seed, &shape, density, cin);
        let kernel = KernelSpec::submanifold(shape.len(), k, cin, cout);
        let w = weights(seed ^ 1, &kernel.kernel_size, cin, cout, true);
        let (y, _) = ss_conv_forward(&t, &kernel, &w).unwrap();
        let reference = submanifold_reference(&t.to_dense(), t.coords(), &kernel, &w).unwrap();
        let expected = gather(&reference, &y);
        prop_assert_eq!(y.features(), expected.as_slice());

        let (y32, _) = ss_conv_forward(&t.cast::<f32>(), &kernel, &w.cast::<f32>()).unwrap();
        prop_assert!(close_f32(y32.features(), &expected));
    }

    #[test]
    fn regular_matches_dense_reference(
        shape in shape_strategy(),
        seed in any::<u64>(),
        density in 0.05f64..0.7,
        k in 1usize..4,
        s in 1usize..4,
        p in 0usize..2,
        cin in 1usize..4,
        cout in 1usize..4,
    ) {
        let p = p.min(k - 1);
        let t = random_sparse_tensor(seed, &shape, density, cin);
        let kernel = KernelSpec::uniform(shape.len(), k, s, p, cin, cout);
        prop_assume!(kernel.output_shape(&shape).is_ok());
        let w = weights(seed ^ 2, &kernel.kernel_size, cin, cout, false);
        let (y, _) = rs_conv_forward(&t, &kernel, &w).unwrap();
        let reference = dense_conv_reference(&t.to_dense(), &kernel, &w).unwrap();
        let expected = gather(&reference, &y);
        prop_assert_eq!(y.features(), expected.as_slice());
        // Inactive outputs receive no contribution at all.
        let mut masked = reference.clone();
        for c in y.coords() {
            let mut idx = vec![0usize; 2 + shape.len()];
            idx[0] = c.batch() as usize;
            for (a, &v) in c.spatial().iter().enumerate() { idx[a + 2] = v as usize; }
            for ch in 0..cout { idx[1] = ch; masked.set(&idx, 0.0); }
        }
        prop_assert!(masked.data().iter().all(|&v| v == 0.0));

        let (y32, _) = rs_conv_forward(&t.cast::<f32>(), &kernel, &w.cast::<f32>()).unwrap();
        prop_assert!(close_f32(y32.features(), &expected));
    }

    #[test]
    fn inverse_matches_transposed_reference(
        shape in shape_strategy(),
        seed in any::<u64>(),
        density in 0.05f64..0.7,
        cin in 1usize..4,
        cout in 1usize..4,
    ) {
        let x = random_sparse_tensor(seed, &shape, density, cout);
        let kernel = KernelSpec::uniform(shape.len(), 3, 2, 1, cout, cin);
        let plan = build_downsample_rulebook(x.coords(), &shape, &kernel).unwrap();
        let y = SparseTensor::new(
            plan.coords.clone(),
            random_vec(seed ^ 3, plan.coords.len() * cin),
            plan.spatial_shape.clone(),
            1,
            cin,
        ).unwrap();
        let w = weights(seed ^ 4, &kernel.kernel_size, cin, cout, false);
        let (up, _) = inv_conv_forward(&y, x.coords(), &shape, &plan, &w).unwrap();
        prop_assert_eq!(up.coords(), x.coords());
        let reference = dense_conv_transpose_reference(&y.to_dense(), &kernel, &w, &shape).unwrap();
        let expected = gather(&reference, &up);
        prop_assert_eq!(up.features(), expected.as_slice());
    }

    #[test]
    fn dense_conv_matches_reference(
        h in 2usize..12, wd in 2usize..12, seed in any::<u64>(),
        k in 1usize..4, s in 1usize..3, cin in 1usize..4, cout in 1usize..4,
    ) {
        let p = (k - 1) / 2;
        let x = DenseTensor::from_vec(vec![2, cin, h, wd], random_vec(seed, 2 * cin * h * wd)).unwrap();
        let kernel = KernelSpec::uniform(2, k, s, p, cin, cout);
        prop_assume!(kernel.output_shape(&[h, wd]).is_ok());
        let w = weights(seed ^ 5, &kernel.kernel_size, cin, cout, true);
        prop_assert_eq!(dense_conv2d_forward(&x, &kernel, &w).unwrap(), dense_conv_reference(&x, &kernel, &w).unwrap());
    }

    #[test]
    fn deconv_matches_transposed_reference(h in 1usize..8, wd in 1usize..8, seed in any::<u64>(), c in 1usize..4) {
        let x = DenseTensor::from_vec(vec![1, c, h, wd], random_vec(seed, c * h * wd)).unwrap();
        let kernel = KernelSpec::uniform(2, 2, 2, 0, c, c);
        let w = weights(seed ^ 6, &[2, 2], c, c, false);
        prop_assert_eq!(
            dense_deconv2d_forward(&x, &kernel, &w).unwrap(),
            dense_conv_transpose_reference(&x, &kernel, &w, &[2 * h, 2 * wd]).unwrap()
        );
    }

    #[test]
    fn convolution_is_linear(seed in any::<u64>(), density in 0.1f64..0.6, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let shape = [10, 9];
        let x = random_sparse_tensor(seed, &shape, density, 2);
        let z = x.with_features(random_vec(seed ^ 7, x.features().len()), 2).unwrap();
        let kernel = KernelSpec::submanifold(2, 3, 2, 3);
        let w = weights(seed ^ 8, &[3, 3], 2, 3, false);
        let mix: Vec<f64> = x.features().iter().zip(z.features()).map(|(p, q)| a * p + b * q).collect();
        let (lhs, _) = ss_conv_forward(&x.with_features(mix, 2).unwrap(), &kernel, &w).unwrap();
        let (fx, _) = ss_conv_forward(&x, &kernel, &w).unwrap();
        let (fz, _) = ss_conv_forward(&z, &kernel, &w).unwrap();
        for ((l, p), q) in lhs.features().iter().zip(fx.features()).zip(fz.features()) {
            prop_assert!((l - (a * p + b * q)).abs() <= 1e-10 * (1.0 + l.abs()));
        }
    }
}
