use rayon::prelude::*;

use crate::dense::DenseTensor;
use crate::error::{shape_err, Result};
use crate::ops::ConvWeights;
use crate::scalar::Scalar;
use crate::sparse::KernelSpec;

#[derive(Debug, Clone)]
pub struct DenseConvContext<T> {
    pub input: DenseTensor<T>,
    pub kernel: KernelSpec,
    pub weights: ConvWeights<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseConvGrads<T> {
    pub input: DenseTensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

fn check_conv<T: Scalar>(x: &DenseTensor<T>, k: &KernelSpec, w: &ConvWeights<T>) -> Result<Vec<usize>> {
    if x.shape().len() != 4 || k.ndim() != 2 {
        return Err(shape_err!(
            "2-d convolution needs a (B, C, H, W) input and 2-d kernel, got {:?} and {:?}",
            x.shape(),
            k.kernel_size
        ));
    }
    w.check_spec(k)?;
    if x.channels() != k.in_channels {
        return Err(shape_err!("input has {} channels, kernel expects {}", x.channels(), k.in_channels));
    }
    k.output_shape(x.spatial())
}

/// Cross-correlation with zero padding. Every output value accumulates bias,
/// then taps in lexicographic order, then input channels.
pub fn dense_conv2d_forward<T: Scalar>(x: &DenseTensor<T>, k: &KernelSpec, w: &ConvWeights<T>) -> Result<DenseTensor<T>> {
    let out_hw = check_conv(x, k, w)?;
    let (b, cin, h, wd) = (x.batch(), x.channels(), x.shape()[2], x.shape()[3]);
    let (ho, wo, cout) = (out_hw[0], out_hw[1], k.out_channels);
    let (kh, kw) = (k.kernel_size[0], k.kernel_size[1]);
    let (sh, sw) = (k.stride[0] as isize, k.stride[1] as isize);
    let (ph, pw) = (k.padding[0] as isize, k.padding[1] as isize);
    let xd = x.data();

    // One task per (batch, output row); each produces wo x cout values.
    let rows: Vec<Vec<T>> = (0..b * ho)
        .into_par_iter()
        .map(|task| {
            let (bi, oy) = (task / ho, task % ho);
            let mut buf = vec![T::zero(); wo * cout];
            for ox in 0..wo {
                let acc = &mut buf[ox * cout..(ox + 1) * cout];
                if let Some(bias) = w.bias() {
                    acc.copy_from_slice(bias);
                }
                for ty in 0..kh {
                    let iy = oy as isize * sh - ph + ty as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for tx in 0..kw {
                        let ix = ox as isize * sw - pw + tx as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let wt = w.tap(ty * kw + tx);
                        for ci in 0..cin {
                            let xv = xd[((bi * cin + ci) * h + iy as usize) * wd + ix as usize];
                            for (a, &wv) in acc.iter_mut().zip(&wt[ci * cout..(ci + 1) * cout]) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
            buf
        })
        .collect();

    let mut out = DenseTensor::zeros(vec![b, cout, ho, wo]);
    let od = out.data_mut();
    for (task, buf) in rows.iter().enumerate() {
        let (bi, oy) = (task / ho, task % ho);
        for ox in 0..wo {
            for co in 0..cout {
                od[((bi * cout + co) * ho + oy) * wo + ox] = buf[ox * cout + co];
            }
        }
    }
    Ok(out)
}

/// Forward pass that also returns the backward context.
pub fn dense_conv2d_forward_saved<T: Scalar>(
    x: &DenseTensor<T>,
    k: &KernelSpec,
    w: &ConvWeights<T>,
) -> Result<(DenseTensor<T>, DenseConvContext<T>)> {
    let out = dense_conv2d_forward(x, k, w)?;
    Ok((out, DenseConvContext { input: x.clone(), kernel: k.clone(), weights: w.clone() }))
}

pub fn dense_conv2d_backward<T: Scalar>(ctx: &DenseConvContext<T>, grad_out: &DenseTensor<T>) -> Result<DenseConvGrads<T>> {
    let (x, k, w) = (&ctx.input, &ctx.kernel, &ctx.weights);
    let out_hw = check_conv(x, k, w)?;
    let (b, cin, h, wd) = (x.batch(), x.channels(), x.shape()[2], x.shape()[3]);
    let (ho, wo, cout) = (out_hw[0], out_hw[1], k.out_channels);
    if grad_out.shape() != [b, cout, ho, wo] {
        return Err(shape_err!("grad_out shape {:?}, expected {:?}", grad_out.shape(), [b, cout, ho, wo]));
    }
    let (kh, kw) = (k.kernel_size[0], k.kernel_size[1]);
    let (sh, sw) = (k.stride[0] as isize, k.stride[1] as isize);
    let (ph, pw) = (k.padding[0] as isize, k.padding[1] as isize);
    let (xd, gd) = (x.data(), grad_out.data());

    let mut gx = DenseTensor::zeros(x.shape().to_vec());
    let mut gw = vec![T::zero(); w.weights().len()];
    let mut gb = vec![T::zero(); cout];
    let gxd = gx.data_mut();
    let per_tap = cin * cout;
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = |co: usize| gd[((bi * cout + co) * ho + oy) * wo + ox];
                for (co, gbv) in gb.iter_mut().enumerate() {
                    *gbv += g(co);
                }
                for ty in 0..kh {
                    let iy = oy as isize * sh - ph + ty as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for tx in 0..kw {
                        let ix = ox as isize * sw - pw + tx as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let t = ty * kw + tx;
                        let wt = w.tap(t);
                        for ci in 0..cin {
                            let xi = ((bi * cin + ci) * h + iy as usize) * wd + ix as usize;
                            let mut acc = T::zero();
                            for co in 0..cout {
                                acc += g(co) * wt[ci * cout + co];
                                gw[t * per_tap + ci * cout + co] += xd[xi] * g(co);
                            }
                            gxd[xi] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(DenseConvGrads { input: gx, weights: gw, bias: gb })
}

/// Transposed convolution with kernel 2 and stride 2:
/// `out[2i + a, 2j + b] = bias + x[i, j] * W[(a, b)]`.
pub fn dense_deconv2d_forward<T: Scalar>(x: &DenseTensor<T>, k: &KernelSpec, w: &ConvWeights<T>) -> Result<DenseTensor<T>> {
    if x.shape().len() != 4 || k.kernel_size != [2, 2] || k.stride != [2, 2] || k.padding != [0, 0] {
        return Err(shape_err!(
            "deconvolution supports (B, C, H, W) input with kernel 2, stride 2, padding 0; got input {:?}, kernel {:?}",
            x.shape(),
            k
        ));
    }
    w.check_spec(k)?;
    if x.channels() != k.in_channels {
        return Err(shape_err!("input has {} channels, kernel expects {}", x.channels(), k.in_channels));
    }
    let (b, cin, h, wd) = (x.batch(), x.channels(), x.shape()[2], x.shape()[3]);
    let cout = k.out_channels;
    let (ho, wo) = (2 * h, 2 * wd);
    let xd = x.data();

    let rows: Vec<Vec<T>> = (0..b * ho)
        .into_par_iter()
        .map(|task| {
            let (bi, oy) = (task / ho, task % ho);
            let (iy, a) = (oy / 2, oy % 2);
            let mut buf = vec![T::zero(); wo * cout];
            for ox in 0..wo {
                let (ix, bb) = (ox / 2, ox % 2);
                let acc = &mut buf[ox * cout..(ox + 1) * cout];
                if let Some(bias) = w.bias() {
                    acc.copy_from_slice(bias);
                }
                let wt = w.tap(a * 2 + bb);
                for ci in 0..cin {
                    let xv = xd[((bi * cin + ci) * h + iy) * wd + ix];
                    for (s, &wv) in acc.iter_mut().zip(&wt[ci * cout..(ci + 1) * cout]) {
                        *s += xv * wv;
                    }
                }
            }
            buf
        })
        .collect();

    let mut out = DenseTensor::zeros(vec![b, cout, ho, wo]);
    let od = out.data_mut();
    for (task, buf) in rows.iter().enumerate() {
        let (bi, oy) = (task / ho, task % ho);
        for ox in 0..wo {
            for co in 0..cout {
                od[((bi * cout + co) * ho + oy) * wo + ox] = buf[ox * cout + co];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(c: usize, h: usize, w: usize, at: (usize, usize)) -> DenseTensor<f64> {
        let mut x = DenseTensor::zeros(vec![1, c, h, w]);
        x.set(&[0, 0, at.0, at.1], 1.0);
        x
    }

    #[test]
    fn pointwise_identity() {
        let x = DenseTensor::from_vec(vec![1, 2, 2, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let k = KernelSpec::uniform(2, 1, 1, 0, 2, 2);
        let y = dense_conv2d_forward(&x, &k, &ConvWeights::identity(vec![1, 1], 2)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_one_hot() {
        let k = KernelSpec::uniform(2, 3, 1, 1, 1, 1);
        let w = ConvWeights::new(vec![3, 3], 1, 1, vec![1.0; 9], None).unwrap();
        let y = dense_conv2d_forward(&one_hot(1, 5, 5, (2, 2)), &k, &w).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let inside = (1..=3).contains(&r) && (1..=3).contains(&c);
                assert_eq!(y.get(&[0, 0, r, c]), if inside { 1.0 } else { 0.0 });
            }
        }
        // clipped at the corner
        let y = dense_conv2d_forward(&one_hot(1, 5, 5, (0, 0)), &k, &w).unwrap();
        assert_eq!(y.data().iter().filter(|&&v| v == 1.0).count(), 4);
    }

    #[test]
    fn deconv_one_hot_block() {
        let k = KernelSpec::uniform(2, 2, 2, 0, 1, 1);
        let w = ConvWeights::new(vec![2, 2], 1, 1, vec![1.0; 4], None).unwrap();
        let y = dense_deconv2d_forward(&one_hot(1, 3, 3, (1, 2)), &k, &w).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 6]);
        let ones: Vec<_> = (0..36).filter(|&i| y.data()[i] == 1.0).map(|i| (i / 6, i % 6)).collect();
        assert_eq!(ones, vec![(2, 4), (2, 5), (3, 4), (3, 5)]);
    }

    #[test]
    fn deconv_shape_and_rejects_other_geometry() {
        let x = DenseTensor::<f64>::zeros(vec![1, 3, 5, 7]);
        let k = KernelSpec::uniform(2, 2, 2, 0, 3, 4);
        let y = dense_deconv2d_forward(&x, &k, &ConvWeights::zeros(vec![2, 2], 3, 4)).unwrap();
        assert_eq!(y.shape(), &[1, 4, 10, 14]);
        let k3 = KernelSpec::uniform(2, 3, 2, 1, 3, 4);
        assert!(dense_deconv2d_forward(&x, &k3, &ConvWeights::zeros(vec![3, 3], 3, 4)).is_err());
    }

    #[test]
    fn backward_trivial_cases() {
        let x = DenseTensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = KernelSpec::uniform(2, 1, 1, 0, 1, 1);
        let (_, ctx) = dense_conv2d_forward_saved(&x, &k, &ConvWeights::identity(vec![1, 1], 1)).unwrap();
        let g = DenseTensor::from_vec(vec![1, 1, 2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let grads = dense_conv2d_backward(&ctx, &g).unwrap();
        assert_eq!(grads.input, g);
        assert_eq!(grads.weights, vec![0.5 - 2.0 + 6.0]);
        let z = dense_conv2d_backward(&ctx, &DenseTensor::zeros(vec![1, 1, 2, 2])).unwrap();
        assert!(z.input.data().iter().chain(&z.weights).chain(&z.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch() {
        let x = DenseTensor::<f64>::zeros(vec![1, 2, 4, 4]);
        let k = KernelSpec::uniform(2, 3, 1, 1, 3, 1);
        assert!(dense_conv2d_forward(&x, &k, &ConvWeights::zeros(vec![3, 3], 3, 1)).is_err());
    }
}
