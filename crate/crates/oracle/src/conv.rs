use hednet_core::dense::DenseTensor;
use hednet_core::ops::ConvWeights;
use hednet_core::sparse::{Coord, KernelSpec};
use hednet_core::{Error, Result};

fn check(x: &DenseTensor<f64>, k: &KernelSpec, w: &ConvWeights<f64>, cin: usize) -> Result<usize> {
    let d = x.shape().len().saturating_sub(2);
    if d == 0 || k.kernel_size.len() != d || k.stride.len() != d || k.padding.len() != d {
        return Err(Error::Shape(format!("reference convolution: kernel {k:?} on shape {:?}", x.shape())));
    }
    if w.kernel_size() != k.kernel_size.as_slice() || x.shape()[1] != cin {
        return Err(Error::Shape(format!(
            "reference convolution: weights {:?} {}->{} on {} channels",
            w.kernel_size(),
            w.in_channels(),
            w.out_channels(),
            x.shape()[1]
        )));
    }
    Ok(d)
}

/// Odometer over a multi-index; returns false after the last one.
fn advance(idx: &mut [usize], dims: &[usize]) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < dims[a] {
            return true;
        }
        idx[a] = 0;
    }
    false
}

fn flat(index: &[usize], shape: &[usize]) -> usize {
    index.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Direct cross-correlation with zero padding: output `j` reads input
/// `j * stride - pad + t` for every tap `t`. Per output value the sum runs
/// bias, then taps in lexicographic order, then input channels.
pub fn dense_conv_reference(x: &DenseTensor<f64>, k: &KernelSpec, w: &ConvWeights<f64>) -> Result<DenseTensor<f64>> {
    let d = check(x, k, w, w.in_channels())?;
    let (b, cin, cout) = (x.shape()[0], w.in_channels(), w.out_channels());
    let in_sp = &x.shape()[2..];
    let mut out_sp = Vec::with_capacity(d);
    for a in 0..d {
        let span = in_sp[a] as i64 + 2 * k.padding[a] as i64 - k.kernel_size[a] as i64;
        if span < 0 || k.stride[a] == 0 {
            return Err(Error::InvalidKernel(format!("reference convolution: axis {a} has no output")));
        }
        out_sp.push(span as usize / k.stride[a] + 1);
    }
    let mut shape = vec![b, cout];
    shape.extend(&out_sp);
    let mut out = DenseTensor::zeros(shape.clone());
    let mut full_in = vec![0; d + 2];
    let mut full_out = vec![0; d + 2];
    for bi in 0..b {
        for o in 0..cout {
            let mut j = vec![0; d];
            loop {
                let mut s = w.bias().map_or(0.0, |bias| bias[o]);
                let mut t = vec![0; d];
                let mut ti = 0;
                loop {
                    let mut inside = true;
                    for a in 0..d {
                        let p = (j[a] * k.stride[a] + t[a]) as i64 - k.padding[a] as i64;
                        if p < 0 || p >= in_sp[a] as i64 {
                            inside = false;
                            break;
                        }
                        full_in[a + 2] = p as usize;
                    }
                    if inside {
                        full_in[0] = bi;
                        let tap = w.tap(ti);
                        for c in 0..cin {
                            full_in[1] = c;
                            s += x.data()[flat(&full_in, x.shape())] * tap[c * cout + o];
                        }
                    }
                    ti += 1;
                    if !advance(&mut t, &k.kernel_size) {
                        break;
                    }
                }
                full_out[0] = bi;
                full_out[1] = o;
                full_out[2..].copy_from_slice(&j);
                let at = flat(&full_out, &shape);
                out.data_mut()[at] = s;
                if !advance(&mut j, &out_sp) {
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Transposed convolution onto a grid of `out_spatial`: input `j` sends
/// `y[j] * W[t]` to position `j * stride - pad + t`. `w` is laid out
/// `in -> out` per tap with `in` the channels of `y`. Per output value the
/// sum runs over taps in lexicographic order, then input channels.
pub fn dense_conv_transpose_reference(
    y: &DenseTensor<f64>,
    k: &KernelSpec,
    w: &ConvWeights<f64>,
    out_spatial: &[usize],
) -> Result<DenseTensor<f64>> {
    let d = check(y, k, w, w.in_channels())?;
    if out_spatial.len() != d {
        return Err(Error::Shape(format!("transpose reference: target {out_spatial:?} for {d}-d input")));
    }
    let (b, cin, cout) = (y.shape()[0], w.in_channels(), w.out_channels());
    let y_sp = &y.shape()[2..];
    let mut shape = vec![b, cout];
    shape.extend(out_spatial);
    let mut out = DenseTensor::zeros(shape.clone());
    let mut full_in = vec![0; d + 2];
    let mut full_out = vec![0; d + 2];
    for bi in 0..b {
        for o in 0..cout {
            let mut p = vec![0; d];
            loop {
                let mut s = 0.0;
                let mut t = vec![0; d];
                let mut ti = 0;
                loop {
                    // j * stride = p + pad - t must hold exactly on every axis.
                    let mut hit = true;
                    for a in 0..d {
                        let num = p[a] as i64 + k.padding[a] as i64 - t[a] as i64;
                        let st = k.stride[a] as i64;
                        if num < 0 || num % st != 0 || num / st >= y_sp[a] as i64 {
                            hit = false;
                            break;
                        }
                        full_in[a + 2] = (num / st) as usize;
                    }
                    if hit {
                        full_in[0] = bi;
                        let tap = w.tap(ti);
                        for c in 0..cin {
                            full_in[1] = c;
                            s += y.data()[flat(&full_in, y.shape())] * tap[c * cout + o];
                        }
                    }
                    ti += 1;
                    if !advance(&mut t, &k.kernel_size) {
                        break;
                    }
                }
                full_out[0] = bi;
                full_out[1] = o;
                full_out[2..].copy_from_slice(&p);
                let at = flat(&full_out, &shape);
                out.data_mut()[at] = s;
                if !advance(&mut p, out_spatial) {
                    break;
                }
            }
        }
    }
    Ok(out)
}

fn zero_outside(t: &mut DenseTensor<f64>, active: &[Coord]) {
    let shape = t.shape().to_vec();
    let (b, c) = (shape[0], shape[1]);
    let plane: usize = shape[2..].iter().product();
    let mut keep = vec![false; b * plane];
    for coord in active {
        let cell = coord.spatial().iter().zip(&shape[2..]).fold(0, |acc, (&i, &n)| acc * n + i as usize);
        keep[coord.batch() as usize * plane + cell] = true;
    }
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * plane;
            for cell in 0..plane {
                if !keep[bi * plane + cell] {
                    t.data_mut()[base + cell] = 0.0;
                }
            }
        }
    }
}

/// Dense convolution restricted to `active`: inputs outside the set are
/// zeroed and only active output sites keep their values. `k` must be a
/// stride-1 kernel with `k / 2` padding.
pub fn submanifold_reference(
    x: &DenseTensor<f64>,
    active: &[Coord],
    k: &KernelSpec,
    w: &ConvWeights<f64>,
) -> Result<DenseTensor<f64>> {
    let shape_ok = active.iter().all(|c| {
        (c.batch() as usize) < x.shape()[0]
            && c.spatial().len() + 2 == x.shape().len()
            && c.spatial().iter().zip(&x.shape()[2..]).all(|(&i, &n)| i >= 0 && (i as usize) < n)
    });
    let geometry_ok = k.stride.iter().all(|&s| s == 1)
        && k.kernel_size.iter().zip(&k.padding).all(|(&ks, &p)| ks % 2 == 1 && p == ks / 2);
    if !shape_ok || !geometry_ok {
        return Err(Error::Shape("submanifold reference: active set or kernel does not fit the grid".into()));
    }
    let mut masked = x.clone();
    zero_outside(&mut masked, active);
    let mut out = dense_conv_reference(&masked, k, w)?;
    zero_outside(&mut out, active);
    Ok(out)
}
