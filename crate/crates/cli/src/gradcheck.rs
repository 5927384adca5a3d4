//! Finite-difference checks of the analytic backward passes.

use std::fmt;

use hednet_core::dense::{dense_conv2d_backward, dense_conv2d_forward, dense_conv2d_forward_saved, DenseTensor};
use hednet_core::ops::{
    conv_backward, inv_conv_forward, norm_act, norm_relu_backward, norm_relu_forward, rs_conv_forward,
    ss_conv_forward, Activation, ConvWeights, NormParams,
};
use hednet_core::sparse::{build_downsample_rulebook, KernelSpec, SparseTensor};
use hednet_core::Result;
use hednet_oracle::{finite_diff_grad, random_coords, random_vec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GradLayer {
    SsConv,
    RsConv,
    InvConv,
    NormRelu,
    DenseConv,
}

impl GradLayer {
    pub const ALL: [GradLayer; 5] =
        [GradLayer::SsConv, GradLayer::RsConv, GradLayer::InvConv, GradLayer::NormRelu, GradLayer::DenseConv];
}

impl fmt::Display for GradLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradLayer::SsConv => "ss-conv",
            GradLayer::RsConv => "rs-conv",
            GradLayer::InvConv => "inv-conv",
            GradLayer::NormRelu => "norm-relu",
            GradLayer::DenseConv => "dense-conv",
        })
    }
}

#[derive(Debug, Clone)]
pub struct GradOptions {
    pub seed: u64,
    pub instances: usize,
    /// Spatial dimensionality of the sparse instances (2 or 3).
    pub ndim: usize,
    pub max_channels: usize,
    pub step: f64,
    /// Perturbs the analytic gradient (negative control).
    pub corrupt: bool,
}

impl Default for GradOptions {
    fn default() -> Self {
        Self { seed: 0, instances: 10, ndim: 3, max_channels: 3, step: 1e-6, corrupt: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Worst {
    pub instance: usize,
    pub component: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub layer: GradLayer,
    pub instances: usize,
    pub components: usize,
    /// Components skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<Worst>,
}

/// `|a - b| / max(|a|, |b|, 1)`: central differences at a 1e-6 step carry
/// absolute rounding noise of order 1e-10 times the loss, so smaller
/// gradients are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

struct Tally {
    report: GradReport,
    instance: usize,
}

impl Tally {
    fn record(&mut self, component: String, analytic: f64, numeric: f64) {
        self.report.components += 1;
        let e = if numeric.is_finite() { rel_err(analytic, numeric) } else { f64::INFINITY };
        if e > self.report.max_rel_err || self.report.worst.is_none() {
            self.report.max_rel_err = self.report.max_rel_err.max(e);
            self.report.worst = Some(Worst { instance: self.instance, component, analytic, numeric });
        }
    }

    fn compare(&mut self, what: &str, analytic: &[f64], numeric: &[f64]) {
        for (k, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            self.record(format!("{what}[{k}]"), a, n);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn corrupt(grad: &mut [f64], on: bool) {
    if on {
        if let Some(v) = grad.first_mut() {
            *v += 0.1 * (1.0 + v.abs());
        }
    }
}

struct Instance {
    rng: ChaCha8Rng,
}

impl Instance {
    fn new(seed: u64, i: usize) -> Self {
        let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
        Self { rng: ChaCha8Rng::seed_from_u64(s) }
    }

    fn next_seed(&mut self) -> u64 {
        self.rng.random()
    }

    fn channels(&mut self, max: usize) -> usize {
        self.rng.random_range(1..=max.max(1))
    }

    fn sparse(&mut self, shape: &[usize], channels: usize) -> SparseTensor<f64> {
        let density = self.rng.random_range(0.2..0.6);
        let coords = random_coords(self.next_seed(), shape, density);
        let feats = random_vec(self.next_seed(), coords.len() * channels);
        SparseTensor::new(coords, feats, shape.to_vec(), 1, channels).expect("canonical coordinates")
    }

    fn weights(&mut self, kernel: &[usize], cin: usize, cout: usize) -> ConvWeights<f64> {
        let taps: usize = kernel.iter().product();
        ConvWeights::new(kernel.to_vec(), cin, cout, random_vec(self.next_seed(), taps * cin * cout), None)
            .expect("consistent geometry")
    }
}

fn grid(ndim: usize) -> Vec<usize> {
    if ndim == 2 {
        vec![7, 6]
    } else {
        vec![4, 5, 3]
    }
}

/// Input and weight gradients of a linear map `run(x, w)` under `L = <g, y>`.
#[allow(clippy::too_many_arguments)]
fn check_linear(
    tally: &mut Tally,
    opts: &GradOptions,
    x: &[f64],
    w: &ConvWeights<f64>,
    g: &[f64],
    mut analytic_x: Vec<f64>,
    analytic_w: Vec<f64>,
    run: impl Fn(&[f64], &ConvWeights<f64>) -> Result<Vec<f64>>,
) -> Result<()> {
    corrupt(&mut analytic_x, opts.corrupt);
    let fx = finite_diff_grad(|p| run(p, w).map_or(f64::NAN, |y| dot(g, &y)), x, opts.step);
    let fw = finite_diff_grad(
        |p| {
            ConvWeights::new(w.kernel_size().to_vec(), w.in_channels(), w.out_channels(), p.to_vec(), None)
                .and_then(|wp| run(x, &wp))
                .map_or(f64::NAN, |y| dot(g, &y))
        },
        w.weights(),
        opts.step,
    );
    tally.compare("input", &analytic_x, &fx.grad);
    tally.compare("weights", &analytic_w, &fw.grad);
    Ok(())
}

fn check_instance(layer: GradLayer, opts: &GradOptions, tally: &mut Tally, inst: &mut Instance) -> Result<()> {
    let d = opts.ndim;
    match layer {
        GradLayer::SsConv => {
            let (cin, cout) = (inst.channels(opts.max_channels), inst.channels(opts.max_channels));
            let t = inst.sparse(&grid(d), cin);
            let k = KernelSpec::submanifold(d, 3, cin, cout);
            let w = inst.weights(&k.kernel_size, cin, cout);
            let (y, ctx) = ss_conv_forward(&t, &k, &w)?;
            let g = random_vec(inst.next_seed(), y.features().len());
            let grads = conv_backward(&ctx, &g)?;
            let run = |f: &[f64], w: &ConvWeights<f64>| {
                Ok(ss_conv_forward(&t.with_features(f.to_vec(), cin)?, &k, w)?.0.into_features())
            };
            check_linear(tally, opts, t.features(), &w, &g, grads.input, grads.weights, run)
        }
        GradLayer::RsConv => {
            let (cin, cout) = (inst.channels(opts.max_channels), inst.channels(opts.max_channels));
            let t = inst.sparse(&grid(d), cin);
            let k = KernelSpec::uniform(d, 3, 2, 1, cin, cout);
            let w = inst.weights(&k.kernel_size, cin, cout);
            let (y, ctx) = rs_conv_forward(&t, &k, &w)?;
            let g = random_vec(inst.next_seed(), y.features().len());
            let grads = conv_backward(&ctx, &g)?;
            let run = |f: &[f64], w: &ConvWeights<f64>| {
                Ok(rs_conv_forward(&t.with_features(f.to_vec(), cin)?, &k, w)?.0.into_features())
            };
            check_linear(tally, opts, t.features(), &w, &g, grads.input, grads.weights, run)
        }
        GradLayer::InvConv => {
            let (cin, cout) = (inst.channels(opts.max_channels), inst.channels(opts.max_channels));
            let shape = grid(d);
            let fine = inst.sparse(&shape, 1);
            let k = KernelSpec::uniform(d, 3, 2, 1, cout, cin);
            let plan = build_downsample_rulebook(fine.coords(), &shape, &k)?;
            let feats = random_vec(inst.next_seed(), plan.coords.len() * cin);
            let coarse = SparseTensor::new(plan.coords.clone(), feats, plan.spatial_shape.clone(), 1, cin)?;
            let w = inst.weights(&k.kernel_size, cin, cout);
            let (y, ctx) = inv_conv_forward(&coarse, fine.coords(), &shape, &plan, &w)?;
            let g = random_vec(inst.next_seed(), y.features().len());
            let grads = conv_backward(&ctx, &g)?;
            let run = |f: &[f64], w: &ConvWeights<f64>| {
                let c = coarse.with_features(f.to_vec(), cin)?;
                Ok(inv_conv_forward(&c, fine.coords(), &shape, &plan, w)?.0.into_features())
            };
            check_linear(tally, opts, coarse.features(), &w, &g, grads.input, grads.weights, run)
        }
        GradLayer::DenseConv => {
            let (cin, cout) = (inst.channels(opts.max_channels), inst.channels(opts.max_channels));
            let stride = inst.rng.random_range(1..=2);
            let x = DenseTensor::from_vec(vec![1, cin, 6, 5], random_vec(inst.next_seed(), cin * 30))?;
            let k = KernelSpec::uniform(2, 3, stride, 1, cin, cout);
            let w = inst.weights(&k.kernel_size, cin, cout);
            let (y, ctx) = dense_conv2d_forward_saved(&x, &k, &w)?;
            let g = DenseTensor::from_vec(y.shape().to_vec(), random_vec(inst.next_seed(), y.len()))?;
            let grads = dense_conv2d_backward(&ctx, &g)?;
            let run = |f: &[f64], w: &ConvWeights<f64>| {
                Ok(dense_conv2d_forward(&DenseTensor::from_vec(x.shape().to_vec(), f.to_vec())?, &k, w)?.into_vec())
            };
            check_linear(tally, opts, x.data(), &w, g.data(), grads.input.into_vec(), grads.weights, run)
        }
        GradLayer::NormRelu => check_norm(opts, tally, inst),
    }
}

fn check_norm(opts: &GradOptions, tally: &mut Tally, inst: &mut Instance) -> Result<()> {
    let c = inst.channels(opts.max_channels);
    let rows = inst.rng.random_range(4..12);
    let x = random_vec(inst.next_seed(), rows * c);
    let mut p = NormParams::<f64>::identity(c);
    p.gamma = random_vec(inst.next_seed(), c);
    p.beta = random_vec(inst.next_seed(), c);
    p.running_mean = random_vec(inst.next_seed(), c);
    p.running_var = random_vec(inst.next_seed(), c).iter().map(|v| v * v + 0.5).collect();
    let (y, saved) = norm_relu_forward(&x, &p, Activation::Relu)?;
    let g = random_vec(inst.next_seed(), y.len());
    let mut grads = norm_relu_backward(&saved, &g)?;
    corrupt(&mut grads.input, opts.corrupt);

    let h = opts.step;
    let pre = |x: &[f64], p: &NormParams<f64>| norm_act(x, p, Activation::Identity);
    let loss = |x: &[f64], p: &NormParams<f64>| norm_act(x, p, Activation::Relu).map_or(f64::NAN, |y| dot(&g, &y));
    // A perturbation that flips the sign of any pre-activation straddles a
    // ReLU kink; central differences are meaningless there.
    let kinked = |a: Result<Vec<f64>>, b: Result<Vec<f64>>| match (a, b) {
        (Ok(a), Ok(b)) => a.iter().zip(&b).any(|(u, v)| (*u > 0.0) != (*v > 0.0)),
        _ => true,
    };

    let mut q = x.clone();
    for i in 0..x.len() {
        q[i] = x[i] + h;
        let hi = pre(&q, &p);
        q[i] = x[i] - h;
        let lo = pre(&q, &p);
        q[i] = x[i];
        if kinked(hi, lo) {
            tally.report.skipped += 1;
            continue;
        }
        let fd = finite_diff_grad(
            |v| {
                let mut q = x.clone();
                q[i] = v[0];
                loss(&q, &p)
            },
            &[x[i]],
            h,
        );
        tally.record(format!("input[{i}]"), grads.input[i], fd.grad[0]);
    }
    for ch in 0..c {
        for (name, analytic) in [("gamma", grads.gamma[ch]), ("beta", grads.beta[ch])] {
            let with = |v: f64| {
                let mut q = p.clone();
                if name == "gamma" {
                    q.gamma[ch] = v;
                } else {
                    q.beta[ch] = v;
                }
                q
            };
            let base = if name == "gamma" { p.gamma[ch] } else { p.beta[ch] };
            if kinked(pre(&x, &with(base + h)), pre(&x, &with(base - h))) {
                tally.report.skipped += 1;
                continue;
            }
            let fd = finite_diff_grad(|v| loss(&x, &with(v[0])), &[base], h);
            tally.record(format!("{name}[{ch}]"), analytic, fd.grad[0]);
        }
    }
    Ok(())
}

/// Runs `opts.instances` random checks of one layer kind.
pub fn gradcheck(layer: GradLayer, opts: &GradOptions) -> Result<GradReport> {
    let report =
        GradReport { layer, instances: opts.instances, components: 0, skipped: 0, max_rel_err: 0.0, worst: None };
    let mut tally = Tally { report, instance: 0 };
    for i in 0..opts.instances {
        tally.instance = i;
        let mut inst = Instance::new(opts.seed, i);
        check_instance(layer, opts, &mut tally, &mut inst)?;
    }
    Ok(tally.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_and_corruption_fails() {
        for layer in GradLayer::ALL {
            let opts = GradOptions { seed: 7, instances: 3, ..Default::default() };
            let r = gradcheck(layer, &opts).unwrap();
            assert!(r.components > 0 && r.max_rel_err < 1e-6, "{layer}: {r:?}");
            let bad = gradcheck(layer, &GradOptions { corrupt: true, ..opts }).unwrap();
            assert!(bad.max_rel_err > 1e-3, "{layer}: {bad:?}");
        }
    }
}
