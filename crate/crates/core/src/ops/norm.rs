use std::cmp::Ordering;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Pointwise nonlinearity applied after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Used when probing the network as a linear map.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn grad<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu if pre > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

/// Inference-mode per-channel affine normalization with stored statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> NormParams<T> {
    /// gamma 1, beta 0, mean 0, var 1.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_wide(DEFAULT_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(shape_err!("normalization parameter lengths disagree"));
        }
        if self.eps.partial_cmp(&T::zero()) != Some(Ordering::Greater) {
            return Err(Error::InvalidTensor("normalization epsilon must be positive".into()));
        }
        if self.running_var.iter().any(|v| v.partial_cmp(&T::zero()).is_none_or(Ordering::is_lt)) {
            return Err(Error::InvalidTensor("running variance must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-channel `gamma / sqrt(var + eps)`.
    pub fn scale(&self) -> Vec<T> {
        self.gamma
            .iter()
            .zip(&self.running_var)
            .map(|(&g, &v)| g / (v + self.eps).sqrt())
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> NormParams<U> {
        NormParams {
            gamma: crate::scalar::cast_slice(&self.gamma),
            beta: crate::scalar::cast_slice(&self.beta),
            running_mean: crate::scalar::cast_slice(&self.running_mean),
            running_var: crate::scalar::cast_slice(&self.running_var),
            eps: U::from_wide(self.eps.to_wide()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormSaved<T> {
    pub input: Vec<T>,
    pub pre_activation: Vec<T>,
    pub params: NormParams<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// `y = act(gamma * (x - mean) / sqrt(var + eps) + beta)` per channel over an
/// `N x C` row-major matrix.
pub fn norm_relu_forward<T: Scalar>(
    features: &[T],
    p: &NormParams<T>,
    activation: Activation,
) -> Result<(Vec<T>, NormSaved<T>)> {
    let (pre, out) = norm_pre_and_out(features, p, activation)?;
    Ok((out, NormSaved { input: features.to_vec(), pre_activation: pre, params: p.clone(), activation }))
}

/// Forward without keeping a backward context.
pub fn norm_act<T: Scalar>(features: &[T], p: &NormParams<T>, activation: Activation) -> Result<Vec<T>> {
    let c = p.channels();
    if c == 0 || !features.len().is_multiple_of(c) {
        return Err(shape_err!("{} feature values do not fit {c} normalized channels", features.len()));
    }
    let scale = p.scale();
    let mut out = features.to_vec();
    for row in out.chunks_mut(c) {
        for ch in 0..c {
            row[ch] = activation.apply((row[ch] - p.running_mean[ch]) * scale[ch] + p.beta[ch]);
        }
    }
    Ok(out)
}

fn norm_pre_and_out<T: Scalar>(features: &[T], p: &NormParams<T>, act: Activation) -> Result<(Vec<T>, Vec<T>)> {
    let pre = norm_act(features, p, Activation::Identity)?;
    let out = pre.iter().map(|&v| act.apply(v)).collect();
    Ok((pre, out))
}

pub fn norm_relu_backward<T: Scalar>(saved: &NormSaved<T>, grad_out: &[T]) -> Result<NormGrads<T>> {
    let p = &saved.params;
    let c = p.channels();
    if grad_out.len() != saved.input.len() {
        return Err(shape_err!("grad_out has {} values, expected {}", grad_out.len(), saved.input.len()));
    }
    let scale = p.scale();
    let inv_std: Vec<T> = p.running_var.iter().map(|&v| T::one() / (v + p.eps).sqrt()).collect();
    let mut gx = vec![T::zero(); grad_out.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for (k, &g) in grad_out.iter().enumerate() {
        let ch = k % c;
        let gpre = g * saved.activation.grad(saved.pre_activation[k]);
        gb[ch] += gpre;
        gg[ch] += gpre * (saved.input[k] - p.running_mean[ch]) * inv_std[ch];
        gx[k] = gpre * scale[ch];
    }
    Ok(NormGrads { input: gx, gamma: gg, beta: gb })
}
