use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::sparse::KernelSpec;

/// Per-tap `in_channels x out_channels` matrices in lexicographic tap order,
/// stored contiguously, plus an optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    kernel_size: Vec<usize>,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<T>,
    bias: Option<Vec<T>>,
}

impl<T: Scalar> ConvWeights<T> {
    pub fn new(
        kernel_size: Vec<usize>,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        let taps: usize = kernel_size.iter().product();
        if kernel_size.is_empty() || taps == 0 || in_channels == 0 || out_channels == 0 {
            return Err(shape_err!(
                "degenerate weight geometry {kernel_size:?} {in_channels}->{out_channels}"
            ));
        }
        if weights.len() != taps * in_channels * out_channels {
            return Err(shape_err!(
                "kernel {kernel_size:?} {in_channels}->{out_channels} needs {} weights, got {}",
                taps * in_channels * out_channels,
                weights.len()
            ));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(shape_err!("bias of length {} for {out_channels} outputs", b.len()));
            }
        }
        if weights.iter().chain(bias.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor("non-finite convolution weight".into()));
        }
        Ok(Self { kernel_size, in_channels, out_channels, weights, bias })
    }

    pub fn zeros(kernel_size: Vec<usize>, in_channels: usize, out_channels: usize) -> Self {
        let n = kernel_size.iter().product::<usize>() * in_channels * out_channels;
        Self { kernel_size, in_channels, out_channels, weights: vec![T::zero(); n], bias: None }
    }

    /// Identity matrix on the center tap (odd kernels), zero elsewhere.
    pub fn identity(kernel_size: Vec<usize>, channels: usize) -> Self {
        let mut w = Self::zeros(kernel_size, channels, channels);
        let center = w.kernel_size.iter().fold(0, |acc, &k| acc * k + k / 2);
        let m = w.tap_mut(center);
        for c in 0..channels {
            m[c * channels + c] = T::one();
        }
        w
    }

    pub fn kernel_size(&self) -> &[usize] {
        &self.kernel_size
    }

    pub fn volume(&self) -> usize {
        self.kernel_size.iter().product()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [T]> {
        self.bias.as_deref_mut()
    }

    pub fn with_bias(mut self, bias: Vec<T>) -> Result<Self> {
        if bias.len() != self.out_channels {
            return Err(shape_err!("bias of length {} for {} outputs", bias.len(), self.out_channels));
        }
        self.bias = Some(bias);
        Ok(self)
    }

    #[inline]
    pub fn tap(&self, t: usize) -> &[T] {
        let n = self.in_channels * self.out_channels;
        &self.weights[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn tap_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.in_channels * self.out_channels;
        &mut self.weights[t * n..(t + 1) * n]
    }

    /// Every tap matrix transposed (channels swapped), bias dropped.
    pub fn transposed(&self) -> Self {
        let (ci, co) = (self.in_channels, self.out_channels);
        let mut out = Self::zeros(self.kernel_size.clone(), co, ci);
        for t in 0..self.volume() {
            let src = self.tap(t);
            let dst = out.tap_mut(t);
            for i in 0..ci {
                for o in 0..co {
                    dst[o * ci + i] = src[i * co + o];
                }
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ConvWeights<U> {
        ConvWeights {
            kernel_size: self.kernel_size.clone(),
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            weights: crate::scalar::cast_slice(&self.weights),
            bias: self.bias.as_ref().map(|b| crate::scalar::cast_slice(b)),
        }
    }

    /// Checks tap count and channels against a kernel description.
    pub fn check_spec(&self, k: &KernelSpec) -> Result<()> {
        if self.kernel_size != k.kernel_size || self.in_channels != k.in_channels || self.out_channels != k.out_channels {
            return Err(shape_err!(
                "weights {:?} {}->{} do not match kernel {:?} {}->{}",
                self.kernel_size,
                self.in_channels,
                self.out_channels,
                k.kernel_size,
                k.in_channels,
                k.out_channels
            ));
        }
        Ok(())
    }
}
