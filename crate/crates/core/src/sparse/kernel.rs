use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution geometry. All per-axis vectors have one entry per spatial axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kernel_size: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl KernelSpec {
    /// Same kernel size, stride and padding on every axis.
    pub fn uniform(ndim: usize, kernel: usize, stride: usize, padding: usize, cin: usize, cout: usize) -> Self {
        Self {
            kernel_size: vec![kernel; ndim],
            stride: vec![stride; ndim],
            padding: vec![padding; ndim],
            in_channels: cin,
            out_channels: cout,
        }
    }

    /// Odd cubic kernel at unit stride. Padding is recorded as `(k - 1) / 2`
    /// so the geometry also describes the equivalent dense convolution.
    pub fn submanifold(ndim: usize, kernel: usize, cin: usize, cout: usize) -> Self {
        Self::uniform(ndim, kernel, 1, kernel / 2, cin, cout)
    }

    pub fn ndim(&self) -> usize {
        self.kernel_size.len()
    }

    /// Number of kernel taps.
    pub fn volume(&self) -> usize {
        self.kernel_size.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.kernel_size.len();
        if d == 0 || self.stride.len() != d || self.padding.len() != d {
            return Err(Error::InvalidKernel(format!(
                "per-axis lengths disagree: kernel {:?}, stride {:?}, padding {:?}",
                self.kernel_size, self.stride, self.padding
            )));
        }
        if self.kernel_size.iter().chain(&self.stride).any(|&v| v == 0) {
            return Err(Error::InvalidKernel("kernel size and stride must be positive".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidKernel("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn is_submanifold(&self) -> bool {
        self.kernel_size.iter().all(|k| k % 2 == 1) && self.stride.iter().all(|&s| s == 1)
    }

    pub fn require_submanifold(&self) -> Result<()> {
        self.validate()?;
        if !self.is_submanifold() {
            return Err(Error::InvalidKernel(format!(
                "submanifold convolution needs odd kernel sizes and unit strides, got kernel {:?} stride {:?}",
                self.kernel_size, self.stride
            )));
        }
        Ok(())
    }

    /// `floor((n + 2p - k) / s) + 1` per axis; every extent must be positive.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if input.len() != self.ndim() {
            return Err(Error::InvalidKernel(format!(
                "kernel has {} axes, input shape {:?}",
                self.ndim(),
                input
            )));
        }
        let mut out = Vec::with_capacity(input.len());
        for a in 0..input.len() {
            let padded = input[a]
                .checked_add(2usize.checked_mul(self.padding[a]).ok_or_else(overflow)?)
                .ok_or_else(overflow)?;
            if padded < self.kernel_size[a] {
                return Err(Error::InvalidKernel(format!(
                    "axis {a}: input {} with padding {} is smaller than kernel {}",
                    input[a], self.padding[a], self.kernel_size[a]
                )));
            }
            let n = (padded - self.kernel_size[a]) / self.stride[a] + 1;
            if n > i32::MAX as usize {
                return Err(Error::CoordinateOverflow(format!("output extent {n} on axis {a}")));
            }
            out.push(n);
        }
        Ok(out)
    }

    /// Multi-index of flat tap `t` in lexicographic tap order.
    pub fn tap(&self, mut t: usize, out: &mut [usize]) {
        for a in (0..self.ndim()).rev() {
            out[a] = t % self.kernel_size[a];
            t /= self.kernel_size[a];
        }
    }

    /// Centered offsets of every tap (`tap - (k - 1) / 2`), lexicographic.
    pub fn centered_offsets(&self) -> Vec<Vec<i32>> {
        let mut tap = vec![0; self.ndim()];
        (0..self.volume())
            .map(|t| {
                self.tap(t, &mut tap);
                tap.iter()
                    .zip(&self.kernel_size)
                    .map(|(&i, &k)| i as i32 - ((k - 1) / 2) as i32)
                    .collect()
            })
            .collect()
    }
}

fn overflow() -> Error {
    Error::CoordinateOverflow("padded extent overflows".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_formula() {
        let k = KernelSpec::uniform(2, 3, 2, 1, 1, 1);
        assert_eq!(k.output_shape(&[16, 16]).unwrap(), vec![8, 8]);
        assert_eq!(k.output_shape(&[7, 1]).unwrap(), vec![4, 1]);
        let k = KernelSpec::uniform(2, 3, 3, 0, 1, 1);
        assert_eq!(k.output_shape(&[9, 9]).unwrap(), vec![3, 3]);
        assert!(matches!(k.output_shape(&[2, 9]), Err(Error::InvalidKernel(_))));
    }

    #[test]
    fn submanifold_requirements() {
        assert!(KernelSpec::submanifold(3, 3, 4, 4).require_submanifold().is_ok());
        assert!(KernelSpec::uniform(2, 2, 1, 0, 1, 1).require_submanifold().is_err());
        assert!(KernelSpec::uniform(2, 3, 2, 1, 1, 1).require_submanifold().is_err());
    }

    #[test]
    fn centered_offsets_lexicographic() {
        let k = KernelSpec::submanifold(2, 3, 1, 1);
        let offs = k.centered_offsets();
        assert_eq!(offs.len(), 9);
        assert_eq!(offs[0], vec![-1, -1]);
        assert_eq!(offs[4], vec![0, 0]);
        assert_eq!(offs[5], vec![0, 1]);
        assert_eq!(offs[8], vec![1, 1]);
    }
}
