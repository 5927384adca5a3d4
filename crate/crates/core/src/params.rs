//! Named parameter tensors and the sources that fill block and network
//! weights: seeded random initialization or records loaded from a file.
//!
//! Every weight structure is built by walking its spec and asking a
//! [`ParamSource`] for each named tensor, so random init and loading share
//! one traversal and one naming scheme.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{ConvWeights, NormParams, DEFAULT_EPS};
use crate::scalar::Scalar;

/// One named tensor as stored in a weights file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    Kaiming { fan_in: usize },
    Constant(f32),
}

pub trait ParamSource {
    fn take(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Vec<f32>>;
}

/// Draws every tensor from a seeded generator and keeps a copy of each, in
/// request order, so the result can be written out verbatim.
#[derive(Debug)]
pub struct SeededSource {
    rng: ChaCha8Rng,
    records: Vec<ParamRecord>,
    /// Draw weights as `|w|` (used by monotonicity probes).
    nonnegative: bool,
}

impl SeededSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), records: Vec::new(), nonnegative: false }
    }

    pub fn nonnegative(seed: u64) -> Self {
        Self { nonnegative: true, ..Self::new(seed) }
    }

    pub fn into_records(self) -> Vec<ParamRecord> {
        self.records
    }
}

impl ParamSource for SeededSource {
    fn take(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Vec<f32>> {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = match init {
            Init::Kaiming { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n)
                    .map(|_| {
                        let v = dist.sample(&mut self.rng) as f32;
                        if self.nonnegative {
                            v.abs()
                        } else {
                            v
                        }
                    })
                    .collect()
            }
            Init::Constant(c) => vec![c; n],
        };
        self.records.push(ParamRecord { name: name.to_string(), dims: dims.to_vec(), data: data.clone() });
        Ok(data)
    }
}

/// Serves tensors from loaded records, checking names and dims.
#[derive(Debug)]
pub struct RecordSource {
    records: HashMap<String, ParamRecord>,
    used: HashSet<String>,
}

impl RecordSource {
    pub fn new(records: Vec<ParamRecord>) -> Result<Self> {
        let mut map = HashMap::with_capacity(records.len());
        for r in records {
            if let Some(prev) = map.insert(r.name.clone(), r) {
                return Err(Error::Config(format!("weights: duplicate record `{}`", prev.name)));
            }
        }
        Ok(Self { records: map, used: HashSet::new() })
    }

    /// Fails if any record was never requested.
    pub fn finish(self) -> Result<()> {
        let mut unused: Vec<_> = self.records.keys().filter(|k| !self.used.contains(*k)).cloned().collect();
        unused.sort();
        if let Some(first) = unused.first() {
            return Err(Error::Config(format!(
                "weights: record `{first}` is not used by the config ({} unused records)",
                unused.len()
            )));
        }
        Ok(())
    }
}

impl ParamSource for RecordSource {
    fn take(&mut self, name: &str, dims: &[usize], _init: Init) -> Result<Vec<f32>> {
        let r = self
            .records
            .get(name)
            .ok_or_else(|| Error::Config(format!("weights: missing record `{name}` with dims {dims:?}")))?;
        if r.dims != dims {
            return Err(Error::Config(format!(
                "weights: record `{name}` has dims {:?}, config expects {dims:?}",
                r.dims
            )));
        }
        self.used.insert(name.to_string());
        Ok(r.data.clone())
    }
}

/// Convolution followed by normalization (and an activation chosen at call
/// time). Convolutions feeding a normalization carry no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNorm<T> {
    pub conv: ConvWeights<T>,
    pub norm: NormParams<T>,
}

impl<T: Scalar> ConvNorm<T> {
    pub fn build(src: &mut dyn ParamSource, name: &str, kernel: &[usize], cin: usize, cout: usize) -> Result<Self> {
        let taps: usize = kernel.iter().product();
        let mut dims = kernel.to_vec();
        dims.extend([cin, cout]);
        let w = src.take(&format!("{name}.w"), &dims, Init::Kaiming { fan_in: taps * cin })?;
        let conv = ConvWeights::new(kernel.to_vec(), cin, cout, crate::scalar::cast_slice(&w), None)
            .map_err(|e| Error::Config(format!("weights: `{name}.w`: {e}")))?;
        let mut vec = |suffix: &str, init: f32| -> Result<Vec<T>> {
            let v = src.take(&format!("{name}.{suffix}"), &[cout], Init::Constant(init))?;
            Ok(crate::scalar::cast_slice(&v))
        };
        let norm = NormParams {
            gamma: vec("gamma", 1.0)?,
            beta: vec("beta", 0.0)?,
            running_mean: vec("mean", 0.0)?,
            running_var: vec("var", 1.0)?,
            eps: T::from_wide(DEFAULT_EPS),
        };
        norm.validate().map_err(|e| Error::Config(format!("weights: `{name}`: {e}")))?;
        Ok(Self { conv, norm })
    }

    /// Zero convolution with identity normalization.
    pub fn zeros(kernel: &[usize], cin: usize, cout: usize) -> Self {
        Self { conv: ConvWeights::zeros(kernel.to_vec(), cin, cout), norm: NormParams::identity(cout) }
    }

    pub fn cast<U: Scalar>(&self) -> ConvNorm<U> {
        ConvNorm { conv: self.conv.cast(), norm: self.norm.cast() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_source_is_reproducible() {
        let a = ConvNorm::<f64>::build(&mut SeededSource::new(3), "x", &[3, 3], 2, 4).unwrap();
        let b = ConvNorm::<f64>::build(&mut SeededSource::new(3), "x", &[3, 3], 2, 4).unwrap();
        let c = ConvNorm::<f64>::build(&mut SeededSource::new(4), "x", &[3, 3], 2, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.norm, NormParams::identity(4));
    }

    #[test]
    fn kaiming_scale() {
        let mut src = SeededSource::new(0);
        let v = src.take("w", &[3, 3, 64, 64], Init::Kaiming { fan_in: 9 * 64 }).unwrap();
        let var = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / v.len() as f64;
        let expect = 2.0 / (9.0 * 64.0);
        assert!((var / expect - 1.0).abs() < 0.05, "variance {var} vs {expect}");
    }

    #[test]
    fn records_round_trip_and_mismatch() {
        let mut src = SeededSource::new(9);
        let a = ConvNorm::<f32>::build(&mut src, "l", &[3], 1, 2).unwrap();
        let records = src.into_records();
        assert_eq!(records.len(), 5);
        let mut rs = RecordSource::new(records.clone()).unwrap();
        let b = ConvNorm::<f32>::build(&mut rs, "l", &[3], 1, 2).unwrap();
        assert_eq!(a, b);
        rs.finish().unwrap();

        let mut rs = RecordSource::new(records.clone()).unwrap();
        let err = ConvNorm::<f32>::build(&mut rs, "l", &[3], 1, 3).unwrap_err();
        assert!(err.to_string().contains("`l.w`"), "{err}");

        let mut rs = RecordSource::new(records).unwrap();
        let err = ConvNorm::<f32>::build(&mut rs, "other", &[3], 1, 2).unwrap_err();
        assert!(err.to_string().contains("missing record `other.w`"));
        assert!(rs.finish().unwrap_err().to_string().contains("not used"));
    }
}
