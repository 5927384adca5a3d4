//! JSON reports written by `forward` and `bench`.

use hednet_core::network::LayerRecord;
use serde::Serialize;

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub active: usize,
    pub sparsity: f64,
    pub time_ms: f64,
}

impl From<&LayerRecord> for LayerReport {
    fn from(r: &LayerRecord) -> Self {
        Self { name: r.name.clone(), active: r.active, sparsity: r.sparsity, time_ms: ms(r.elapsed) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub precision: &'static str,
    pub layers: Vec<LayerReport>,
    pub total_ms: f64,
    pub output_shape: Vec<usize>,
    /// FNV-1a 64 of the output map, as 16 hex digits.
    pub digest: String,
}

impl RunReport {
    pub fn new(precision: &'static str, layers: &[LayerRecord], output_shape: Vec<usize>, digest: u64) -> Self {
        let layers: Vec<LayerReport> = layers.iter().map(LayerReport::from).collect();
        let total_ms = layers.iter().map(|l| l.time_ms).sum();
        Self { precision, layers, total_ms, output_shape, digest: format_digest(digest) }
    }
}

pub fn format_digest(d: u64) -> String {
    format!("{d:016x}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub median_ms: f64,
    pub min_ms: f64,
}

impl Timing {
    pub fn from_samples(samples: &mut [f64]) -> Self {
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let median_ms = match n {
            0 => 0.0,
            _ if n % 2 == 1 => samples[n / 2],
            _ => 0.5 * (samples[n / 2 - 1] + samples[n / 2]),
        };
        Self { median_ms, min_ms: samples.first().copied().unwrap_or(0.0) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchLayer {
    pub name: String,
    pub active: usize,
    pub sparsity: f64,
    #[serde(flatten)]
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub precision: &'static str,
    pub density: f64,
    pub repeats: usize,
    pub input_active: usize,
    pub layers: Vec<BenchLayer>,
    pub end_to_end: Timing,
    pub digests: Vec<String>,
}

/// Folds the per-run layer records of a benchmark into one report.
pub fn bench_report(
    precision: &'static str,
    density: f64,
    input_active: usize,
    runs: &[Vec<LayerRecord>],
    digests: &[u64],
) -> BenchReport {
    let first = runs.first().map(Vec::as_slice).unwrap_or(&[]);
    let layers = first
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut samples: Vec<f64> = runs.iter().map(|r| ms(r[i].elapsed)).collect();
            BenchLayer { name: l.name.clone(), active: l.active, sparsity: l.sparsity, timing: Timing::from_samples(&mut samples) }
        })
        .collect();
    let mut totals: Vec<f64> = runs.iter().map(|r| r.iter().map(|l| ms(l.elapsed)).sum()).collect();
    BenchReport {
        precision,
        density,
        repeats: runs.len(),
        input_active,
        layers,
        end_to_end: Timing::from_samples(&mut totals),
        digests: digests.iter().map(|&d| format_digest(d)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_min() {
        let t = Timing::from_samples(&mut [3.0, 1.0, 2.0]);
        assert_eq!((t.median_ms, t.min_ms), (2.0, 1.0));
        let t = Timing::from_samples(&mut [4.0, 1.0, 2.0, 3.0]);
        assert_eq!((t.median_ms, t.min_ms), (2.5, 1.0));
        assert_eq!(format_digest(0xab), "00000000000000ab");
    }
}
