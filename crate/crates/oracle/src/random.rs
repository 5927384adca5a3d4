use hednet_core::sparse::{Coord, SparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Each grid cell of a single-batch grid is active with probability
/// `density`, drawn in row-major cell order.
pub fn random_coords(seed: u64, spatial_shape: &[usize], density: f64) -> Vec<Coord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: usize = spatial_shape.iter().product();
    let mut p = vec![0i32; spatial_shape.len()];
    let mut out = Vec::new();
    for cell in 0..cells {
        if rng.random::<f64>() < density {
            let mut rest = cell;
            for a in (0..spatial_shape.len()).rev() {
                p[a] = (rest % spatial_shape[a]) as i32;
                rest /= spatial_shape[a];
            }
            out.push(Coord::new(0, &p));
        }
    }
    out
}

/// Standard-normal vector from its own seeded stream.
pub fn random_vec(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Seeded sparse tensor with expected active fraction `density` and
/// standard-normal features.
pub fn random_sparse_tensor(seed: u64, spatial_shape: &[usize], density: f64, channels: usize) -> SparseTensor<f64> {
    assert!(density > 0.0 && density <= 1.0, "density must lie in (0, 1], got {density}");
    let coords = random_coords(seed, spatial_shape, density);
    let features = random_vec(seed ^ 0x9e37_79b9_7f4a_7c15, coords.len() * channels);
    SparseTensor::new(coords, features, spatial_shape.to_vec(), 1, channels).expect("generated coordinates are canonical")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_full() {
        assert_eq!(random_sparse_tensor(5, &[8, 8], 0.3, 2), random_sparse_tensor(5, &[8, 8], 0.3, 2));
        assert_eq!(random_sparse_tensor(5, &[4, 4, 4], 1.0, 1).len(), 64);
    }

    #[test]
    fn binomial_bound() {
        let (n, p) = (1024.0, 0.05);
        let bound = 5.0 * (n * p * (1.0f64 - p)).sqrt();
        let inside = (0..200u64)
            .filter(|&s| ((random_coords(s, &[32, 32], p).len() as f64) - n * p).abs() <= bound)
            .count();
        assert!(inside >= 198, "{inside}/200 seeds within the bound");
    }
}
