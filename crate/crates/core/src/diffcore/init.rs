//! Seeded parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::Tensor;

/// Derives an independent generator for one parameter path, so adding or
/// removing parameters never shifts the draws of the others.
pub fn path_rng(seed: u64, path: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(path.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: Vec<usize>, fan_in: usize, fan_out: usize, seed: u64, path: &str) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = path_rng(seed, path);
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, values).expect("shape matches value count")
}

/// Uniform in `±sqrt(6 / ((1 + leak²) · fan_in))`, the variance-preserving
/// range for a leaky rectifier with negative slope `leak`.
pub fn he_uniform(shape: Vec<usize>, fan_in: usize, leak: f64, seed: u64, path: &str) -> Tensor {
    let bound = (6.0 / ((1.0 + leak * leak) * fan_in as f64)).sqrt();
    let mut rng = path_rng(seed, path);
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, values).expect("shape matches value count")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_range_and_second_moment() {
        let t = he_uniform(vec![64, 8, 25], 200, 0.1, 3, "c.weight");
        let bound = (6.0f64 / (1.01 * 200.0)).sqrt();
        assert!(t.values().iter().all(|v| v.abs() <= bound));
        let m2 = t.values().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        let want = 2.0 / (1.01 * 200.0);
        assert!((m2 - want).abs() < 0.05 * want, "{m2} vs {want}");
    }

    #[test]
    fn bounded_and_reproducible() {
        let a = glorot_uniform(vec![4, 6], 6, 4, 7, "x.weight");
        let b = glorot_uniform(vec![4, 6], 6, 4, 7, "x.weight");
        let c = glorot_uniform(vec![4, 6], 6, 4, 7, "y.weight");
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / 10.0).sqrt();
        assert!(a.values().iter().all(|v| v.abs() <= bound));
    }
}
