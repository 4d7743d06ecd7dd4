use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;

/// Draws a tensor from `N(mean, std^2)`, reproducible for a given seed.
pub fn init_gaussian(shape: &[usize], mean: f64, std: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_from(&mut rng, shape, mean, std)
}

pub fn gaussian_from(rng: &mut ChaCha8Rng, shape: &[usize], mean: f64, std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = if std == 0.0 {
        vec![mean; n]
    } else {
        let dist = Normal::new(mean, std).expect("finite positive std");
        (0..n).map(|_| dist.sample(rng)).collect()
    };
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        assert_eq!(init_gaussian(&[2, 2], 0.0, 0.1, 7), init_gaussian(&[2, 2], 0.0, 0.1, 7));
        assert_ne!(init_gaussian(&[2, 2], 0.0, 0.1, 7), init_gaussian(&[2, 2], 0.0, 0.1, 8));
    }

    #[test]
    fn zero_std_gives_constant() {
        assert!(init_gaussian(&[3, 4], 0.0, 0.0, 1).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sample_moments_within_bands() {
        let t = init_gaussian(&[100_000], 0.0, 0.1, 42);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 3-sigma band on the mean: 3 * 0.1 / sqrt(1e5)
        assert!(mean.abs() < 3.0 * 0.1 / n.sqrt(), "mean {mean}");
        let std = var.sqrt();
        assert!((0.097..=0.103).contains(&std), "std {std}");
    }
}
