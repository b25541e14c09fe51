use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{DataError, Dataset};

/// `n_classes` isotropic Gaussian clouds (per-coordinate std `spread`)
/// around centers drawn uniformly from the unit ball.
pub fn synth_classes(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(DataError::Argument(format!("spread must be positive, got {spread}")));
    }
    if dim == 0 {
        return Err(DataError::Argument("dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).expect("spread checked above");
    let mut samples = Vec::with_capacity(n_classes * per_class);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for c in 0..n_classes {
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let radius = rng.gen::<f64>().powf(1.0 / dim as f64);
        let center: Vec<f64> = dir.iter().map(|v| v / norm * radius).collect();
        for _ in 0..per_class {
            samples.push(center.iter().map(|m| m + noise.sample(&mut rng)).collect());
            labels.push(c as u32);
        }
    }
    Dataset::new(samples, labels, vec![dim])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_classes(5, 4, 3, 0.1, 9).unwrap();
        let b = synth_classes(5, 4, 3, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_classes(5, 4, 3, 0.1, 10).unwrap());
        assert_eq!(a.n_classes(), 5);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn tight_spread_collapses_classes() {
        let d = synth_classes(4, 6, 8, 1e-9, 1).unwrap();
        for c in d.classes() {
            let idx = d.class_samples(c);
            for &i in idx {
                let dist: f64 = d.samples[i]
                    .iter()
                    .zip(&d.samples[idx[0]])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                assert!(dist < 1e-15);
            }
        }
    }

    #[test]
    fn spread_must_be_positive() {
        assert!(synth_classes(2, 2, 2, 0.0, 0).is_err());
    }
}
