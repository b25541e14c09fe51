use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Squared L2 distance.
    Euclidean,
    /// `1 - cos(a, b)`, in `[0, 2]`.
    Cosine,
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), NnError> {
    if a.len() != b.len() {
        return Err(NnError::Shape {
            what: "distance operand",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64, NnError> {
    Ok(distance_with_grad(a, b, metric)?.0)
}

/// Distance and its gradients with respect to `a` and `b`.
pub fn distance_with_grad(a: &[f64], b: &[f64], metric: Metric) -> Result<(f64, Vec<f64>, Vec<f64>), NnError> {
    check_lengths(a, b)?;
    match metric {
        Metric::Euclidean => {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let d = dot(&diff, &diff);
            let ga: Vec<f64> = diff.iter().map(|v| 2.0 * v).collect();
            let gb = ga.iter().map(|v| -v).collect();
            Ok((d, ga, gb))
        }
        Metric::Cosine => {
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(NnError::ZeroVector);
            }
            let c = dot(a, b) / (na * nb);
            // d(1 - c)/da = -(b / (|a||b|) - c a / |a|^2)
            let ga = a
                .iter()
                .zip(b)
                .map(|(x, y)| -(y / (na * nb) - c * x / (na * na)))
                .collect();
            let gb = a
                .iter()
                .zip(b)
                .map(|(x, y)| -(x / (na * nb) - c * y / (nb * nb)))
                .collect();
            Ok((1.0 - c, ga, gb))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        for m in [Metric::Euclidean, Metric::Cosine] {
            assert!(distance(&[0.3, -1.2], &[0.3, -1.2], m).unwrap().abs() < 1e-15);
        }
        assert_eq!(distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Euclidean).unwrap(), 2.0);
        assert_eq!(distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap(), 1.0);
        assert_eq!(distance(&[1.0, 0.0], &[-1.0, 0.0], Metric::Cosine).unwrap(), 2.0);
        assert!(matches!(
            distance(&[0.0, 0.0], &[1.0, 0.0], Metric::Cosine),
            Err(NnError::ZeroVector)
        ));
        assert!(distance(&[0.0], &[1.0, 0.0], Metric::Euclidean).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let a = [0.4, -1.1, 2.0];
        let b = [1.5, 0.3, -0.2];
        let h = 1e-6;
        for m in [Metric::Euclidean, Metric::Cosine] {
            let (_, ga, gb) = distance_with_grad(&a, &b, m).unwrap();
            for i in 0..3 {
                let mut ap = a;
                ap[i] += h;
                let mut am = a;
                am[i] -= h;
                let fd = (distance(&ap, &b, m).unwrap() - distance(&am, &b, m).unwrap()) / (2.0 * h);
                assert!((ga[i] - fd).abs() < 1e-8);
                let mut bp = b;
                bp[i] += h;
                let mut bm = b;
                bm[i] -= h;
                let fd = (distance(&a, &bp, m).unwrap() - distance(&a, &bm, m).unwrap()) / (2.0 * h);
                assert!((gb[i] - fd).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn euclidean_nonnegative(a in proptest::collection::vec(-10.0f64..10.0, 4), b in proptest::collection::vec(-10.0f64..10.0, 4)) {
            prop_assert!(distance(&a, &b, Metric::Euclidean).unwrap() >= 0.0);
        }

        #[test]
        fn cosine_scale_invariant(
            a in proptest::collection::vec(0.1f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
            s in 0.01f64..100.0,
        ) {
            prop_assume!(b.iter().any(|v| v.abs() > 1e-3));
            let scaled: Vec<f64> = a.iter().map(|v| v * s).collect();
            let d0 = distance(&a, &b, Metric::Cosine).unwrap();
            let d1 = distance(&scaled, &b, Metric::Cosine).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-12);
        }
    }
}
