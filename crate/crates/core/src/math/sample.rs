use super::{dot, Mat, RngStream};
use crate::error::{config, Error, Result};

/// Draws `mean + sqrt(var) * z` with `z` i.i.d. standard normal.
pub fn sample_gaussian_vector(
    stream: &mut RngStream,
    dim: usize,
    mean: &[f64],
    var: f64,
) -> Result<Vec<f64>> {
    if mean.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: mean.len(),
            context: "gaussian mean",
        });
    }
    if !var.is_finite() || var < 0.0 {
        return config(format!(
            "gaussian variance must be finite and >= 0, got {var}"
        ));
    }
    let sd = var.sqrt();
    Ok(mean
        .iter()
        .map(|&m| m + sd * stream.standard_normal())
        .collect())
}

/// Haar-distributed orthogonal `d × d` matrix.
///
/// Orthonormalizes the columns of a standard-normal matrix with modified
/// Gram-Schmidt, run twice for numerical orthogonality. The resulting `Q`
/// is the QR factor with a positive diagonal in `R`, which makes it unique
/// and uniform over O(d). The determinant can be either sign.
pub fn sample_rotation(stream: &mut RngStream, d: usize) -> Mat {
    assert!(d >= 1, "rotation dimension must be positive");
    // columns stored as rows for contiguous access
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| stream.standard_normal()).collect())
        .collect();
    for j in 0..d {
        for _pass in 0..2 {
            for k in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let proj = dot(&done[k], &rest[0]);
                for (c, q) in rest[0].iter_mut().zip(&done[k]) {
                    *c -= proj * q;
                }
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        for c in cols[j].iter_mut() {
            *c /= norm;
        }
    }
    Mat::from_rows(&cols)
        .expect("square by construction")
        .transpose()
}

/// Index `k` drawn with probability `probs[k]`.
pub fn sample_categorical(stream: &mut RngStream, probs: &[f64]) -> Result<usize> {
    if probs.is_empty() {
        return config("categorical distribution with no outcomes");
    }
    if probs.iter().any(|p| p.is_nan() || *p < 0.0) {
        return config(format!("negative or NaN probability in {probs:?}"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return config(format!("probabilities sum to {total}, expected 1"));
    }
    let u = stream.uniform();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(k);
        }
    }
    // u landed in the rounding slack above the cumulative sum
    Ok(probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_returns_mean() {
        let mut s = RngStream::new(0);
        let v = sample_gaussian_vector(&mut s, 3, &[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn gaussian_dimension_mismatch() {
        let mut s = RngStream::new(0);
        assert!(matches!(
            sample_gaussian_vector(&mut s, 2, &[0.0], 1.0),
            Err(Error::Dimension { .. })
        ));
        assert!(sample_gaussian_vector(&mut s, 1, &[0.0], -1.0).is_err());
    }

    #[test]
    fn gaussian_moments_concentrate() {
        for seed in 0..10 {
            let mut s = RngStream::new(seed);
            let n = 100_000;
            let mut sum = [0.0; 5];
            let mut sq = [0.0; 5];
            for _ in 0..n {
                let v = sample_gaussian_vector(&mut s, 5, &[0.0; 5], 0.1).unwrap();
                for k in 0..5 {
                    sum[k] += v[k];
                    sq[k] += v[k] * v[k];
                }
            }
            for k in 0..5 {
                let m = sum[k] / n as f64;
                let var = sq[k] / n as f64 - m * m;
                assert!((0.095..=0.105).contains(&var), "seed {seed}: var {var}");
            }
            let mut s1 = RngStream::new(seed + 100);
            let mean = (0..n)
                .map(|_| sample_gaussian_vector(&mut s1, 1, &[0.0], 1.0).unwrap()[0])
                .sum::<f64>()
                / n as f64;
            assert!(mean.abs() <= 0.02, "seed {seed}: mean {mean}");
        }
    }

    #[test]
    fn rotation_one_dimensional() {
        let mut s = RngStream::new(3);
        let r = sample_rotation(&mut s, 1);
        assert_eq!(r[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn rotation_is_orthogonal_up_to_64() {
        for seed in 0..100 {
            let mut s = RngStream::new(seed);
            for d in [2usize, 10, 33, 64] {
                let r = sample_rotation(&mut s, d);
                let g = r.transpose().matmul(&r).unwrap();
                let err = g.max_abs_diff(&Mat::identity(d));
                assert!(err <= 1e-10, "seed {seed} d {d}: {err}");
            }
        }
    }

    #[test]
    fn rotation_preserves_norms() {
        let mut s = RngStream::new(9);
        let r = sample_rotation(&mut s, 10);
        for _ in 0..20 {
            let v: Vec<f64> = (0..10).map(|_| s.standard_normal()).collect();
            let rv = r.tr_mat_vec(&v).unwrap();
            let (a, b) = (dot(&v, &v).sqrt(), dot(&rv, &rv).sqrt());
            assert!((a - b).abs() <= 1e-10 * a);
        }
    }

    #[test]
    fn categorical_degenerate_and_invalid() {
        let mut s = RngStream::new(1);
        for _ in 0..1000 {
            assert_eq!(
                sample_categorical(&mut s, &[1.0, 0.0, 0.0, 0.0]).unwrap(),
                0
            );
        }
        assert!(matches!(
            sample_categorical(&mut s, &[0.5, 0.6]),
            Err(Error::Config(_))
        ));
        assert!(sample_categorical(&mut s, &[1.5, -0.5]).is_err());
    }

    #[test]
    fn categorical_frequencies_match_cow_camel_probs() {
        let (p, q): (f64, f64) = (0.95, 0.3);
        let probs = [p * q, (1.0 - p) * q, p * (1.0 - q), (1.0 - p) * (1.0 - q)];
        let expected = [0.285, 0.015, 0.665, 0.035];
        for (a, b) in probs.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut s = RngStream::new(77);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_categorical(&mut s, &probs).unwrap()] += 1;
        }
        for k in 0..4 {
            let f = counts[k] as f64 / n as f64;
            assert!((f - expected[k]).abs() <= 0.01, "k {k}: {f}");
        }
    }

    #[test]
    fn categorical_chi_square() {
        // 99.9% quantile of chi-square with 3 degrees of freedom
        const CHI2_3_999: f64 = 16.266;
        let probs = [0.1, 0.2, 0.3, 0.4];
        let n = 100_000;
        let mut passes = 0;
        for seed in 0..10 {
            let mut s = RngStream::new(seed);
            let mut counts = [0usize; 4];
            for _ in 0..n {
                counts[sample_categorical(&mut s, &probs).unwrap()] += 1;
            }
            let stat: f64 = counts
                .iter()
                .zip(&probs)
                .map(|(&c, &p)| {
                    let e = p * n as f64;
                    (c as f64 - e).powi(2) / e
                })
                .sum();
            if stat < CHI2_3_999 {
                passes += 1;
            }
        }
        assert!(passes >= 9, "only {passes}/10 seeds passed");
    }
}
