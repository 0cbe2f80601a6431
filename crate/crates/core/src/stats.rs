//! Summary statistics over replications.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Large-sample standard error of the median, `sqrt(pi/2) sd / sqrt(m)`
/// (exact for normal data).
pub fn median_std_error(xs: &[f64]) -> f64 {
    1.2533 * std_error(xs)
}

/// `b <= a` up to two combined standard errors.
pub fn not_larger(a: f64, se_a: f64, b: f64, se_b: f64) -> bool {
    b <= a + 2.0 * (se_a * se_a + se_b * se_b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_samples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert_eq!(median(&xs), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert!((std_dev(&xs) - (5.0_f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(std_error(&[1.0]).is_nan());
    }

    #[test]
    fn comparison_allows_noise() {
        assert!(not_larger(1.0, 0.1, 1.2, 0.1));
        assert!(!not_larger(1.0, 0.01, 1.2, 0.01));
    }
}
