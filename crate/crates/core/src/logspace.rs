//! Small log-space helpers.

/// `log(sum(exp(x)))`, returning `-inf` for an empty or all `-inf` input.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Shifts `values` so that they exponentiate to a distribution. An all
/// `-inf` input becomes uniform.
pub fn log_normalize(values: &mut [f64]) {
    let z = logsumexp(values);
    if z == f64::NEG_INFINITY || !z.is_finite() {
        let u = -(values.len() as f64).ln();
        values.iter_mut().for_each(|v| *v = u);
    } else {
        values.iter_mut().for_each(|v| *v -= z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_basics() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert!((logsumexp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((logsumexp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn normalize_handles_all_neg_inf() {
        let mut v = [f64::NEG_INFINITY; 4];
        log_normalize(&mut v);
        assert!(v.iter().all(|&x| (x - 0.25f64.ln()).abs() < 1e-15));
    }
}
