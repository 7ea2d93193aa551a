//! Numerically stable log-space helpers shared by the observation models,
//! the belief, and the rationality estimators.

/// Stable `log(1 + exp(x))`.
#[inline]
pub fn log1pexp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable `log(sigmoid(x)) = -log(1 + exp(-x))`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let recip = 1.0 / (1.0 + e);
    if x >= 0.0 {
        recip
    } else {
        e * recip
    }
}

/// `log(sum(exp(x)))`, tolerating `-inf` entries. Returns `-inf` when every
/// entry is `-inf` (or the slice is empty).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax written into `out`. `logits` must be finite.
pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let lse = log_sum_exp(logits);
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Quantile with linear interpolation between order statistics
/// (the "type 7" estimator). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Median of an unsorted sample; NaNs are rejected by `total_cmp` ordering
/// placing them last, so callers should filter them first.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1pexp_matches_naive_in_safe_range() {
        for x in [-20.0, -3.0, -0.5, 0.0, 0.5, 3.0, 20.0] {
            let naive = (1.0 + f64::exp(x)).ln();
            assert!((log1pexp(x) - naive).abs() < 1e-12, "x={x}");
        }
        assert!((log1pexp(1000.0) - 1000.0).abs() < 1e-12);
        assert!(log1pexp(-1000.0) >= 0.0);
    }

    #[test]
    fn log_sigmoid_is_finite_for_large_inputs() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert_eq!(log_sigmoid(800.0), 0.0);
        assert!((log_sigmoid(1.0) - sigmoid(1.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_reference_value() {
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((sigmoid(1.0) - expected).abs() < 1e-15);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_handles_neg_infinity() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[0.0, f64::NEG_INFINITY, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
