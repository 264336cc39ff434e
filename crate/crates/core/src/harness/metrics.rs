use serde::{Deserialize, Serialize};

/// Percentile `q ∈ [0, 1]` by linear interpolation between order statistics
/// (`sorted[(n−1)·q]`). `NaN` for an empty sample.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let i = pos.floor() as usize;
            if i + 1 >= n {
                return sorted[n - 1];
            }
            let f = pos - i as f64;
            sorted[i] + f * (sorted[i + 1] - sorted[i])
        }
    }
}

pub fn sorted(errors: &[f64]) -> Vec<f64> {
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// HE@50 and HE@95 of a set of horizontal errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub he50: f64,
    pub he95: f64,
    pub epochs: usize,
}

impl ErrorSummary {
    pub fn from_errors(errors: &[f64]) -> Self {
        let s = sorted(errors);
        Self {
            he50: percentile(&s, 0.5),
            he95: percentile(&s, 0.95),
            epochs: s.len(),
        }
    }
}

/// Empirical CDF as `(error, fraction ≤ error)` steps.
pub fn cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let s = sorted(errors);
    let n = s.len() as f64;
    s.iter().enumerate().map(|(i, &e)| (e, (i + 1) as f64 / n)).collect()
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // independent definition: weighted average of the two bracketing order
    // statistics, located by counting
    fn oracle(values: &[f64], q: f64) -> f64 {
        let n = values.len();
        let h = (n - 1) as f64 * q;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        let kth = |k: usize| {
            let mut v = values.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[k]
        };
        kth(lo) + (h - lo as f64) * (kth(hi) - kth(lo))
    }

    #[test]
    fn percentile_examples() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 0.5), 2.5);
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert_eq!(percentile(&s, 1.0), 4.0);
        assert!((percentile(&s, 0.95) - 3.85).abs() < 1e-12);
        assert!(percentile(&[], 0.5).is_nan());
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
    }

    proptest! {
        #[test]
        fn matches_order_statistic_oracle(values in prop::collection::vec(0.0f64..500.0, 1..200), q in 0.0f64..=1.0) {
            let p = percentile(&sorted(&values), q);
            prop_assert!((p - oracle(&values, q)).abs() < 1e-9);
        }

        #[test]
        fn cdf_monotone_to_one(values in prop::collection::vec(0.0f64..500.0, 1..100)) {
            let c = cdf(&values);
            prop_assert!(c.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(c.last().unwrap().1, 1.0);
        }
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[3.0, 3.0, 3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
