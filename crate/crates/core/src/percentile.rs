//! Nearest-rank percentiles.

/// Zero-based rank of the `q`-th percentile among `n` sorted values:
/// `ceil(q·n/100) − 1`, floored at 0.
pub fn nearest_rank_index(n: usize, q: f64) -> usize {
    assert!(n > 0, "percentile of empty set");
    let rank = (q * n as f64 / 100.0).ceil() as usize;
    rank.saturating_sub(1).min(n - 1)
}

/// Nearest-rank `q`-th percentile. Panics on an empty input.
pub fn nearest_rank(mut values: Vec<f64>, q: f64) -> f64 {
    let k = nearest_rank_index(values.len(), q);
    *values.select_nth_unstable_by(k, |a, b| a.total_cmp(b)).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        assert_eq!(nearest_rank(vec![4.0, 0.0, 3.0, 1.0, 2.0], 50.0), 2.0);
        assert_eq!(nearest_rank((1..=100).map(f64::from).collect(), 99.0), 99.0);
        assert_eq!(nearest_rank(vec![5.0, 2.0], 0.0), 2.0);
        assert_eq!(nearest_rank(vec![5.0, 2.0], 100.0), 5.0);
        assert_eq!(nearest_rank_index(1000, 99.5), 994);
    }

    proptest! {
        #[test]
        fn matches_sorted_lookup(v in proptest::collection::vec(-1e3f64..1e3, 1..200), q in 0.0f64..100.0) {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            // smallest value with at least q% of the data at or below it
            let oracle = s.iter().enumerate()
                .find(|(i, _)| (i + 1) as f64 * 100.0 >= q * s.len() as f64)
                .map(|(_, &x)| x)
                .unwrap();
            prop_assert_eq!(nearest_rank(v, q), oracle);
        }
    }
}
