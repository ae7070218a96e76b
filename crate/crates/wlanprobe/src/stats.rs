//! Small order-statistics helpers shared by the analysis modules.

/// Nearest-rank percentile of a sorted slice: the `ceil(p/100 * n)`-th
/// smallest value (1-based).
pub fn nearest_rank_percentile(sorted: &[i64], percentile: f64) -> i64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    assert!((0.0..=100.0).contains(&percentile));
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Median with the even-count mean-of-middle-two rule.
pub fn median_f64(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in delay data"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn median_i64(values: &mut [i64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

/// Ordinary sample standard deviation (n-1 denominator); 0 for n < 2.
pub fn sample_std(values: &[i64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let ss = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}
