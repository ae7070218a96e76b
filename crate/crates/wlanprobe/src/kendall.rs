//! One-sided Kendall trend test with an exact permutation null.
//!
//! For a bivariate sample `(x_i, y_i)` with strictly increasing `x`, the
//! score is `S = sum over i<j of sign(y_j - y_i)`. The one-sided p-value is
//! the probability under the null (all orderings of the observed `y`
//! multiset equally likely) that a permutation scores at least `S`. At the
//! sample sizes used here (5..=10 points) the null is enumerated exactly,
//! which also handles ties without any approximation.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KendallError {
    #[error("sample size {0} outside supported range 2..=10")]
    UnsupportedSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendResult {
    /// Kendall score of the observed ordering.
    pub score: i64,
    /// score / (n choose 2).
    pub tau: f64,
    /// P(S_null >= S_observed) under the exact permutation null.
    pub p_value: f64,
    pub decision: TrendDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendDecision {
    SizeDependent,
    SizeIndependent,
}

pub fn kendall_score(values: &[i64]) -> i64 {
    let mut s = 0i64;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            s += (values[j] - values[i]).signum();
        }
    }
    s
}

/// Runs the one-sided trend test at level `alpha` on `values`, which must be
/// ordered by their (strictly increasing) x coordinate.
///
/// An all-equal sample scores 0 with p = 1 and is size-independent.
pub fn kendall_trend_test(values: &[i64], alpha: f64) -> Result<TrendResult, KendallError> {
    let n = values.len();
    if !(2..=10).contains(&n) {
        return Err(KendallError::UnsupportedSize(n));
    }
    let observed = kendall_score(values);

    // Heap's algorithm over a working copy: every one of the n! orderings of
    // the observed multiset is scored once.
    let mut work = values.to_vec();
    let mut counters = vec![0usize; n];
    let mut at_least = 0u64;
    let mut total = 1u64;
    for k in 1..=n as u64 {
        total *= k;
    }
    if kendall_score(&work) >= observed {
        at_least += 1;
    }
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                work.swap(0, i);
            } else {
                work.swap(counters[i], i);
            }
            if kendall_score(&work) >= observed {
                at_least += 1;
            }
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }

    let p_value = at_least as f64 / total as f64;
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(TrendResult {
        score: observed,
        tau: observed as f64 / pairs,
        p_value,
        decision: if p_value < alpha {
            TrendDecision::SizeDependent
        } else {
            TrendDecision::SizeIndependent
        },
    })
}
