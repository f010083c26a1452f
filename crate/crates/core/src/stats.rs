//! Paired non-parametric testing: two-sided Wilcoxon signed-rank test with
//! an exact enumeration path for small samples, and Bonferroni correction.

use crate::error::{Error, Result};

/// Outcome of a two-sided Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// W = min of the positive and negative signed rank sums.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
    /// True when the exact enumeration path was taken (n <= 25).
    pub exact: bool,
}

/// Largest n for which the null distribution is enumerated exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Midranks of |d| (average rank across ties).
fn midranks(abs_d: &[f64]) -> Vec<f64> {
    let n = abs_d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| abs_d[a].partial_cmp(&abs_d[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact P(W+ <= w) under the null, by dynamic programming over doubled
/// ranks (midranks are multiples of 1/2, so doubling makes them integers).
fn exact_cdf(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|&r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in &doubled {
        reach += r;
        for s in (0..=reach.saturating_sub(r)).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
    }
    let limit = (2.0 * w).round() as usize;
    let hits: u64 = counts.iter().take(limit.min(total) + 1).sum();
    hits as f64 / (1u64 << ranks.len()) as f64
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped; ties get midranks. The p-value is exact
/// (full enumeration of sign assignments) for n <= 25 and a normal
/// approximation with tie and continuity corrections beyond that.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::UndefinedTest(
            "all paired differences are zero".into(),
        ));
    }
    let n = diffs.len();
    if n < 5 {
        return Err(Error::InvalidArgument(format!(
            "need at least 5 nonzero differences, got {n}"
        )));
    }

    let abs_d: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs_d);
    let w_pos: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = n as f64 * (n + 1) as f64 / 2.0;
    let w_neg = total - w_pos;
    let w = w_pos.min(w_neg);

    let (p, exact) = if n <= WILCOXON_EXACT_MAX_N {
        (( 2.0 * exact_cdf(&ranks, w)).min(1.0), true)
    } else {
        let mean = total / 2.0;
        // Tie correction: subtract sum(t^3 - t)/48 from the variance.
        let mut tie_term = 0.0;
        let mut sorted = abs_d.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = n as f64 * (n + 1) as f64 * (2 * n + 1) as f64 / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            return Err(Error::UndefinedTest(
                "zero variance after tie correction".into(),
            ));
        }
        let z = (w - mean + 0.5) / var.sqrt();
        ((2.0 * normal_cdf(z)).min(1.0), false)
    };

    Ok(WilcoxonResult {
        statistic: w,
        p_value: p,
        n_used: n,
        exact,
    })
}

/// Bonferroni correction: each p-value multiplied by the family size and
/// clamped to 1.
pub fn bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}
