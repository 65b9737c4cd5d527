//! Sample statistics for latency distributions.
//!
//! Quantiles use linear interpolation between order statistics
//! (`h = (n-1)q`, the R type-7 default), which keeps results exactly
//! reproducible from the stored records. Box-and-whisker fields follow the
//! Tukey convention: whiskers reach the most extreme samples within 1.5 IQR
//! of the quartiles, everything outside is counted as an outlier.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("empty sample set")]
    Empty,
    #[error("samples must be finite")]
    NonFinite,
    #[error("quantile fraction must lie in [0, 1]")]
    BadQuantile,
    #[error("samples must be sorted ascending")]
    Unsorted,
}

/// Five-number summary plus the derived fields reports need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
    pub mean: f64,
    /// Smallest sample at or above `q1 - 1.5 * iqr`.
    pub whisker_low: f64,
    /// Largest sample at or below `q3 + 1.5 * iqr`.
    pub whisker_high: f64,
    pub outlier_count: usize,
}

/// Interpolated quantile of an ascending-sorted, nonempty slice.
pub fn quantile(sorted: &[f64], q: f64) -> Result<f64, StatsError> {
    if sorted.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(StatsError::BadQuantile);
    }
    if sorted.windows(2).any(|w| w[0] > w[1]) {
        return Err(StatsError::Unsorted);
    }
    Ok(quantile_unchecked(sorted, q))
}

fn quantile_unchecked(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Summarize a nonempty sample set. Input order is irrelevant.
pub fn summarize(samples: &[f64]) -> Result<SummaryStats, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);

    let q1 = quantile_unchecked(&sorted, 0.25);
    let median = quantile_unchecked(&sorted, 0.5);
    let q3 = quantile_unchecked(&sorted, 0.75);
    let iqr = q3 - q1;
    let fence_low = q1 - 1.5 * iqr;
    let fence_high = q3 + 1.5 * iqr;
    // whiskers clip to actual samples; quartiles are always inside the fences
    let whisker_low = *sorted.iter().find(|&&x| x >= fence_low).unwrap();
    let whisker_high = *sorted.iter().rev().find(|&&x| x <= fence_high).unwrap();
    let outlier_count = sorted.iter().filter(|&&x| x < fence_low || x > fence_high).count();

    Ok(SummaryStats {
        n: sorted.len(),
        min: sorted[0],
        q1,
        median,
        q3,
        max: *sorted.last().unwrap(),
        iqr,
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        whisker_low,
        whisker_high,
        outlier_count,
    })
}

/// The table cell format: median and IQR in milliseconds, two decimals,
/// separated by ` - `.
pub fn render_median_iqr(median_ms: f64, iqr_ms: f64) -> String {
    format!("{median_ms:.2} - {iqr_ms:.2}")
}
