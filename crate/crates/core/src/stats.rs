//! Small order-statistics helpers shared by thresholding, binning and
//! bootstrap intervals.

use crate::error::{Error, Result};

/// Quantile of pre-sorted data by linear interpolation between order
/// statistics: rank `frac * (n - 1)`, fractional ranks interpolated.
pub fn percentile_sorted(sorted: &[f64], frac: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Numeric("percentile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::Config(format!("percentile fraction {frac} outside [0, 1]")));
    }
    let pos = frac * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    Ok(sorted[lo] * (1.0 - w) + sorted[hi] * w)
}

/// Sort the sample in place (rejecting NaNs) and evaluate several quantiles.
pub fn percentiles(values: &mut [f64], fracs: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in percentile sample".into()));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    fracs.iter().map(|&f| percentile_sorted(values, f)).collect()
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
