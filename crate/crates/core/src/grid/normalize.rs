//! Standardisation of fields against pooled moments.

use crate::error::{Error, Result};
use crate::grid::{GridField, VarTag};
use serde::{Deserialize, Serialize};

/// Mean and population standard deviation over the valid samples of one or
/// more fields, with the sample count they were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub n: u64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64, n: u64) -> Self {
        NormStats { mean, std, n }
    }
}

/// The standardisation moments a trained corrector travels with: observed
/// rain, forecast rain (absent for purely observation-driven setups) and
/// the residual target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSet {
    pub obs: Option<NormStats>,
    pub forecast: Option<NormStats>,
    pub residual: NormStats,
}

/// Pool valid samples from all fields and return their mean and population
/// standard deviation (Welford accumulation, single pass).
pub fn compute_stats<'a>(fields: impl IntoIterator<Item = &'a GridField>) -> Result<NormStats> {
    let mut n: u64 = 0;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for f in fields {
        for v in f.values() {
            if v.is_nan() {
                continue;
            }
            n += 1;
            let x = *v as f64;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
    }
    if n == 0 {
        return Err(Error::MissingData("no valid samples to compute statistics".into()));
    }
    let var = (m2 / n as f64).max(0.0);
    Ok(NormStats { mean, std: var.sqrt(), n })
}

/// Standardise a field: `(v - mean) / std` per valid sample. Missing samples
/// stay missing. The result is tagged dimensionless.
pub fn zscore(field: &GridField, stats: &NormStats) -> Result<GridField> {
    if !(stats.std > 0.0) || !stats.std.is_finite() || !stats.mean.is_finite() {
        return Err(Error::Numeric(format!(
            "cannot standardise with mean={} std={}",
            stats.mean, stats.std
        )));
    }
    let values = field
        .values()
        .iter()
        .map(|&v| if v.is_nan() { f32::NAN } else { ((v as f64 - stats.mean) / stats.std) as f32 })
        .collect();
    GridField::new(field.geom.clone(), VarTag::Zscored, field.valid_time, values)
}

/// Undo `zscore`: `v * std + mean`, restoring the given variable tag. No
/// clamping happens here; it is an exact inverse up to rounding.
pub fn inverse_zscore(field: &GridField, stats: &NormStats, restore: VarTag) -> Result<GridField> {
    if !(stats.std > 0.0) || !stats.std.is_finite() || !stats.mean.is_finite() {
        return Err(Error::Numeric(format!(
            "cannot destandardise with mean={} std={}",
            stats.mean, stats.std
        )));
    }
    let values = field
        .values()
        .iter()
        .map(|&v| if v.is_nan() { f32::NAN } else { (v as f64 * stats.std + stats.mean) as f32 })
        .collect();
    GridField::new(field.geom.clone(), restore, field.valid_time, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{hour_utc, GridGeometry};

    fn field(vals: Vec<f32>) -> GridField {
        let nx = vals.len();
        let geom = GridGeometry::new(1, nx, 38.0, -98.0, 1.0, 1.0).unwrap();
        GridField::new(geom, VarTag::Residual, hour_utc(2024, 6, 1, 0), vals).unwrap()
    }

    fn two_pass(vals: &[f64]) -> (f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn welford_matches_two_pass_oracle() {
        let f = field(vec![0.5, -1.25, 3.0, f32::NAN, 2.25, -0.75, 10.0, 0.0]);
        let valid: Vec<f64> =
            f.values().iter().filter(|v| !v.is_nan()).map(|&v| v as f64).collect();
        let (mean, std) = two_pass(&valid);
        let s = compute_stats([&f]).unwrap();
        assert_eq!(s.n, 7);
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.std - std).abs() < 1e-12);
    }

    #[test]
    fn pooling_across_fields_matches_concatenation() {
        let a = field(vec![1.0, 2.0, f32::NAN]);
        let b = field(vec![4.0, 8.0, 16.0]);
        let pooled = compute_stats([&a, &b]).unwrap();
        let cat = field(vec![1.0, 2.0, 4.0, 8.0, 16.0]);
        let direct = compute_stats([&cat]).unwrap();
        assert!((pooled.mean - direct.mean).abs() < 1e-12);
        assert!((pooled.std - direct.std).abs() < 1e-12);
        assert_eq!(pooled.n, direct.n);
    }

    #[test]
    fn zscore_then_inverse_recovers_values_and_missing() {
        let f = field(vec![0.5, -1.25, f32::NAN, 3.0, 2.25]);
        let s = compute_stats([&f]).unwrap();
        let z = zscore(&f, &s).unwrap();
        assert_eq!(z.var, VarTag::Zscored);
        assert!(z.is_missing(0, 2));
        let back = inverse_zscore(&z, &s, VarTag::Residual).unwrap();
        assert_eq!(back.var, VarTag::Residual);
        for (k, v) in f.values().iter().enumerate() {
            let b = back.values()[k];
            if v.is_nan() {
                assert!(b.is_nan());
            } else {
                assert!((v - b).abs() <= 1e-6 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_variance_is_rejected() {
        let f = field(vec![2.0, 2.0, 2.0]);
        let s = compute_stats([&f]).unwrap();
        assert_eq!(s.std, 0.0);
        assert!(zscore(&f, &s).is_err());
    }

    #[test]
    fn empty_pool_is_rejected() {
        let f = field(vec![f32::NAN, f32::NAN]);
        assert!(compute_stats([&f]).is_err());
    }
}
