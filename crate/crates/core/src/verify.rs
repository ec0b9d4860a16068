//! Forecast verification: masked mean absolute error, categorical scores
//! against regional percentile thresholds, neighborhood fractions skill, and
//! bootstrap confidence intervals over tile-level resampling units.

use crate::error::{Error, Result};
use crate::grid::{check_same_geometry, GridField};
use crate::stats;
use rand::{Rng, RngCore};
use serde::Serialize;

/// Event counts from binary classification of a forecast against truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ContingencyCounts {
    pub hits: u64,
    pub false_alarms: u64,
    pub misses: u64,
    pub correct_negatives: u64,
}

impl ContingencyCounts {
    pub fn total(&self) -> u64 {
        self.hits + self.false_alarms + self.misses + self.correct_negatives
    }

    /// Probability of detection, hits / (hits + misses). Absent when no
    /// events were observed.
    pub fn pod(&self) -> Option<f64> {
        let denom = self.hits + self.misses;
        (denom > 0).then(|| self.hits as f64 / denom as f64)
    }

    /// Critical success index, hits / (hits + false alarms + misses).
    /// Absent when neither field had an event.
    pub fn csi(&self) -> Option<f64> {
        let denom = self.hits + self.false_alarms + self.misses;
        (denom > 0).then(|| self.hits as f64 / denom as f64)
    }
}

/// Mean absolute error over pixels where truth is positive and both fields
/// are non-missing. Zero-rainfall pixels never contribute.
pub fn mae_nonzero(pred: &GridField, truth: &GridField) -> Result<f64> {
    check_same_geometry(&pred.geom, &truth.geom)?;
    let mut sum = 0.0f64;
    let mut n = 0u64;
    for (p, t) in pred.values().iter().zip(truth.values()) {
        if t.is_nan() || p.is_nan() || *t <= 0.0 {
            continue;
        }
        sum += (*p as f64 - *t as f64).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::MissingData(
            "no pixels with positive truth and valid data".into(),
        ));
    }
    Ok(sum / n as f64)
}

/// Pooled variant of [`mae_nonzero`] over many (pred, truth) pairs, sharing
/// one sum and count so tiles weigh by qualifying pixel count. Absent when
/// nothing qualifies.
pub fn mae_nonzero_pooled<'a, I>(pairs: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a (GridField, GridField)>,
{
    let mut sum = 0.0f64;
    let mut n = 0u64;
    for (pred, truth) in pairs {
        for (p, t) in pred.values().iter().zip(truth.values()) {
            if t.is_nan() || p.is_nan() || *t <= 0.0 {
                continue;
            }
            sum += (*p as f64 - *t as f64).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Classify every pixel where both fields are non-missing; an event is a
/// value at or above the threshold. Zero-rainfall pixels are retained.
pub fn contingency(pred: &GridField, truth: &GridField, threshold: f64) -> Result<ContingencyCounts> {
    contingency_masked(pred, truth, threshold, false)
}

/// [`contingency`] restricted to pixels with positive truth, for
/// configurations that drop zero-rainfall pixels from categorical scores.
pub fn contingency_wet_only(
    pred: &GridField,
    truth: &GridField,
    threshold: f64,
) -> Result<ContingencyCounts> {
    contingency_masked(pred, truth, threshold, true)
}

fn contingency_masked(
    pred: &GridField,
    truth: &GridField,
    threshold: f64,
    wet_only: bool,
) -> Result<ContingencyCounts> {
    check_same_geometry(&pred.geom, &truth.geom)?;
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::Config(format!(
            "event threshold must be positive and finite, got {threshold}"
        )));
    }
    let mut c = ContingencyCounts::default();
    for (p, t) in pred.values().iter().zip(truth.values()) {
        if t.is_nan() || p.is_nan() || (wet_only && *t <= 0.0) {
            continue;
        }
        let fe = *p as f64 >= threshold;
        let oe = *t as f64 >= threshold;
        match (fe, oe) {
            (true, true) => c.hits += 1,
            (true, false) => c.false_alarms += 1,
            (false, true) => c.misses += 1,
            (false, false) => c.correct_negatives += 1,
        }
    }
    Ok(c)
}

/// Fractions skill score at neighborhood size `n`. Both fields are
/// binarized at the threshold, event fractions are box-filtered with
/// windows truncated at the domain edge and normalized by the in-bounds
/// pixel count, and the score is one minus the fraction mean squared
/// difference over the no-skill reference `mean(f^2) + mean(o^2)`.
/// Absent when neither field contains an event.
pub fn fss(pred: &GridField, truth: &GridField, threshold: f64, n: usize) -> Result<Option<f64>> {
    check_same_geometry(&pred.geom, &truth.geom)?;
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::Config(format!(
            "event threshold must be positive and finite, got {threshold}"
        )));
    }
    let (ny, nx) = (pred.geom.ny, pred.geom.nx);
    if n == 0 || n % 2 == 0 {
        return Err(Error::Config(format!("neighborhood size must be odd, got {n}")));
    }
    if n > ny.min(nx) {
        return Err(Error::Config(format!(
            "neighborhood {n} exceeds the {ny}x{nx} domain"
        )));
    }
    if pred.values().iter().chain(truth.values()).any(|v| v.is_nan()) {
        return Err(Error::MissingData(
            "neighborhood fractions need complete fields; fill missing pixels first".into(),
        ));
    }

    let f = event_fractions(pred, threshold, n);
    let o = event_fractions(truth, threshold, n);
    let npix = (ny * nx) as f64;
    let mut mse = 0.0;
    let mut reference = 0.0;
    for (a, b) in f.iter().zip(&o) {
        mse += (a - b) * (a - b);
        reference += a * a + b * b;
    }
    mse /= npix;
    reference /= npix;
    if reference == 0.0 {
        return Ok(None);
    }
    Ok(Some(1.0 - mse / reference))
}

/// Per-pixel event fraction in the centered n-by-n window, computed with a
/// summed-area table so each window is one constant-time lookup.
fn event_fractions(field: &GridField, threshold: f64, n: usize) -> Vec<f64> {
    let (ny, nx) = (field.geom.ny, field.geom.nx);
    let mut sat = vec![0.0f64; (ny + 1) * (nx + 1)];
    for i in 0..ny {
        for j in 0..nx {
            let e = if field.get(i, j) as f64 >= threshold { 1.0 } else { 0.0 };
            sat[(i + 1) * (nx + 1) + (j + 1)] =
                e + sat[i * (nx + 1) + (j + 1)] + sat[(i + 1) * (nx + 1) + j]
                    - sat[i * (nx + 1) + j];
        }
    }
    let r = n / 2;
    let mut out = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        let top = i.saturating_sub(r);
        let bot = (i + r).min(ny - 1) + 1;
        for j in 0..nx {
            let left = j.saturating_sub(r);
            let right = (j + r).min(nx - 1) + 1;
            let sum = sat[bot * (nx + 1) + right] - sat[top * (nx + 1) + right]
                - sat[bot * (nx + 1) + left]
                + sat[top * (nx + 1) + left];
            out.push(sum / ((bot - top) * (right - left)) as f64);
        }
    }
    out
}

/// Regional event thresholds (mm) at the 50th, 75th, 90th and 95th rainfall
/// percentiles. Rows keep their insertion order; thresholds must increase
/// strictly across percentiles within a row.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    rows: Vec<(String, [f64; 4])>,
}

pub const THRESHOLD_COLUMNS: [&str; 4] = ["p50", "p75", "p90", "p95"];

const DEFAULT_THRESHOLDS: [(&str, [f64; 4]); 9] = [
    ("CONUS", [1.02, 2.40, 5.26, 8.43]),
    ("PCST", [0.96, 1.89, 3.18, 4.21]),
    ("ROCK", [0.90, 1.92, 3.94, 6.13]),
    ("NGP", [1.14, 2.80, 6.33, 10.14]),
    ("MDWST", [1.33, 3.15, 6.66, 10.27]),
    ("NE", [0.88, 2.03, 4.71, 7.72]),
    ("SW", [0.72, 1.41, 2.52, 3.55]),
    ("SGP", [0.99, 2.17, 4.47, 7.04]),
    ("SE", [0.96, 2.04, 4.00, 5.90]),
];

impl ThresholdTable {
    /// The shipped CONUS-plus-eight-regions table.
    pub fn builtin() -> Self {
        let rows = DEFAULT_THRESHOLDS
            .iter()
            .map(|(r, v)| (r.to_string(), *v))
            .collect();
        ThresholdTable { rows }
    }

    pub fn from_rows(rows: Vec<(String, [f64; 4])>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("threshold table needs at least one region".into()));
        }
        for (region, vals) in &rows {
            if region.is_empty() || region.contains(',') {
                return Err(Error::Format(format!("bad region name {region:?}")));
            }
            if rows.iter().filter(|(r, _)| r == region).count() > 1 {
                return Err(Error::Format(format!("duplicate region {region}")));
            }
            for w in vals.windows(2) {
                if !(w[0] > 0.0 && w[1] > w[0] && w[1].is_finite()) {
                    return Err(Error::Format(format!(
                        "thresholds for {region} must increase strictly and stay positive, got {vals:?}"
                    )));
                }
            }
        }
        Ok(ThresholdTable { rows })
    }

    /// Parse the `region,p50,p75,p90,p95` table.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty threshold table".into()))?;
        if header.trim() != "region,p50,p75,p90,p95" {
            return Err(Error::Format(format!(
                "threshold table header must be region,p50,p75,p90,p95, got {header:?}"
            )));
        }
        let mut rows = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 5 {
                return Err(Error::Format(format!("threshold row needs 5 fields: {line:?}")));
            }
            let mut vals = [0.0f64; 4];
            for (slot, cell) in vals.iter_mut().zip(&parts[1..]) {
                *slot = cell
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad threshold {cell:?} in {line:?}")))?;
            }
            rows.push((parts[0].trim().to_string(), vals));
        }
        ThresholdTable::from_rows(rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("region,p50,p75,p90,p95\n");
        for (region, v) in &self.rows {
            out.push_str(&format!("{region},{},{},{},{}\n", v[0], v[1], v[2], v[3]));
        }
        out
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(r, _)| r.as_str())
    }

    /// Threshold for a region at one of the columns in
    /// [`THRESHOLD_COLUMNS`]; `None` for unknown region or column.
    pub fn get(&self, region: &str, column: &str) -> Option<f64> {
        let idx = THRESHOLD_COLUMNS.iter().position(|c| *c == column)?;
        self.rows.iter().find(|(r, _)| r == region).map(|(_, v)| v[idx])
    }
}

/// Bootstrap resampling parameters: replicate count and two-sided
/// confidence level.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { n_boot: 1000, level: 0.95 }
    }
}

/// Percentile interval from a bootstrap run, with the number of replicates
/// whose metric came back undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    pub skipped: u64,
}

/// Resample `units` with replacement `n_boot` times, evaluate the metric on
/// each pooled resample, and return the central percentile interval of the
/// defined replicate values. Undefined replicates are skipped and counted.
/// The same seed always yields the same interval.
pub fn bootstrap_ci<U, F>(
    units: &[U],
    metric: F,
    cfg: &BootstrapConfig,
    rng: &mut dyn RngCore,
) -> Result<BootstrapInterval>
where
    F: Fn(&[&U]) -> Option<f64>,
{
    if units.len() < 2 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 2 resampling units, got {}",
            units.len()
        )));
    }
    if cfg.n_boot == 0 {
        return Err(Error::Config("bootstrap needs at least 1 replicate".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level must lie in (0, 1), got {}",
            cfg.level
        )));
    }
    let mut replicates = Vec::with_capacity(cfg.n_boot);
    let mut skipped = 0u64;
    let mut draw: Vec<&U> = Vec::with_capacity(units.len());
    for _ in 0..cfg.n_boot {
        draw.clear();
        for _ in 0..units.len() {
            draw.push(&units[rng.random_range(0..units.len())]);
        }
        match metric(&draw) {
            Some(v) if v.is_finite() => replicates.push(v),
            _ => skipped += 1,
        }
    }
    if replicates.is_empty() {
        return Err(Error::Numeric(
            "metric undefined on every bootstrap replicate".into(),
        ));
    }
    let tail = (1.0 - cfg.level) / 2.0;
    let bounds = stats::percentiles(&mut replicates, &[tail, 1.0 - tail])?;
    Ok(BootstrapInterval { lo: bounds[0], hi: bounds[1], skipped })
}

/// One verification result with its evaluation context. Optional fields
/// stay empty in CSV output and null in JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub month: Option<u32>,
    pub region: Option<String>,
    pub lead_hours: Option<u8>,
    pub threshold_mm: Option<f64>,
    pub n: u64,
}

impl MetricReport {
    pub fn check(&self) -> Result<()> {
        match (self.ci_lo, self.ci_hi) {
            (Some(lo), Some(hi)) => {
                if !(lo <= self.value && self.value <= hi) {
                    return Err(Error::Numeric(format!(
                        "{}: interval [{lo}, {hi}] does not contain {}",
                        self.metric, self.value
                    )));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::Numeric(format!(
                    "{}: confidence interval needs both bounds",
                    self.metric
                )))
            }
        }
        Ok(())
    }
}

fn opt_cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Render reports as a CSV table with header
/// `metric,value,ci_lo,ci_hi,month,region,lead_hours,threshold_mm,n`.
pub fn reports_to_csv(reports: &[MetricReport]) -> Result<String> {
    let mut out = String::from("metric,value,ci_lo,ci_hi,month,region,lead_hours,threshold_mm,n\n");
    for r in reports {
        r.check()?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.metric,
            r.value,
            opt_cell(&r.ci_lo),
            opt_cell(&r.ci_hi),
            opt_cell(&r.month),
            opt_cell(&r.region),
            opt_cell(&r.lead_hours),
            opt_cell(&r.threshold_mm),
            r.n
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{hour_utc, GridGeometry, VarTag};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom(ny: usize, nx: usize) -> GridGeometry {
        GridGeometry::new(ny, nx, 35.0, -100.0, 1.0, 1.0).unwrap()
    }

    fn field(g: &GridGeometry, vals: &[f32]) -> GridField {
        let mut f = GridField::filled(g.clone(), VarTag::Rain, hour_utc(2024, 6, 1, 12), 0.0);
        f.values_mut().copy_from_slice(vals);
        f
    }

    fn random_rain(g: &GridGeometry, seed: u64, wet_fraction: f32, max: f32) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = GridField::filled(g.clone(), VarTag::Rain, hour_utc(2024, 6, 1, 12), 0.0);
        for v in f.values_mut() {
            if rng.random_range(0.0..1.0f32) < wet_fraction {
                *v = rng.random_range(0.0..max);
            }
        }
        f
    }

    #[test]
    fn mae_is_zero_for_perfect_forecast() {
        let g = geom(6, 6);
        let truth = random_rain(&g, 3, 0.8, 10.0);
        assert_eq!(mae_nonzero(&truth.clone(), &truth).unwrap(), 0.0);
    }

    #[test]
    fn mae_skips_zero_truth_pixels() {
        let g = geom(1, 2);
        let truth = field(&g, &[0.0, 2.0]);
        let pred = field(&g, &[5.0, 3.0]);
        assert!((mae_nonzero(&pred, &truth).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mae_matches_masked_oracle() {
        let g = geom(24, 17);
        let mut truth = random_rain(&g, 10, 0.5, 8.0);
        let mut pred = random_rain(&g, 11, 0.7, 8.0);
        truth.set(3, 3, f32::NAN);
        pred.set(5, 9, f32::NAN);
        let got = mae_nonzero(&pred, &truth).unwrap();

        let mut diffs = Vec::new();
        for i in 0..g.ny {
            for j in 0..g.nx {
                let (p, t) = (pred.get(i, j), truth.get(i, j));
                if !p.is_nan() && !t.is_nan() && t > 0.0 {
                    diffs.push((p as f64 - t as f64).abs());
                }
            }
        }
        let want = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!((got - want).abs() < 1e-12);
        assert_eq!(
            mae_nonzero_pooled(std::iter::once(&(pred, truth))).unwrap(),
            got
        );
    }

    #[test]
    fn mae_errors_without_qualifying_pixels() {
        let g = geom(4, 4);
        let truth = field(&g, &[0.0; 16]);
        let pred = random_rain(&g, 1, 0.5, 3.0);
        assert!(mae_nonzero(&pred, &truth).is_err());
    }

    #[test]
    fn contingency_counts_follow_definitions() {
        let g = geom(5, 5);
        let truth = random_rain(&g, 20, 0.6, 4.0);
        let c = contingency(&truth.clone(), &truth, 1.02).unwrap();
        assert_eq!(c.false_alarms, 0);
        assert_eq!(c.misses, 0);
        assert_eq!(c.total(), 25);

        let all_event = field(&g, &[3.0; 25]);
        let none = field(&g, &[0.0; 25]);
        let c = contingency(&all_event, &none, 1.0).unwrap();
        assert_eq!(c.false_alarms, 25);
        assert_eq!(c.total(), 25);
    }

    #[test]
    fn contingency_matches_pixel_oracle() {
        let g = geom(32, 32);
        let mut truth = random_rain(&g, 30, 0.5, 6.0);
        let mut pred = random_rain(&g, 31, 0.5, 6.0);
        truth.set(0, 5, f32::NAN);
        pred.set(9, 2, f32::NAN);
        let threshold = 1.02;
        for wet_only in [false, true] {
            let got = contingency_masked(&pred, &truth, threshold, wet_only).unwrap();
            let mut want = ContingencyCounts::default();
            let mut evaluated = 0u64;
            for i in 0..32 {
                for j in 0..32 {
                    let (p, t) = (pred.get(i, j) as f64, truth.get(i, j) as f64);
                    if p.is_nan() || t.is_nan() || (wet_only && t <= 0.0) {
                        continue;
                    }
                    evaluated += 1;
                    match (p >= threshold, t >= threshold) {
                        (true, true) => want.hits += 1,
                        (true, false) => want.false_alarms += 1,
                        (false, true) => want.misses += 1,
                        (false, false) => want.correct_negatives += 1,
                    }
                }
            }
            assert_eq!(got, want);
            assert_eq!(got.total(), evaluated);
        }
    }

    #[test]
    fn pod_and_csi_are_the_stated_ratios() {
        let c = ContingencyCounts { hits: 8, false_alarms: 0, misses: 2, correct_negatives: 0 };
        assert!((c.pod().unwrap() - 0.8).abs() < 1e-12);
        let c = ContingencyCounts { hits: 8, false_alarms: 2, misses: 2, correct_negatives: 0 };
        assert!((c.csi().unwrap() - 8.0 / 12.0).abs() < 1e-12);
        let perfect = ContingencyCounts { hits: 10, false_alarms: 0, misses: 0, correct_negatives: 5 };
        assert_eq!(perfect.pod(), Some(1.0));
        assert_eq!(perfect.csi(), Some(1.0));
        let empty = ContingencyCounts { hits: 0, false_alarms: 0, misses: 0, correct_negatives: 9 };
        assert_eq!(empty.pod(), None);
        assert_eq!(empty.csi(), None);
    }

    #[test]
    fn fss_perfect_forecast_scores_one() {
        let g = geom(20, 20);
        let truth = random_rain(&g, 40, 0.4, 5.0);
        for n in [1, 5, 9] {
            let v = fss(&truth.clone(), &truth, 1.0, n).unwrap().unwrap();
            assert!((v - 1.0).abs() < 1e-12, "n = {n} gave {v}");
        }
    }

    #[test]
    fn fss_disjoint_fields_score_zero_at_n1() {
        let g = geom(8, 8);
        let pred = field(&g, &[3.0; 64]);
        let truth = field(&g, &[0.0; 64]);
        let v = fss(&pred, &truth, 1.0, 1).unwrap().unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn fss_zero_reference_is_absent() {
        let g = geom(8, 8);
        let pred = field(&g, &[0.2; 64]);
        let truth = field(&g, &[0.1; 64]);
        assert_eq!(fss(&pred, &truth, 1.0, 3).unwrap(), None);
    }

    #[test]
    fn fss_rejects_bad_neighborhoods_and_missing_data() {
        let g = geom(8, 8);
        let a = random_rain(&g, 1, 0.5, 5.0);
        let b = random_rain(&g, 2, 0.5, 5.0);
        assert!(fss(&a, &b, 1.0, 4).is_err());
        assert!(fss(&a, &b, 1.0, 9).is_err());
        let mut holed = a.clone();
        holed.set(2, 2, f32::NAN);
        assert!(fss(&holed, &b, 1.0, 3).is_err());
    }

    fn fss_brute_force(pred: &GridField, truth: &GridField, threshold: f64, n: usize) -> Option<f64> {
        let (ny, nx) = (pred.geom.ny, pred.geom.nx);
        let r = n as isize / 2;
        let frac = |f: &GridField, ci: usize, cj: usize| {
            let mut events = 0.0;
            let mut count = 0.0;
            for di in -r..=r {
                for dj in -r..=r {
                    let (i, j) = (ci as isize + di, cj as isize + dj);
                    if i < 0 || j < 0 || i >= ny as isize || j >= nx as isize {
                        continue;
                    }
                    count += 1.0;
                    if f.get(i as usize, j as usize) as f64 >= threshold {
                        events += 1.0;
                    }
                }
            }
            events / count
        };
        let mut mse = 0.0;
        let mut reference = 0.0;
        for i in 0..ny {
            for j in 0..nx {
                let (a, b) = (frac(pred, i, j), frac(truth, i, j));
                mse += (a - b) * (a - b);
                reference += a * a + b * b;
            }
        }
        let npix = (ny * nx) as f64;
        (reference > 0.0).then(|| 1.0 - (mse / npix) / (reference / npix))
    }

    #[test]
    fn fss_matches_sliding_window_oracle() {
        let g = geom(48, 48);
        for case in 0..20u64 {
            let truth = random_rain(&g, 100 + case, 0.35, 6.0);
            let pred = random_rain(&g, 200 + case, 0.35, 6.0);
            for n in [1, 5, 27] {
                let got = fss(&pred, &truth, 1.02, n).unwrap();
                let want = fss_brute_force(&pred, &truth, 1.02, n);
                match (got, want) {
                    (Some(a), Some(b)) => {
                        assert!((a - b).abs() < 1e-12, "case {case} n {n}: {a} vs {b}")
                    }
                    (a, b) => assert_eq!(a, b),
                }
            }
        }
    }

    // Monotone growth with window size holds while windows stay mostly
    // interior. Once most windows hit the edge the truncated normalization
    // can dent the score slightly (48x48 at n=27 dips about 4e-4 below
    // n=15), so the ladder stops at a third of the domain edge.
    #[test]
    fn fss_grows_with_neighborhood_size() {
        for (ny, nx, ladder) in [
            (48usize, 48usize, vec![1usize, 3, 5, 9, 15]),
            (96, 96, vec![1, 3, 5, 9, 15, 27]),
        ] {
            let g = geom(ny, nx);
            for seed in 0..10u64 {
                let truth = random_rain(&g, 400 + seed, 0.3, 6.0);
                let mut pred = truth.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
                for v in pred.values_mut() {
                    if rng.random_range(0.0..1.0f32) < 0.2 {
                        *v = if *v > 1.0 { 0.0 } else { rng.random_range(1.5..4.0) };
                    }
                }
                let scores: Vec<f64> = ladder
                    .iter()
                    .map(|&n| fss(&pred, &truth, 1.0, n).unwrap().unwrap())
                    .collect();
                for w in scores.windows(2) {
                    assert!(w[1] >= w[0] - 1e-12, "{ny}x{nx} seed {seed}: {scores:?}");
                }
            }
        }
    }

    #[test]
    fn builtin_thresholds_match_published_table() {
        let t = ThresholdTable::builtin();
        assert_eq!(t.regions().count(), 9);
        assert_eq!(t.get("CONUS", "p50"), Some(1.02));
        assert_eq!(t.get("CONUS", "p90"), Some(5.26));
        assert_eq!(t.get("MDWST", "p95"), Some(10.27));
        assert_eq!(t.get("SW", "p50"), Some(0.72));
        assert_eq!(t.get("SE", "p95"), Some(5.90));
        assert_eq!(t.get("CONUS", "p60"), None);
        assert_eq!(t.get("MARS", "p50"), None);
    }

    #[test]
    fn threshold_csv_round_trips() {
        let t = ThresholdTable::builtin();
        let csv = t.to_csv();
        assert!(csv.starts_with("region,p50,p75,p90,p95\nCONUS,1.02,2.4,5.26,8.43\n"));
        assert_eq!(ThresholdTable::from_csv(&csv).unwrap(), t);
    }

    #[test]
    fn threshold_table_rejects_bad_rows() {
        assert!(ThresholdTable::from_rows(vec![("X".into(), [2.0, 1.0, 3.0, 4.0])]).is_err());
        assert!(ThresholdTable::from_rows(vec![("X".into(), [0.0, 1.0, 2.0, 3.0])]).is_err());
        assert!(ThresholdTable::from_rows(vec![
            ("X".into(), [1.0, 2.0, 3.0, 4.0]),
            ("X".into(), [1.0, 2.0, 3.0, 4.0]),
        ])
        .is_err());
        assert!(ThresholdTable::from_csv("region,p50\nX,1\n").is_err());
    }

    fn rain_pairs(count: usize, seed: u64, g: &GridGeometry) -> Vec<(GridField, GridField)> {
        (0..count)
            .map(|k| {
                let truth = random_rain(g, seed + 2 * k as u64, 0.6, 6.0);
                let mut pred = truth.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 2 * k as u64 + 1);
                for v in pred.values_mut() {
                    *v = (*v + rng.random_range(-0.5..0.5f32)).max(0.0);
                }
                (pred, truth)
            })
            .collect()
    }

    #[test]
    fn bootstrap_of_identical_units_has_zero_width() {
        let g = geom(6, 6);
        let one = rain_pairs(1, 7, &g).remove(0);
        let units = vec![one.clone(), one.clone(), one];
        let point = mae_nonzero_pooled(&units).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ci = bootstrap_ci(
            &units,
            |sel| mae_nonzero_pooled(sel.iter().copied()),
            &BootstrapConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(ci.lo, point);
        assert_eq!(ci.hi, point);
        assert_eq!(ci.skipped, 0);
    }

    #[test]
    fn bootstrap_interval_contains_point_estimate() {
        let g = geom(8, 8);
        let cfg = BootstrapConfig { n_boot: 200, level: 0.95 };
        for trial in 0..100u64 {
            let units = rain_pairs(6, 1000 + trial, &g);
            let point = mae_nonzero_pooled(&units).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let ci = bootstrap_ci(
                &units,
                |sel| mae_nonzero_pooled(sel.iter().copied()),
                &cfg,
                &mut rng,
            )
            .unwrap();
            assert!(
                ci.lo <= point && point <= ci.hi,
                "trial {trial}: {point} outside [{}, {}]",
                ci.lo,
                ci.hi
            );
        }
    }

    #[test]
    fn bootstrap_is_deterministic_per_seed() {
        let g = geom(8, 8);
        let units = rain_pairs(5, 42, &g);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            bootstrap_ci(
                &units,
                |sel| mae_nonzero_pooled(sel.iter().copied()),
                &BootstrapConfig::default(),
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn bootstrap_skips_undefined_replicates() {
        let g = geom(4, 4);
        let dry = (field(&g, &[1.0; 16]), field(&g, &[0.0; 16]));
        let mut units = rain_pairs(3, 5, &g);
        units.extend(vec![dry.clone(), dry.clone(), dry]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ci = bootstrap_ci(
            &units,
            |sel| mae_nonzero_pooled(sel.iter().copied()),
            &BootstrapConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(ci.skipped > 0, "some replicate should draw only dry tiles");
        assert!(ci.lo <= ci.hi);

        let all_dry = vec![
            (field(&g, &[1.0; 16]), field(&g, &[0.0; 16])),
            (field(&g, &[2.0; 16]), field(&g, &[0.0; 16])),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(bootstrap_ci(
            &all_dry,
            |sel| mae_nonzero_pooled(sel.iter().copied()),
            &BootstrapConfig::default(),
            &mut rng,
        )
        .is_err());
    }

    #[test]
    fn bootstrap_width_shrinks_like_root_n() {
        let g = geom(8, 8);
        let width = |count: usize| {
            let units = rain_pairs(count, 77, &g);
            let mut rng = ChaCha8Rng::seed_from_u64(55);
            let ci = bootstrap_ci(
                &units,
                |sel| mae_nonzero_pooled(sel.iter().copied()),
                &BootstrapConfig::default(),
                &mut rng,
            )
            .unwrap();
            ci.hi - ci.lo
        };
        let ratio = width(25) / width(100);
        assert!(
            (1.4..=2.6).contains(&ratio),
            "width ratio {ratio} strays from the expected 2x"
        );
    }

    #[test]
    fn report_csv_layout_and_invariants() {
        let reports = vec![
            MetricReport {
                metric: "mae_nonzero".into(),
                value: 1.25,
                ci_lo: Some(1.1),
                ci_hi: Some(1.4),
                month: Some(6),
                region: Some("CONUS".into()),
                lead_hours: Some(3),
                threshold_mm: None,
                n: 512,
            },
            MetricReport {
                metric: "pod".into(),
                value: 0.8,
                ci_lo: None,
                ci_hi: None,
                month: None,
                region: Some("SE".into()),
                lead_hours: Some(1),
                threshold_mm: Some(0.96),
                n: 1024,
            },
        ];
        let csv = reports_to_csv(&reports).unwrap();
        assert_eq!(
            csv,
            "metric,value,ci_lo,ci_hi,month,region,lead_hours,threshold_mm,n\n\
             mae_nonzero,1.25,1.1,1.4,6,CONUS,3,,512\n\
             pod,0.8,,,,SE,1,0.96,1024\n"
        );

        let mut bad = reports[0].clone();
        bad.ci_hi = Some(1.2);
        assert!(reports_to_csv(&[bad]).is_err());
        let json = serde_json::to_string(&reports[1]).unwrap();
        assert!(json.contains("\"metric\":\"pod\""));
    }
}
