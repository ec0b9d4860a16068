//! Lead-time-offset uncertainty bounds and their evaluation.
//!
//! One predicted residual is added to three forecasts of adjacent leads,
//! giving early, on-time and delayed rainfall scenarios. Their pixel-wise
//! minimum and maximum bracket the on-time reconstruction, and coverage is
//! scored with a spatial tolerance: a truth pixel counts as covered when
//! any nearby pixel's interval contains its value.

use crate::error::{Error, Result};
use crate::grid::{check_same_geometry, GridField};
use crate::residual::{reconstruct, require_rain};
use crate::rollout::HrrrArchive;
use crate::stats::percentiles;
use chrono::Duration;

/// Spatial tolerance used when none is configured, in km.
pub const DEFAULT_TOLERANCE_KM: f64 = 10.0;

/// Climatology percentiles behind the default intensity bins.
pub const DEFAULT_BIN_FRACS: [f64; 4] = [0.5, 0.75, 0.9, 0.95];

/// Scenario envelope at one valid time: `lower <= middle <= upper` at every
/// pixel where all three are present, all non-negative rain.
#[derive(Debug, Clone, PartialEq)]
pub struct UqBounds {
    pub lower: GridField,
    pub middle: GridField,
    pub upper: GridField,
}

impl UqBounds {
    pub fn new(lower: GridField, middle: GridField, upper: GridField) -> Result<Self> {
        for (f, role) in [(&lower, "lower"), (&middle, "middle"), (&upper, "upper")] {
            require_rain(f, role)?;
        }
        check_same_geometry(&lower.geom, &middle.geom)?;
        check_same_geometry(&lower.geom, &upper.geom)?;
        if lower.valid_time != middle.valid_time || lower.valid_time != upper.valid_time {
            return Err(Error::Time("bounds members disagree on valid time".into()));
        }
        for ((l, m), u) in lower.values().iter().zip(middle.values()).zip(upper.values()) {
            if l.is_nan() || m.is_nan() || u.is_nan() {
                continue;
            }
            if !(l <= m && m <= u) {
                return Err(Error::Numeric(format!(
                    "bounds out of order: lower {l}, middle {m}, upper {u}"
                )));
            }
        }
        Ok(UqBounds { lower, middle, upper })
    }
}

/// Build the three-member envelope from forecasts at leads `L-1, L, L+1`
/// and one residual valid with the on-time member.
///
/// The early member may share the on-time valid hour: that is the
/// degenerate fallback used when no earlier lead exists.
pub fn make_scenarios(
    hrrr_prev: &GridField,
    hrrr_on: &GridField,
    hrrr_next: &GridField,
    residual: &GridField,
) -> Result<UqBounds> {
    if hrrr_on.valid_time != residual.valid_time {
        return Err(Error::Time(format!(
            "residual valid at {} but on-time forecast at {}",
            residual.valid_time, hrrr_on.valid_time
        )));
    }
    let hour = Duration::hours(1);
    if hrrr_prev.valid_time != hrrr_on.valid_time - hour
        && hrrr_prev.valid_time != hrrr_on.valid_time
    {
        return Err(Error::Time("early member must sit one hour before the on-time lead".into()));
    }
    if hrrr_next.valid_time != hrrr_on.valid_time + hour {
        return Err(Error::Time("delayed member must sit one hour after the on-time lead".into()));
    }

    let early = reconstruct(hrrr_prev, residual)?;
    let middle = reconstruct(hrrr_on, residual)?;
    let late = reconstruct(hrrr_next, residual)?;

    let mut lower = middle.clone();
    let mut upper = middle.clone();
    for i in 0..lower.values().len() {
        let (e, m, l) = (early.values()[i], middle.values()[i], late.values()[i]);
        if e.is_nan() || m.is_nan() || l.is_nan() {
            lower.values_mut()[i] = f32::NAN;
            upper.values_mut()[i] = f32::NAN;
        } else {
            lower.values_mut()[i] = e.min(m).min(l);
            upper.values_mut()[i] = e.max(m).max(l);
        }
    }
    UqBounds::new(lower, middle, upper)
}

/// `make_scenarios` fed from a forecast cycle: members are the archive's
/// leads `L-1, L, L+1`. A missing analysis field (lead 0, wanted when
/// `L = 1`) degenerates the early member to the on-time one; any other
/// missing lead is an error.
pub fn scenarios_from_archive(
    hrrr: &HrrrArchive,
    lead: u8,
    residual: &GridField,
) -> Result<UqBounds> {
    if lead == 0 {
        return Err(Error::Config("scenarios need a lead of at least 1".into()));
    }
    let on = hrrr.get(lead)?;
    let next = hrrr.get(lead + 1)?;
    let prev = if lead == 1 && !hrrr.has(0) { on } else { hrrr.get(lead - 1)? };
    make_scenarios(prev, on, next, residual)
}

/// Intensity bins over positive rain: `(0, e1], (e1, e2], .., (e_m, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityBins {
    edges: Vec<f64>,
    labels: Vec<String>,
}

impl IntensityBins {
    /// Explicit interior edges in mm, one label per resulting bin.
    pub fn from_edges(edges: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Config("intensity bins need at least one edge".into()));
        }
        if labels.len() != edges.len() + 1 {
            return Err(Error::Config(format!(
                "{} edges make {} bins, got {} labels",
                edges.len(),
                edges.len() + 1,
                labels.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite() || *e <= 0.0) {
            return Err(Error::Config("bin edges must be positive and finite".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("bin edges must be strictly increasing".into()));
        }
        Ok(IntensityBins { edges, labels })
    }

    /// Percentile bins of the positive part of a truth climatology:
    /// `(0-50], (50-75], (75-90], (90-95], >95`.
    pub fn from_climatology(fields: &[&GridField]) -> Result<Self> {
        let mut sample: Vec<f64> = fields
            .iter()
            .flat_map(|f| f.iter_valid().map(|(_, _, v)| v as f64))
            .filter(|v| *v > 0.0)
            .collect();
        if sample.is_empty() {
            return Err(Error::MissingData("climatology has no positive rain samples".into()));
        }
        let edges = percentiles(&mut sample, &DEFAULT_BIN_FRACS)?;
        let labels =
            ["0-50", "50-75", "75-90", "90-95", ">95"].map(str::to_string).to_vec();
        IntensityBins::from_edges(edges, labels)
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// `(lo, hi)` of bin `i` in mm; the last bin is open above.
    pub fn range(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { 0.0 } else { self.edges[i - 1] };
        let hi = self.edges.get(i).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// Bin of a positive rain value.
    pub fn index_of(&self, v: f64) -> usize {
        self.edges.iter().position(|e| v <= *e).unwrap_or(self.edges.len())
    }
}

/// How a miss between truth and interval turns into an error magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalErrorMode {
    /// `|middle - truth|` at every pixel.
    MiddleAbs,
    /// Zero inside the interval, distance to the nearest bound outside.
    NearestBound,
}

/// One occupied intensity bin of a coverage evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BinReport {
    pub label: String,
    pub lo_mm: f64,
    pub hi_mm: f64,
    pub coverage: f64,
    pub avg_interval_error_mm: f64,
    pub n_pixels: u64,
}

/// Coverage and interval error per occupied bin at one tolerance radius.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub tolerance_km: f64,
    pub bins: Vec<BinReport>,
}

impl CoverageReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("bin_label,bin_lo_mm,bin_hi_mm,coverage,avg_interval_error_mm,n_pixels\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b.label, b.lo_mm, b.hi_mm, b.coverage, b.avg_interval_error_mm, b.n_pixels
            ));
        }
        out
    }
}

/// Pixels entering the evaluation: positive, non-missing truth with a
/// non-missing middle member. Returns `(index, bin, truth value)`.
fn eval_pixels(
    bounds: &UqBounds,
    truth: &GridField,
    bins: &IntensityBins,
) -> Vec<(usize, usize, f64)> {
    truth
        .values()
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| {
            if t.is_nan() || t <= 0.0 || bounds.middle.values()[i].is_nan() {
                None
            } else {
                Some((i, bins.index_of(t as f64), t as f64))
            }
        })
        .collect()
}

/// Score the envelope against truth with a spatial tolerance.
///
/// A truth pixel is covered when some pixel within `tolerance_km`
/// (pixel-center Euclidean distance on the km grid) has an interval
/// containing the truth value. Zero-rain truth pixels are excluded, empty
/// bins are omitted, and the reported interval error is `|middle - truth|`.
pub fn coverage_rate(
    bounds: &UqBounds,
    truth: &GridField,
    tolerance_km: f64,
    bins: &IntensityBins,
) -> Result<CoverageReport> {
    require_rain(truth, "truth")?;
    check_same_geometry(&bounds.lower.geom, &truth.geom)?;
    if !tolerance_km.is_finite() || tolerance_km < 0.0 {
        return Err(Error::Config(format!("tolerance must be non-negative, got {tolerance_km}")));
    }

    let g = &truth.geom;
    let (dy, dx) = (g.dy_km, g.dx_km);
    let tol2 = tolerance_km * tolerance_km;
    let ri = (tolerance_km / dy).floor() as isize;
    let rj = (tolerance_km / dx).floor() as isize;
    let mut offsets = Vec::new();
    for di in -ri..=ri {
        for dj in -rj..=rj {
            if (di as f64 * dy).powi(2) + (dj as f64 * dx).powi(2) <= tol2 {
                offsets.push((di, dj));
            }
        }
    }

    let mut covered = vec![0u64; bins.count()];
    let mut total = vec![0u64; bins.count()];
    let mut err_sum = vec![0.0f64; bins.count()];
    for (idx, bin, t) in eval_pixels(bounds, truth, bins) {
        let (pi, pj) = (idx / g.nx, idx % g.nx);
        total[bin] += 1;
        err_sum[bin] += (bounds.middle.values()[idx] as f64 - t).abs();
        let hit = offsets.iter().any(|&(di, dj)| {
            let (qi, qj) = (pi as isize + di, pj as isize + dj);
            if qi < 0 || qj < 0 || qi >= g.ny as isize || qj >= g.nx as isize {
                return false;
            }
            let q = qi as usize * g.nx + qj as usize;
            let (lo, hi) = (bounds.lower.values()[q], bounds.upper.values()[q]);
            !lo.is_nan() && !hi.is_nan() && lo as f64 <= t && t <= hi as f64
        });
        if hit {
            covered[bin] += 1;
        }
    }

    let mut out = Vec::new();
    for b in 0..bins.count() {
        if total[b] == 0 {
            continue;
        }
        let (lo_mm, hi_mm) = bins.range(b);
        out.push(BinReport {
            label: bins.label(b).to_string(),
            lo_mm,
            hi_mm,
            coverage: covered[b] as f64 / total[b] as f64,
            avg_interval_error_mm: err_sum[b] / total[b] as f64,
            n_pixels: total[b],
        });
    }
    Ok(CoverageReport { tolerance_km, bins: out })
}

/// Per-bin interval error under a chosen miss interpretation, as
/// `(label, error, pixel count)` for occupied bins.
pub fn interval_error(
    bounds: &UqBounds,
    truth: &GridField,
    bins: &IntensityBins,
    mode: IntervalErrorMode,
) -> Result<Vec<(String, f64, u64)>> {
    require_rain(truth, "truth")?;
    check_same_geometry(&bounds.lower.geom, &truth.geom)?;
    let mut sums = vec![0.0f64; bins.count()];
    let mut total = vec![0u64; bins.count()];
    for (idx, bin, t) in eval_pixels(bounds, truth, bins) {
        let err = match mode {
            IntervalErrorMode::MiddleAbs => (bounds.middle.values()[idx] as f64 - t).abs(),
            IntervalErrorMode::NearestBound => {
                let lo = bounds.lower.values()[idx] as f64;
                let hi = bounds.upper.values()[idx] as f64;
                if t < lo {
                    lo - t
                } else if t > hi {
                    t - hi
                } else {
                    0.0
                }
            }
        };
        sums[bin] += err;
        total[bin] += 1;
    }
    Ok((0..bins.count())
        .filter(|&b| total[b] > 0)
        .map(|b| (bins.label(b).to_string(), sums[b] / total[b] as f64, total[b]))
        .collect())
}
