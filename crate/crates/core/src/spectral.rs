//! Spatial-structure diagnostics: two-dimensional power spectra with radial
//! averaging, Welch cross-spectral coherence between forecast and truth, and
//! rain-intensity histograms.

use crate::error::{Error, Result};
use crate::grid::{check_same_geometry, tile_layout, GridField};
use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Taper applied to the full field before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralWindow {
    None,
    Hann,
}

/// Radially averaged power: bin-center wavenumbers in cycles/km, the mean
/// power of the 2D frequencies falling in each bin, and how many fell there.
/// Empty bins are dropped, so wavenumbers increase strictly.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpectrum {
    pub freq_cycles_per_km: Vec<f64>,
    pub mean_power: Vec<f64>,
    pub counts: Vec<u64>,
}

impl RadialSpectrum {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_cycles_per_km,mean_power,count\n");
        for ((f, p), c) in self.freq_cycles_per_km.iter().zip(&self.mean_power).zip(&self.counts) {
            out.push_str(&format!("{f},{p},{c}\n"));
        }
        out
    }

    /// Sum of power over all binned frequencies, for conservation checks.
    pub fn total_power(&self) -> f64 {
        self.mean_power.iter().zip(&self.counts).map(|(p, c)| p * *c as f64).sum()
    }
}

/// Coherence against truth per radial frequency bin, averaged over Welch
/// segments. Values lie in [0, 1] up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceCurve {
    pub freq_cycles_per_km: Vec<f64>,
    pub coherence: Vec<f64>,
    pub n_segments: usize,
}

impl CoherenceCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_cycles_per_km,coherence\n");
        for (f, c) in self.freq_cycles_per_km.iter().zip(&self.coherence) {
            out.push_str(&format!("{f},{c}\n"));
        }
        out
    }
}

/// Welch estimator settings: square segment edge in pixels (segments overlap
/// by half their size), whether each segment's mean is removed before the
/// periodic Hann taper, and whether to report conventional magnitude-squared
/// coherence instead of the plain magnitude ratio.
#[derive(Debug, Clone, Copy)]
pub struct WelchConfig {
    pub segment_px: usize,
    pub detrend_mean: bool,
    pub magnitude_squared: bool,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig { segment_px: 32, detrend_mean: true, magnitude_squared: false }
    }
}

/// Relative frequency of values per intensity bin. Bins are half-open
/// `[lo, hi)`; values outside every bin are excluded from the denominator,
/// so frequencies always sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityHistogram {
    pub edges: Vec<f64>,
    pub frequency: Vec<f64>,
    pub n_samples: u64,
}

impl IntensityHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,frequency\n");
        for (k, f) in self.frequency.iter().enumerate() {
            out.push_str(&format!("{},{},{f}\n", self.edges[k], self.edges[k + 1]));
        }
        out
    }
}

fn require_complete(field: &GridField) -> Result<()> {
    if field.values().iter().any(|v| v.is_nan()) {
        return Err(Error::MissingData(
            "spectral estimates need complete fields; fill missing pixels first".into(),
        ));
    }
    Ok(())
}

/// Periodic Hann taper, the spectral-estimation variant that never reaches
/// zero at index n-1.
fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// In-place unnormalized forward 2D transform, rows then columns.
fn fft2d(data: &mut Array2<Complex64>) {
    let (ny, nx) = data.dim();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(nx);
    for mut row in data.rows_mut() {
        row_fft.process(row.as_slice_mut().expect("rows of a standard-layout array are contiguous"));
    }
    let col_fft = planner.plan_fft_forward(ny);
    let mut scratch = vec![Complex64::default(); ny];
    for j in 0..nx {
        for i in 0..ny {
            scratch[i] = data[[i, j]];
        }
        col_fft.process(&mut scratch);
        for i in 0..ny {
            data[[i, j]] = scratch[i];
        }
    }
}

/// Signed frequency in cycles/km for transform index k of an n-point axis
/// with the given pixel spacing.
fn signed_freq(k: usize, n: usize, spacing_km: f64) -> f64 {
    let k = k as isize;
    let n = n as isize;
    let signed = if k <= n / 2 { k } else { k - n };
    signed as f64 / (n as f64 * spacing_km)
}

/// Frequencies land in rings of width equal to the finer of the two axis
/// fundamentals; ring index is the rounded ratio, so every frequency is
/// binned exactly once.
fn ring_step(ny: usize, nx: usize, dy_km: f64, dx_km: f64) -> f64 {
    (1.0 / (ny as f64 * dy_km)).min(1.0 / (nx as f64 * dx_km))
}

fn radial_bin_power(
    power: &Array2<f64>,
    ny: usize,
    nx: usize,
    dy_km: f64,
    dx_km: f64,
) -> RadialSpectrum {
    let step = ring_step(ny, nx, dy_km, dx_km);
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for i in 0..ny {
        let fy = signed_freq(i, ny, dy_km);
        for j in 0..nx {
            let fx = signed_freq(j, nx, dx_km);
            let idx = ((fy * fy + fx * fx).sqrt() / step).round() as usize;
            if idx >= sums.len() {
                sums.resize(idx + 1, 0.0);
                counts.resize(idx + 1, 0);
            }
            sums[idx] += power[[i, j]];
            counts[idx] += 1;
        }
    }
    let mut spectrum =
        RadialSpectrum { freq_cycles_per_km: Vec::new(), mean_power: Vec::new(), counts: Vec::new() };
    for (idx, (&s, &c)) in sums.iter().zip(&counts).enumerate() {
        if c > 0 {
            spectrum.freq_cycles_per_km.push(idx as f64 * step);
            spectrum.mean_power.push(s / c as f64);
            spectrum.counts.push(c);
        }
    }
    spectrum
}

/// Squared transform magnitude on the full field plus its radial average.
/// Under the unnormalized forward convention the unwindowed power satisfies
/// `sum(P) = N * sum(v^2)`.
pub fn power_spectrum_2d(
    field: &GridField,
    window: SpectralWindow,
) -> Result<(Array2<f64>, RadialSpectrum)> {
    require_complete(field)?;
    let (ny, nx) = (field.geom.ny, field.geom.nx);
    let (wy, wx) = match window {
        SpectralWindow::None => (vec![1.0; ny], vec![1.0; nx]),
        SpectralWindow::Hann => (hann(ny), hann(nx)),
    };
    let mut data = Array2::default((ny, nx));
    for i in 0..ny {
        for j in 0..nx {
            data[[i, j]] = Complex64::new(field.get(i, j) as f64 * wy[i] * wx[j], 0.0);
        }
    }
    fft2d(&mut data);
    let power = data.mapv(|c| c.norm_sqr());
    let radial = radial_bin_power(&power, ny, nx, field.geom.dy_km, field.geom.dx_km);
    Ok((power, radial))
}

/// Welch coherence between forecast and truth. Both fields are cut into
/// half-overlapping square segments, optionally mean-detrended, tapered with
/// a periodic Hann window and transformed; cross and auto spectra accumulate
/// per radial bin over all segments, and the curve is
/// `|S_xy| / sqrt(S_xx * S_yy)` (or its square under the flag).
pub fn spectral_coherence(
    pred: &GridField,
    truth: &GridField,
    cfg: &WelchConfig,
) -> Result<CoherenceCurve> {
    check_same_geometry(&pred.geom, &truth.geom)?;
    require_complete(pred)?;
    require_complete(truth)?;
    let (ny, nx) = (pred.geom.ny, pred.geom.nx);
    let s = cfg.segment_px;
    if s < 2 {
        return Err(Error::Config(format!("segment edge must be at least 2 px, got {s}")));
    }
    if s > ny || s > nx {
        return Err(Error::Config(format!(
            "segment of {s} px does not fit in the {ny}x{nx} domain"
        )));
    }
    let segments = tile_layout(ny, nx, s, s / 2)?;
    if segments.len() < 2 {
        return Err(Error::Config(format!(
            "coherence needs at least 2 segments, the domain yields {}",
            segments.len()
        )));
    }

    let w = hann(s);
    let step = ring_step(s, s, pred.geom.dy_km, pred.geom.dx_km);
    let mut cross: Vec<Complex64> = Vec::new();
    let mut auto_x: Vec<f64> = Vec::new();
    let mut auto_y: Vec<f64> = Vec::new();
    let mut seg_x = Array2::default((s, s));
    let mut seg_y = Array2::default((s, s));
    for tile in &segments {
        let mut mean_x = 0.0;
        let mut mean_y = 0.0;
        if cfg.detrend_mean {
            for i in 0..s {
                for j in 0..s {
                    mean_x += pred.get(tile.row0 + i, tile.col0 + j) as f64;
                    mean_y += truth.get(tile.row0 + i, tile.col0 + j) as f64;
                }
            }
            mean_x /= (s * s) as f64;
            mean_y /= (s * s) as f64;
        }
        for i in 0..s {
            for j in 0..s {
                let taper = w[i] * w[j];
                let x = pred.get(tile.row0 + i, tile.col0 + j) as f64 - mean_x;
                let y = truth.get(tile.row0 + i, tile.col0 + j) as f64 - mean_y;
                seg_x[[i, j]] = Complex64::new(x * taper, 0.0);
                seg_y[[i, j]] = Complex64::new(y * taper, 0.0);
            }
        }
        fft2d(&mut seg_x);
        fft2d(&mut seg_y);
        for i in 0..s {
            let fy = signed_freq(i, s, pred.geom.dy_km);
            for j in 0..s {
                let fx = signed_freq(j, s, pred.geom.dx_km);
                let idx = ((fy * fy + fx * fx).sqrt() / step).round() as usize;
                if idx >= cross.len() {
                    cross.resize(idx + 1, Complex64::default());
                    auto_x.resize(idx + 1, 0.0);
                    auto_y.resize(idx + 1, 0.0);
                }
                let (x, y) = (seg_x[[i, j]], seg_y[[i, j]]);
                cross[idx] += x * y.conj();
                auto_x[idx] += x.norm_sqr();
                auto_y[idx] += y.norm_sqr();
            }
        }
    }

    let mut curve = CoherenceCurve {
        freq_cycles_per_km: Vec::new(),
        coherence: Vec::new(),
        n_segments: segments.len(),
    };
    for idx in 0..cross.len() {
        let denom = auto_x[idx] * auto_y[idx];
        if denom <= 0.0 {
            continue;
        }
        let mag = cross[idx].norm() / denom.sqrt();
        curve.freq_cycles_per_km.push(idx as f64 * step);
        curve.coherence.push(if cfg.magnitude_squared { mag * mag } else { mag });
    }
    Ok(curve)
}

/// Histogram of non-missing pixel values over the given strictly increasing
/// bin edges. Values outside `[edges[0], edges[last])` are excluded; zero
/// pixels therefore drop out whenever the first edge is positive.
pub fn intensity_pdf(field: &GridField, edges: &[f64]) -> Result<IntensityHistogram> {
    if edges.len() < 2 {
        return Err(Error::Config(format!(
            "histogram needs at least 2 edges, got {}",
            edges.len()
        )));
    }
    for w in edges.windows(2) {
        if !(w[0] < w[1]) || !w[0].is_finite() || !w[1].is_finite() {
            return Err(Error::Config(format!(
                "histogram edges must increase strictly and stay finite, got {edges:?}"
            )));
        }
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    let mut total = 0u64;
    for v in field.values() {
        if v.is_nan() {
            continue;
        }
        let v = *v as f64;
        if v < edges[0] || v >= edges[bins] {
            continue;
        }
        let b = edges.partition_point(|e| *e <= v) - 1;
        counts[b] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::MissingData(
            "no pixel values fall inside the histogram range".into(),
        ));
    }
    Ok(IntensityHistogram {
        edges: edges.to_vec(),
        frequency: counts.iter().map(|c| *c as f64 / total as f64).collect(),
        n_samples: total,
    })
}
