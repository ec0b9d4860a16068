//! Gridded field data model.
//!
//! A field is a rectangular raster of `f32` samples on a regular lat/lon
//! grid with per-axis spacing given in kilometres. Row index increases with
//! latitude, column index with longitude. Positions are treated as locally
//! Cartesian through a fixed 111 km-per-degree conversion, which is accurate
//! enough at the domain scales handled here and keeps every geometric
//! operation (regridding, tile extraction, distance tests) in one frame.
//!
//! Missing samples are quiet NaNs. Construction canonicalises every NaN to
//! the standard quiet pattern so that serialised bytes are reproducible.

mod format;
mod mosaic;
mod normalize;
mod regrid;
mod tile;

pub use format::{read_grid, write_grid, GRID_FORMAT_VERSION};
pub use mosaic::mosaic;
pub use normalize::{compute_stats, inverse_zscore, zscore, NormSet, NormStats};
pub use regrid::bilinear_regrid;
pub use tile::{extract_tile, tile_layout, TileSpec};

use crate::error::{Error, Result};
use chrono::{DateTime, TimeZone, Timelike, Utc};

/// Kilometres per degree of latitude (and of longitude, in the flat-earth
/// approximation used throughout).
pub const KM_PER_DEGREE: f64 = 111.0;

/// Variable kind carried by a field. Tags gate unit defaults and the
/// non-negativity check applied to rainfall-like data on ingest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarTag {
    /// Rain rate, mm/h, non-negative.
    Rain,
    /// Signed rain-rate difference, mm/h.
    Residual,
    /// Standardised (z-scored) values, dimensionless.
    Zscored,
    /// Local rainfall return-level threshold, mm/h, non-negative.
    Ari,
    /// Integer region codes.
    Region,
    /// Conditioning plane (coordinates, time encodings), dimensionless.
    Aux,
    /// Anything else; preserved verbatim.
    Other(String),
}

impl VarTag {
    pub fn as_str(&self) -> &str {
        match self {
            VarTag::Rain => "rain",
            VarTag::Residual => "residual",
            VarTag::Zscored => "zscored",
            VarTag::Ari => "ari",
            VarTag::Region => "region",
            VarTag::Aux => "aux",
            VarTag::Other(s) => s,
        }
    }

    pub fn from_str(s: &str) -> VarTag {
        match s {
            "rain" => VarTag::Rain,
            "residual" => VarTag::Residual,
            "zscored" => VarTag::Zscored,
            "ari" => VarTag::Ari,
            "region" => VarTag::Region,
            "aux" => VarTag::Aux,
            other => VarTag::Other(other.to_string()),
        }
    }

    pub fn default_units(&self) -> &'static str {
        match self {
            VarTag::Rain | VarTag::Residual | VarTag::Ari => "mm/h",
            VarTag::Region => "id",
            _ => "1",
        }
    }

    /// Rainfall-like variables must be non-negative wherever valid.
    pub fn non_negative(&self) -> bool {
        matches!(self, VarTag::Rain | VarTag::Ari)
    }
}

/// Placement and shape of a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub ny: usize,
    pub nx: usize,
    /// Latitude of the centre of row 0, degrees.
    pub lat0: f64,
    /// Longitude of the centre of column 0, degrees.
    pub lon0: f64,
    /// Row spacing, km. Rows advance northward.
    pub dy_km: f64,
    /// Column spacing, km. Columns advance eastward.
    pub dx_km: f64,
}

impl GridGeometry {
    pub fn new(ny: usize, nx: usize, lat0: f64, lon0: f64, dy_km: f64, dx_km: f64) -> Result<Self> {
        if ny == 0 || nx == 0 {
            return Err(Error::Shape(format!("empty grid {ny}x{nx}")));
        }
        if !(dy_km > 0.0) || !(dx_km > 0.0) || !dy_km.is_finite() || !dx_km.is_finite() {
            return Err(Error::Shape(format!("invalid spacing dy={dy_km} dx={dx_km}")));
        }
        if !lat0.is_finite() || !lon0.is_finite() {
            return Err(Error::Shape(format!("invalid origin lat0={lat0} lon0={lon0}")));
        }
        Ok(GridGeometry { ny, nx, lat0, lon0, dy_km, dx_km })
    }

    pub fn len(&self) -> usize {
        self.ny * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Northward position of row `i` in the shared km frame.
    pub fn y_km(&self, i: usize) -> f64 {
        self.lat0 * KM_PER_DEGREE + i as f64 * self.dy_km
    }

    /// Eastward position of column `j` in the shared km frame.
    pub fn x_km(&self, j: usize) -> f64 {
        self.lon0 * KM_PER_DEGREE + j as f64 * self.dx_km
    }

    pub fn center_latlon(&self, i: usize, j: usize) -> (f64, f64) {
        (self.y_km(i) / KM_PER_DEGREE, self.x_km(j) / KM_PER_DEGREE)
    }
}

/// Require two fields to live on the same grid.
pub fn check_same_geometry(a: &GridGeometry, b: &GridGeometry) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "grids differ: {}x{} at ({:.4},{:.4}) vs {}x{} at ({:.4},{:.4})",
            a.ny, a.nx, a.lat0, a.lon0, b.ny, b.nx, b.lat0, b.lon0
        )))
    }
}

/// One raster of samples with geometry, variable tag, units and a valid
/// time at whole-hour resolution.
#[derive(Debug, Clone)]
pub struct GridField {
    pub geom: GridGeometry,
    pub var: VarTag,
    pub units: String,
    pub valid_time: DateTime<Utc>,
    values: Vec<f32>,
}

/// Equality treats missing samples as equal to each other: values compare
/// by bit pattern.
impl PartialEq for GridField {
    fn eq(&self, other: &Self) -> bool {
        self.geom == other.geom
            && self.var == other.var
            && self.units == other.units
            && self.valid_time == other.valid_time
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl GridField {
    pub fn new(
        geom: GridGeometry,
        var: VarTag,
        valid_time: DateTime<Utc>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(Error::Shape(format!(
                "value buffer holds {} samples, grid needs {}",
                values.len(),
                geom.len()
            )));
        }
        let units = var.default_units().to_string();
        let mut f = GridField { geom, var, units, valid_time: truncate_to_hour(valid_time), values };
        f.canonicalize_nans();
        Ok(f)
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn filled(geom: GridGeometry, var: VarTag, valid_time: DateTime<Utc>, value: f32) -> Self {
        let n = geom.len();
        GridField::new(geom, var, valid_time, vec![value; n]).expect("length matches by construction")
    }

    fn canonicalize_nans(&mut self) {
        for v in &mut self.values {
            if v.is_nan() {
                *v = f32::NAN;
            }
        }
    }

    pub fn ny(&self) -> usize {
        self.geom.ny
    }

    pub fn nx(&self) -> usize {
        self.geom.nx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.geom.nx + j
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.geom.nx + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        let k = self.idx(i, j);
        self.values[k] = if v.is_nan() { f32::NAN } else { v };
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_nan()
    }

    /// Iterate over valid (non-missing) samples as `(row, col, value)`.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        let nx = self.geom.nx;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .map(move |(k, v)| (k / nx, k % nx, *v))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    /// Copy into an `f64` matrix, missing samples staying NaN.
    pub fn to_array(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.geom.ny, self.geom.nx), |(i, j)| {
            self.get(i, j) as f64
        })
    }

    pub fn from_array(
        geom: GridGeometry,
        var: VarTag,
        valid_time: DateTime<Utc>,
        arr: &ndarray::Array2<f64>,
    ) -> Result<Self> {
        if arr.nrows() != geom.ny || arr.ncols() != geom.nx {
            return Err(Error::Shape(format!(
                "array is {}x{}, grid is {}x{}",
                arr.nrows(),
                arr.ncols(),
                geom.ny,
                geom.nx
            )));
        }
        let values = arr.iter().map(|&v| v as f32).collect();
        GridField::new(geom, var, valid_time, values)
    }

    /// Reject rainfall-like fields containing negative valid samples.
    /// Applied on ingest; in-memory producers clamp at the source instead.
    pub fn check_value_domain(&self) -> Result<()> {
        if self.var.non_negative() {
            if let Some(v) = self.values.iter().find(|v| !v.is_nan() && **v < 0.0) {
                return Err(Error::Format(format!(
                    "negative {} value {v} in non-negative variable",
                    self.var.as_str()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn truncate_to_hour(t: DateTime<Utc>) -> DateTime<Utc> {
    t.with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("in-range time components")
}

/// Convenience constructor for whole-hour UTC timestamps.
pub fn hour_utc(year: i32, month: u32, day: u32, hour: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, month, day, hour, 0, 0)
        .single()
        .expect("valid calendar time")
}

/// Serialise a valid time at hour resolution.
pub fn format_valid_time(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:00:00Z").to_string()
}

/// Parse a valid time, requiring hour alignment.
pub fn parse_valid_time(s: &str) -> Result<DateTime<Utc>> {
    let t = DateTime::parse_from_rfc3339(s)
        .map_err(|e| Error::Format(format!("valid_time {s:?}: {e}")))?
        .with_timezone(&Utc);
    if t.minute() != 0 || t.second() != 0 || t.nanosecond() != 0 {
        return Err(Error::Format(format!("valid_time {s:?} is not hour-aligned")));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(ny: usize, nx: usize) -> GridGeometry {
        GridGeometry::new(ny, nx, 38.0, -98.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn construction_rejects_wrong_length() {
        let g = geom(4, 5);
        assert!(GridField::new(g, VarTag::Rain, hour_utc(2024, 6, 1, 0), vec![0.0; 19]).is_err());
    }

    #[test]
    fn nans_are_canonical_after_construction() {
        let g = geom(2, 2);
        let weird = f32::from_bits(0x7FC0_1234);
        let f = GridField::new(g, VarTag::Rain, hour_utc(2024, 6, 1, 0), vec![0.0, weird, 1.0, 2.0])
            .unwrap();
        assert_eq!(f.values()[1].to_bits(), f32::NAN.to_bits());
        assert!(f.is_missing(0, 1));
    }

    #[test]
    fn km_frame_is_consistent_with_latlon() {
        let g = geom(3, 3);
        let (lat, lon) = g.center_latlon(2, 1);
        assert!((lat - (38.0 + 2.0 / KM_PER_DEGREE)).abs() < 1e-12);
        assert!((lon - (-98.0 + 1.0 / KM_PER_DEGREE)).abs() < 1e-12);
    }

    #[test]
    fn valid_time_round_trips_at_hour_precision() {
        let t = hour_utc(2024, 3, 9, 23);
        let s = format_valid_time(&t);
        assert_eq!(s, "2024-03-09T23:00:00Z");
        assert_eq!(parse_valid_time(&s).unwrap(), t);
        assert!(parse_valid_time("2024-03-09T23:30:00Z").is_err());
    }

    #[test]
    fn domain_check_flags_negative_rain() {
        let g = geom(2, 2);
        let f = GridField::new(g, VarTag::Rain, hour_utc(2024, 6, 1, 0), vec![0.0, -0.5, 1.0, 2.0])
            .unwrap();
        assert!(f.check_value_domain().is_err());
        let g2 = geom(2, 2);
        let r =
            GridField::new(g2, VarTag::Residual, hour_utc(2024, 6, 1, 0), vec![0.0, -0.5, 1.0, 2.0])
                .unwrap();
        assert!(r.check_value_domain().is_ok());
    }
}
