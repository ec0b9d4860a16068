//! On-disk raster format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! bytes 0..4    magic "GRDF"
//! bytes 4..8    u32 format version (currently 1)
//! bytes 8..12   u32 header length H
//! bytes 12..12+H JSON header
//! then          ny*nx IEEE-754 binary32 samples, row-major
//! ```
//!
//! The header carries grid shape, placement, variable name, units and the
//! valid time at hour resolution. Missing samples are quiet NaNs in the
//! payload. Header serialisation is field-ordered, so writing the result of
//! a read reproduces the file byte for byte.

use crate::error::{io_err, Error, Result};
use crate::grid::{format_valid_time, parse_valid_time, GridField, GridGeometry, VarTag};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const GRID_FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"GRDF";

#[derive(Serialize, Deserialize)]
struct Header {
    ny: usize,
    nx: usize,
    lat0: f64,
    lon0: f64,
    dy_km: f64,
    dx_km: f64,
    variable: String,
    units: String,
    valid_time: String,
}

/// Serialise a field to the raster format in memory.
pub fn encode_grid(field: &GridField) -> Vec<u8> {
    let header = Header {
        ny: field.geom.ny,
        nx: field.geom.nx,
        lat0: field.geom.lat0,
        lon0: field.geom.lon0,
        dy_km: field.geom.dy_km,
        dx_km: field.geom.dx_km,
        variable: field.var.as_str().to_string(),
        units: field.units.clone(),
        valid_time: format_valid_time(&field.valid_time),
    };
    let hjson = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(12 + hjson.len() + 4 * field.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&GRID_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a field from raster-format bytes.
pub fn decode_grid(bytes: &[u8]) -> Result<GridField> {
    if bytes.len() < 12 {
        return Err(Error::Format("file shorter than fixed preamble".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, not a grid file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != GRID_FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12usize.checked_add(hlen).ok_or_else(|| Error::Format("header length overflows".into()))?;
    if bytes.len() < hend {
        return Err(Error::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..hend])
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let geom = GridGeometry::new(header.ny, header.nx, header.lat0, header.lon0, header.dy_km, header.dx_km)?;
    let n = geom.len();
    let expected = hend + 4 * n;
    if bytes.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: need {n} samples, found {}",
            (bytes.len() - hend) / 4
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - expected)));
    }
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let off = hend + 4 * k;
        values.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    let valid_time = parse_valid_time(&header.valid_time)?;
    let field = GridField::new(geom, VarTag::from_str(&header.variable), valid_time, values)?
        .with_units(header.units);
    field.check_value_domain()?;
    Ok(field)
}

pub fn write_grid(field: &GridField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_grid(field)).map_err(|e| io_err(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_grid(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::hour_utc;

    fn sample_field() -> GridField {
        let geom = GridGeometry::new(3, 4, 39.5, -104.25, 1.0, 1.0).unwrap();
        let mut vals: Vec<f32> = (0..12).map(|k| k as f32 * 0.25).collect();
        vals[5] = f32::NAN;
        GridField::new(geom, VarTag::Rain, hour_utc(2024, 6, 1, 12), vals).unwrap()
    }

    #[test]
    fn encode_decode_round_trip_preserves_everything() {
        let f = sample_field();
        let bytes = encode_grid(&f);
        let g = decode_grid(&bytes).unwrap();
        assert_eq!(f.geom, g.geom);
        assert_eq!(f.var, g.var);
        assert_eq!(f.units, g.units);
        assert_eq!(f.valid_time, g.valid_time);
        assert_eq!(f.values().len(), g.values().len());
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn geometry_with_long_decimal_origin_round_trips_bitwise() {
        // Origins produced by tile arithmetic need all 17 significant
        // digits; default JSON float parsing is only best-effort, so the
        // parser must run with exact round-tripping enabled.
        let lat0 = 35.0 + 14.0 / 111.0;
        let lon0 = -100.0 + 28.0 / 111.0;
        let geom = GridGeometry::new(2, 2, lat0, lon0, 1.0, 1.0).unwrap();
        let f = GridField::new(geom, VarTag::Rain, hour_utc(2024, 1, 1, 0), vec![0.0; 4]).unwrap();
        let g = decode_grid(&encode_grid(&f)).unwrap();
        assert_eq!(g.geom.lat0.to_bits(), f.geom.lat0.to_bits());
        assert_eq!(g.geom.lon0.to_bits(), f.geom.lon0.to_bits());
    }

    #[test]
    fn re_encoding_a_decoded_file_is_byte_identical() {
        let bytes = encode_grid(&sample_field());
        let again = encode_grid(&decode_grid(&bytes).unwrap());
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode_grid(&sample_field());
        bytes[0] = b'X';
        assert!(matches!(decode_grid(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_grid(&sample_field());
        bytes[4] = 9;
        assert!(matches!(decode_grid(&bytes), Err(Error::Version(9))));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = encode_grid(&sample_field());
        assert!(decode_grid(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_grid(&long).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.grd");
        let f = sample_field();
        write_grid(&f, &path).unwrap();
        let g = read_grid(&path).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn read_rejects_negative_rain_payload() {
        let geom = GridGeometry::new(2, 2, 39.5, -104.25, 1.0, 1.0).unwrap();
        let f = GridField::new(geom, VarTag::Residual, hour_utc(2024, 6, 1, 12), vec![0.0, -1.0, 0.0, 0.0])
            .unwrap();
        let mut bytes = encode_grid(&f);
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let hjson = String::from_utf8(bytes[12..12 + hlen].to_vec()).unwrap();
        let hacked = hjson.replace("\"residual\"", "\"rain\"");
        assert_eq!(hjson.len(), hacked.len() + 4);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(hacked.len() as u32).to_le_bytes());
        out.extend_from_slice(hacked.as_bytes());
        out.extend_from_slice(&bytes[12 + hlen..]);
        bytes = out;
        assert!(decode_grid(&bytes).is_err());
    }
}
