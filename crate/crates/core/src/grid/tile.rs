//! Square sub-grid extraction and deterministic tiling of a domain.

use crate::error::{Error, Result};
use crate::grid::{GridField, GridGeometry, KM_PER_DEGREE};
use serde::{Deserialize, Serialize};

/// Placement of a square tile inside a parent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub row0: usize,
    pub col0: usize,
    pub size: usize,
}

impl TileSpec {
    pub fn new(row0: usize, col0: usize, size: usize) -> Self {
        TileSpec { row0, col0, size }
    }

    pub fn fits(&self, geom: &GridGeometry) -> bool {
        self.size > 0 && self.row0 + self.size <= geom.ny && self.col0 + self.size <= geom.nx
    }

    /// Geometry of this tile cut from `parent`. Extraction and mosaic both
    /// derive tile placement through this one expression, so their origins
    /// agree bit for bit.
    pub fn sub_geometry(&self, parent: &GridGeometry) -> Result<GridGeometry> {
        if !self.fits(parent) {
            return Err(Error::Shape(format!(
                "tile {}+{} x {}+{} does not fit in {}x{}",
                self.row0, self.size, self.col0, self.size, parent.ny, parent.nx
            )));
        }
        GridGeometry::new(
            self.size,
            self.size,
            parent.lat0 + self.row0 as f64 * parent.dy_km / KM_PER_DEGREE,
            parent.lon0 + self.col0 as f64 * parent.dx_km / KM_PER_DEGREE,
            parent.dy_km,
            parent.dx_km,
        )
    }

    pub fn center_km(&self, parent: &GridGeometry) -> (f64, f64) {
        let c = (self.size as f64 - 1.0) / 2.0;
        (
            parent.lat0 * KM_PER_DEGREE + (self.row0 as f64 + c) * parent.dy_km,
            parent.lon0 * KM_PER_DEGREE + (self.col0 as f64 + c) * parent.dx_km,
        )
    }
}

/// Copy a square window out of a field, shifting the geometry accordingly.
pub fn extract_tile(field: &GridField, spec: &TileSpec) -> Result<GridField> {
    let geom = spec.sub_geometry(&field.geom)?;
    let mut values = Vec::with_capacity(spec.size * spec.size);
    for i in 0..spec.size {
        let row = field.geom.nx * (spec.row0 + i) + spec.col0;
        values.extend_from_slice(&field.values()[row..row + spec.size]);
    }
    Ok(GridField::new(geom, field.var.clone(), field.valid_time, values)?
        .with_units(field.units.clone()))
}

/// Deterministic tiling that covers a `ny` by `nx` domain with square tiles
/// of side `size`, consecutive tiles overlapping by at least `overlap`
/// pixels along each axis. The trailing tile on each axis is pulled flush
/// with the domain edge, which can only increase overlap.
pub fn tile_layout(ny: usize, nx: usize, size: usize, overlap: usize) -> Result<Vec<TileSpec>> {
    if size == 0 || size > ny || size > nx {
        return Err(Error::Shape(format!("tile size {size} does not fit in {ny}x{nx}")));
    }
    if overlap >= size {
        return Err(Error::Config(format!("overlap {overlap} must be smaller than tile size {size}")));
    }
    let stride = size - overlap;
    let axis = |extent: usize| {
        let mut starts = Vec::new();
        let last = extent - size;
        let mut p = 0;
        loop {
            if p >= last {
                starts.push(last);
                break;
            }
            starts.push(p);
            p += stride;
        }
        starts
    };
    let rows = axis(ny);
    let cols = axis(nx);
    let mut tiles = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            tiles.push(TileSpec::new(r, c, size));
        }
    }
    Ok(tiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{hour_utc, VarTag};
    use proptest::prelude::*;

    #[test]
    fn extraction_matches_direct_indexing() {
        let geom = GridGeometry::new(7, 9, 38.0, -98.0, 1.0, 1.0).unwrap();
        let vals: Vec<f32> = (0..63).map(|k| k as f32).collect();
        let f = GridField::new(geom, VarTag::Residual, hour_utc(2024, 6, 1, 0), vals).unwrap();
        let spec = TileSpec::new(2, 3, 4);
        let t = extract_tile(&f, &spec).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(t.get(i, j), f.get(2 + i, 3 + j));
            }
        }
        assert_eq!(t.geom.lat0, 38.0 + 2.0 / 111.0);
        assert_eq!(t.geom.lon0, -98.0 + 3.0 / 111.0);
    }

    #[test]
    fn extraction_rejects_overhang() {
        let geom = GridGeometry::new(7, 9, 38.0, -98.0, 1.0, 1.0).unwrap();
        let f = GridField::filled(geom, VarTag::Rain, hour_utc(2024, 6, 1, 0), 0.0);
        assert!(extract_tile(&f, &TileSpec::new(4, 0, 4)).is_err());
        assert!(extract_tile(&f, &TileSpec::new(0, 6, 4)).is_err());
    }

    #[test]
    fn tile_center_is_midpoint_of_corners() {
        let geom = GridGeometry::new(64, 64, 38.0, -98.0, 1.0, 1.0).unwrap();
        let spec = TileSpec::new(8, 16, 4);
        let (cy, cx) = spec.center_km(&geom);
        assert!((cy - (geom.y_km(8) + geom.y_km(11)) / 2.0).abs() < 1e-9);
        assert!((cx - (geom.x_km(16) + geom.x_km(19)) / 2.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn layout_covers_domain_with_requested_overlap(
            ny in 8usize..120,
            nx in 8usize..120,
            size in 4usize..40,
            overlap in 0usize..12,
        ) {
            prop_assume!(size <= ny && size <= nx && overlap < size);
            let tiles = tile_layout(ny, nx, size, overlap).unwrap();
            let mut covered = vec![false; ny * nx];
            for t in &tiles {
                prop_assert!(t.row0 + size <= ny && t.col0 + size <= nx);
                for i in t.row0..t.row0 + size {
                    for j in t.col0..t.col0 + size {
                        covered[i * nx + j] = true;
                    }
                }
            }
            prop_assert!(covered.iter().all(|c| *c));
            let mut rows: Vec<usize> = tiles.iter().map(|t| t.row0).collect();
            rows.sort_unstable();
            rows.dedup();
            for w in rows.windows(2) {
                prop_assert!(size - (w[1] - w[0]) >= overlap);
            }
        }
    }
}
