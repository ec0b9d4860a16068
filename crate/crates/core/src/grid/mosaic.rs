//! Reassembly of tile predictions onto a parent grid.

use crate::error::{Error, Result};
use crate::grid::{GridField, GridGeometry, TileSpec};

/// Place tiles back onto `target` and average wherever they overlap.
///
/// Pixels covered by no tile (or only by missing tile samples) come back
/// missing. Tiles must carry the geometry that `extract_tile` would have
/// produced for their placement, and must agree on variable, units and
/// valid time. The contribution list is sorted internally, so the result
/// does not depend on the order tiles are supplied in.
pub fn mosaic(target: &GridGeometry, tiles: &[(TileSpec, &GridField)]) -> Result<GridField> {
    let (first_spec, first) = tiles
        .first()
        .ok_or_else(|| Error::MissingData("mosaic needs at least one tile".into()))?;
    let _ = first_spec;
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, fa) = &tiles[a];
        let (sb, fb) = &tiles[b];
        (sa.row0, sa.col0, sa.size)
            .cmp(&(sb.row0, sb.col0, sb.size))
            .then_with(|| {
                let ba = fa.values().iter().map(|v| v.to_bits());
                let bb = fb.values().iter().map(|v| v.to_bits());
                ba.cmp(bb)
            })
    });

    let mut sum = vec![0.0f64; target.len()];
    let mut count = vec![0u32; target.len()];
    for &k in &order {
        let (spec, field) = &tiles[k];
        let expected = spec.sub_geometry(target)?;
        crate::grid::check_same_geometry(&field.geom, &expected)?;
        if field.var != first.var || field.units != first.units {
            return Err(Error::Shape(format!(
                "tile variable {}/{} differs from {}/{}",
                field.var.as_str(),
                field.units,
                first.var.as_str(),
                first.units
            )));
        }
        if field.valid_time != first.valid_time {
            return Err(Error::Time("tiles carry different valid times".into()));
        }
        for i in 0..spec.size {
            for j in 0..spec.size {
                let v = field.get(i, j);
                if v.is_nan() {
                    continue;
                }
                let t = (spec.row0 + i) * target.nx + spec.col0 + j;
                sum[t] += v as f64;
                count[t] += 1;
            }
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(s, c)| if *c == 0 { f32::NAN } else { (s / *c as f64) as f32 })
        .collect();
    Ok(GridField::new(target.clone(), first.var.clone(), first.valid_time, values)?
        .with_units(first.units.clone()))
}
