//! Bilinear resampling between grids that share the km frame.

use crate::error::{Error, Result};
use crate::grid::{GridField, GridGeometry};

const SNAP: f64 = 1e-9;

/// Resample `src` onto `target` with bilinear interpolation.
///
/// Every target pixel centre must fall within the source pixel-centre hull.
/// A target sample averages the source corners that carry nonzero weight;
/// missing corners are dropped and the remaining weights renormalised. The
/// sample is missing only when every contributing corner is missing. A
/// target identical to the source geometry therefore copies the field,
/// missing samples included.
pub fn bilinear_regrid(src: &GridField, target: &GridGeometry) -> Result<GridField> {
    let sg = &src.geom;
    let y0 = sg.y_km(0);
    let x0 = sg.x_km(0);
    let mut values = vec![f32::NAN; target.len()];
    for i in 0..target.ny {
        let fi = snap((target.y_km(i) - y0) / sg.dy_km);
        if fi < 0.0 || fi > (sg.ny - 1) as f64 {
            return Err(Error::Shape(format!(
                "target row {i} maps outside source rows [0, {}]",
                sg.ny - 1
            )));
        }
        for j in 0..target.nx {
            let fj = snap((target.x_km(j) - x0) / sg.dx_km);
            if fj < 0.0 || fj > (sg.nx - 1) as f64 {
                return Err(Error::Shape(format!(
                    "target column {j} maps outside source columns [0, {}]",
                    sg.nx - 1
                )));
            }
            values[i * target.nx + j] = interpolate(src, fi, fj);
        }
    }
    Ok(GridField::new(target.clone(), src.var.clone(), src.valid_time, values)?
        .with_units(src.units.clone()))
}

fn snap(f: f64) -> f64 {
    let r = f.round();
    if (f - r).abs() < SNAP {
        r
    } else {
        f
    }
}

fn interpolate(src: &GridField, fi: f64, fj: f64) -> f32 {
    let i0 = fi.floor() as usize;
    let j0 = fj.floor() as usize;
    let a = fi - i0 as f64;
    let b = fj - j0 as f64;
    let i1 = (i0 + 1).min(src.geom.ny - 1);
    let j1 = (j0 + 1).min(src.geom.nx - 1);
    let corners = [
        (i0, j0, (1.0 - a) * (1.0 - b)),
        (i0, j1, (1.0 - a) * b),
        (i1, j0, a * (1.0 - b)),
        (i1, j1, a * b),
    ];
    let mut wsum = 0.0f64;
    let mut vsum = 0.0f64;
    for (i, j, w) in corners {
        if w == 0.0 {
            continue;
        }
        let v = src.get(i, j);
        if v.is_nan() {
            continue;
        }
        wsum += w;
        vsum += w * v as f64;
    }
    if wsum == 0.0 {
        f32::NAN
    } else {
        (vsum / wsum) as f32
    }
}
