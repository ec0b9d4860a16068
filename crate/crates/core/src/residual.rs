//! Residual targets and forecast reconstruction.
//!
//! The model never predicts rain rate directly. It predicts one of two
//! difference fields:
//!
//! - observation delta: `rain(t+1) - rain(t)`, the hour-to-hour change of
//!   the observed field;
//! - forecast error: `rain(t+L) - forecast_L(t)`, what a forecast valid at
//!   `t+L` got wrong.
//!
//! A corrected forecast is then `base + residual`, clamped at zero. The
//! clamp lives only here: residuals themselves are signed and the training
//! targets must stay untouched, so reconstruction is the single place where
//! physical non-negativity is imposed.

use crate::error::{Error, Result};
use crate::grid::{check_same_geometry, GridField, VarTag};
use chrono::Duration;

pub(crate) fn require_rain(f: &GridField, role: &str) -> Result<()> {
    if f.var != VarTag::Rain {
        return Err(Error::Shape(format!("{role} must be a rain field, got {}", f.var.as_str())));
    }
    Ok(())
}

fn difference(a: &GridField, b: &GridField) -> Vec<f32> {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| {
            if x.is_nan() || y.is_nan() {
                f32::NAN
            } else {
                (*x as f64 - *y as f64) as f32
            }
        })
        .collect()
}

/// Hour-to-hour observed change: `next - now`. The fields must be rain on
/// the same grid at consecutive hours. Samples missing in either input are
/// missing in the target. Valid time is `next`'s.
pub fn make_delta_target(now: &GridField, next: &GridField) -> Result<GridField> {
    require_rain(now, "current observation")?;
    require_rain(next, "next observation")?;
    check_same_geometry(&now.geom, &next.geom)?;
    if next.valid_time - now.valid_time != Duration::hours(1) {
        return Err(Error::Time(format!(
            "observations must be consecutive hours, got {} then {}",
            now.valid_time, next.valid_time
        )));
    }
    GridField::new(now.geom.clone(), VarTag::Residual, next.valid_time, difference(next, now))
}

/// Forecast error at verification time: `truth - forecast`. Both fields
/// must be rain on the same grid with the same valid time.
pub fn make_error_target(truth: &GridField, forecast: &GridField) -> Result<GridField> {
    require_rain(truth, "truth")?;
    require_rain(forecast, "forecast")?;
    check_same_geometry(&truth.geom, &forecast.geom)?;
    if truth.valid_time != forecast.valid_time {
        return Err(Error::Time(format!(
            "truth valid at {} but forecast valid at {}",
            truth.valid_time, forecast.valid_time
        )));
    }
    GridField::new(truth.geom.clone(), VarTag::Residual, truth.valid_time, difference(truth, forecast))
}

/// Apply a predicted residual to its base field: `max(base + residual, 0)`.
///
/// The base is the forecast being corrected (forecast-error residuals) or
/// the previous hour's rain field (observation-delta residuals), so its
/// valid time may equal the residual's or sit one hour earlier; the output
/// takes the residual's valid time. Samples missing in either input are
/// missing in the output.
pub fn reconstruct(base: &GridField, residual: &GridField) -> Result<GridField> {
    require_rain(base, "base")?;
    if residual.var != VarTag::Residual {
        return Err(Error::Shape(format!(
            "reconstruction needs a residual field, got {}",
            residual.var.as_str()
        )));
    }
    check_same_geometry(&base.geom, &residual.geom)?;
    let values = base
        .values()
        .iter()
        .zip(residual.values())
        .map(|(b, r)| {
            if b.is_nan() || r.is_nan() {
                f32::NAN
            } else {
                ((*b as f64 + *r as f64).max(0.0)) as f32
            }
        })
        .collect();
    GridField::new(base.geom.clone(), VarTag::Rain, residual.valid_time, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{hour_utc, GridGeometry};
    use proptest::prelude::*;

    fn rain(vals: Vec<f32>, hour: u32) -> GridField {
        let geom = GridGeometry::new(2, 3, 38.0, -98.0, 1.0, 1.0).unwrap();
        GridField::new(geom, VarTag::Rain, hour_utc(2024, 6, 1, hour), vals).unwrap()
    }

    #[test]
    fn delta_target_is_elementwise_difference() {
        let now = rain(vec![0.0, 1.0, 2.5, f32::NAN, 4.0, 0.5], 3);
        let next = rain(vec![1.0, 1.0, 2.0, 3.0, f32::NAN, 2.5], 4);
        let d = make_delta_target(&now, &next).unwrap();
        assert_eq!(d.var, VarTag::Residual);
        assert_eq!(d.valid_time, next.valid_time);
        assert_eq!(d.values()[0], 1.0);
        assert_eq!(d.values()[1], 0.0);
        assert_eq!(d.values()[2], -0.5);
        assert!(d.values()[3].is_nan());
        assert!(d.values()[4].is_nan());
        assert_eq!(d.values()[5], 2.0);
    }

    #[test]
    fn delta_target_requires_consecutive_hours() {
        let now = rain(vec![0.0; 6], 3);
        let skip = rain(vec![0.0; 6], 5);
        assert!(matches!(make_delta_target(&now, &skip), Err(Error::Time(_))));
        let back = rain(vec![0.0; 6], 2);
        assert!(make_delta_target(&now, &back).is_err());
    }

    #[test]
    fn error_target_requires_matching_valid_time() {
        let truth = rain(vec![1.0; 6], 4);
        let fcst = rain(vec![0.5; 6], 3);
        assert!(matches!(make_error_target(&truth, &fcst), Err(Error::Time(_))));
    }

    #[test]
    fn reconstruction_clamps_at_zero() {
        let base = rain(vec![1.0, 0.2, 0.0, 2.0, 5.0, 0.1], 4);
        let resid = GridField::new(
            base.geom.clone(),
            VarTag::Residual,
            hour_utc(2024, 6, 1, 4),
            vec![-2.0, -0.1, 0.0, 1.0, -5.0, f32::NAN],
        )
        .unwrap();
        let out = reconstruct(&base, &resid).unwrap();
        assert_eq!(out.var, VarTag::Rain);
        assert_eq!(out.values()[0], 0.0);
        assert!((out.values()[1] - 0.1).abs() < 1e-6);
        assert_eq!(out.values()[2], 0.0);
        assert_eq!(out.values()[3], 3.0);
        assert_eq!(out.values()[4], 0.0);
        assert!(out.values()[5].is_nan());
    }

    proptest! {
        #[test]
        fn correcting_with_the_true_error_recovers_truth(
            truth_v in proptest::collection::vec(0.0f32..25.0, 6),
            fcst_v in proptest::collection::vec(0.0f32..25.0, 6),
        ) {
            let truth = rain(truth_v, 4);
            let fcst = rain(fcst_v, 4);
            let resid = make_error_target(&truth, &fcst).unwrap();
            let back = reconstruct(&fcst, &resid).unwrap();
            // the residual is stored in f32, so recovery is exact up to a
            // few ulps of the larger operand
            for ((a, b), f) in back.values().iter().zip(truth.values()).zip(fcst.values()) {
                let tol = 4.0 * f32::EPSILON * b.abs().max(f.abs()).max(1.0);
                prop_assert!((a - b).abs() <= tol, "{a} vs {b}");
            }
        }

        #[test]
        fn reconstruction_is_never_negative(
            base_v in proptest::collection::vec(0.0f32..25.0, 6),
            resid_v in proptest::collection::vec(-30.0f32..30.0, 6),
        ) {
            let base = rain(base_v, 4);
            let resid = GridField::new(
                base.geom.clone(),
                VarTag::Residual,
                hour_utc(2024, 6, 1, 4),
                resid_v,
            )
            .unwrap();
            let out = reconstruct(&base, &resid).unwrap();
            prop_assert!(out.values().iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn delta_antisymmetry(
            a_v in proptest::collection::vec(0.0f32..25.0, 6),
            b_v in proptest::collection::vec(0.0f32..25.0, 6),
        ) {
            let a = rain(a_v, 3);
            let b = rain(b_v, 4);
            let fwd = make_delta_target(&a, &b).unwrap();
            let a_next = rain(a.values().to_vec(), 5);
            let rev = make_delta_target(&b, &a_next).unwrap();
            for (x, y) in fwd.values().iter().zip(rev.values()) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
