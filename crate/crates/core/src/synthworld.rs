//! Synthetic storm world: advecting Gaussian rain blobs on a torus, with a
//! degraded pseudo-forecast (displacement lag, amplitude bias, blur that
//! grows with lead), a pseudo exceedance-threshold map and region labels.
//! Small enough to drive end-to-end experiments on one CPU.

use crate::error::{Error, Result};
use crate::grid::{hour_utc, GridField, GridGeometry, VarTag};
use crate::rollout::HrrrArchive;
use crate::sampler::RegionMap;
use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// World parameters. Velocity advects every blob; the degradation triple
/// (lag, bias, smoothing) defines the pseudo-forecast, and `lead_growth`
/// scales lag and smoothing up per extra lead hour.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub ny: usize,
    pub nx: usize,
    pub dy_km: f64,
    pub dx_km: f64,
    pub blobs: usize,
    pub amp_range_mm: (f64, f64),
    pub radius_range_km: (f64, f64),
    pub velocity_kmh: (f64, f64),
    pub lag_hours: f64,
    pub bias: f64,
    pub smooth_km: f64,
    pub lead_growth: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            ny: 256,
            nx: 256,
            dy_km: 1.0,
            dx_km: 1.0,
            blobs: 6,
            amp_range_mm: (2.0, 12.0),
            radius_range_km: (8.0, 24.0),
            velocity_kmh: (9.0, 12.0),
            lag_hours: 1.0,
            bias: 0.9,
            smooth_km: 4.0,
            lead_growth: 0.15,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ny == 0 || self.nx == 0 {
            return Err(Error::Config("world needs a nonempty domain".into()));
        }
        if !(self.dy_km > 0.0 && self.dx_km > 0.0) {
            return Err(Error::Config("pixel spacing must be positive".into()));
        }
        let (alo, ahi) = self.amp_range_mm;
        let (rlo, rhi) = self.radius_range_km;
        if !(alo > 0.0 && ahi >= alo) || !(rlo > 0.0 && rhi >= rlo) {
            return Err(Error::Config(format!(
                "amplitude and radius ranges must be positive and ordered, got {:?} and {:?}",
                self.amp_range_mm, self.radius_range_km
            )));
        }
        if !self.velocity_kmh.0.is_finite() || !self.velocity_kmh.1.is_finite() {
            return Err(Error::Config("velocity must be finite".into()));
        }
        if !(self.lag_hours >= 0.0) {
            return Err(Error::Config(format!("lag must be nonnegative, got {}", self.lag_hours)));
        }
        if !(self.bias > 0.0) {
            return Err(Error::Config(format!("bias factor must be positive, got {}", self.bias)));
        }
        if !(self.smooth_km >= 0.0) || !(self.lead_growth >= 0.0) {
            return Err(Error::Config(
                "smoothing radius and lead growth must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.ny, self.nx, 35.0, -100.0, self.dy_km, self.dx_km)
            .expect("validated world dimensions form a geometry")
    }

    /// Degradation scale at a lead: 1 at the first hour, growing by
    /// `lead_growth` per additional hour.
    fn growth(&self, lead: u8) -> f64 {
        1.0 + self.lead_growth * (lead.max(1) - 1) as f64
    }
}

/// Wall-clock time of world hour index `t`.
pub fn world_time(t: i64) -> DateTime<Utc> {
    hour_utc(2024, 1, 1, 0) + Duration::hours(t)
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    y0_km: f64,
    x0_km: f64,
    amp: f64,
    radius_km: f64,
}

/// Blob population drawn from the world seed: per blob, in order, initial
/// center, amplitude, radius.
fn blobs_of(cfg: &WorldConfig) -> Vec<Blob> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ly = cfg.ny as f64 * cfg.dy_km;
    let lx = cfg.nx as f64 * cfg.dx_km;
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        if lo < hi {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    (0..cfg.blobs)
        .map(|_| Blob {
            y0_km: rng.random_range(0.0..ly),
            x0_km: rng.random_range(0.0..lx),
            amp: draw(&mut rng, cfg.amp_range_mm.0, cfg.amp_range_mm.1),
            radius_km: draw(&mut rng, cfg.radius_range_km.0, cfg.radius_range_km.1),
        })
        .collect()
}

fn torus_delta(a: f64, b: f64, extent: f64) -> f64 {
    let d = (a - b).rem_euclid(extent);
    d.min(extent - d)
}

/// Sum of blobs with centers advanced to `hours`, each optionally shifted
/// back along the velocity by `back_hours` and blurred analytically with a
/// Gaussian of radius `extra_sigma` (which preserves each blob's integral).
fn blob_field(
    cfg: &WorldConfig,
    geom: &GridGeometry,
    valid: DateTime<Utc>,
    hours: f64,
    back_hours: f64,
    extra_sigma: f64,
    scale: f64,
) -> GridField {
    let blobs = blobs_of(cfg);
    let ly = cfg.ny as f64 * cfg.dy_km;
    let lx = cfg.nx as f64 * cfg.dx_km;
    let (vy, vx) = cfg.velocity_kmh;
    let mut out = GridField::filled(geom.clone(), VarTag::Rain, valid, 0.0);
    let centers: Vec<(f64, f64, f64, f64)> = blobs
        .iter()
        .map(|b| {
            let var = b.radius_km * b.radius_km + extra_sigma * extra_sigma;
            let cy = (b.y0_km + vy * (hours - back_hours)).rem_euclid(ly);
            let cx = (b.x0_km + vx * (hours - back_hours)).rem_euclid(lx);
            let amp = scale * b.amp * b.radius_km * b.radius_km / var;
            (cy, cx, amp, var)
        })
        .collect();
    for i in 0..cfg.ny {
        let y = i as f64 * cfg.dy_km;
        for j in 0..cfg.nx {
            let x = j as f64 * cfg.dx_km;
            let mut v = 0.0f64;
            for &(cy, cx, amp, var) in &centers {
                let dy = torus_delta(y, cy, ly);
                let dx = torus_delta(x, cx, lx);
                v += amp * (-(dy * dy + dx * dx) / (2.0 * var)).exp();
            }
            out.set(i, j, v.max(0.0) as f32);
        }
    }
    out
}

/// Ground-truth rain at world hour `t`.
pub fn gen_truth(cfg: &WorldConfig, t: i64) -> Result<GridField> {
    cfg.validate()?;
    Ok(blob_field(cfg, &cfg.geometry(), world_time(t), t as f64, 0.0, 0.0, 1.0))
}

/// Pseudo-forecast issued at hour `t` for `t + lead`: the truth of the
/// valid hour dragged back along the flow by the (lead-grown) lag, scaled
/// by the bias factor and blurred by the (lead-grown) smoothing radius.
pub fn gen_pseudo_hrrr(cfg: &WorldConfig, t: i64, lead: u8) -> Result<GridField> {
    cfg.validate()?;
    let g = cfg.growth(lead);
    Ok(blob_field(
        cfg,
        &cfg.geometry(),
        world_time(t + lead as i64),
        (t + lead as i64) as f64,
        cfg.lag_hours * g,
        cfg.smooth_km * g,
        cfg.bias,
    ))
}

/// Full forecast archive issued at hour `t` with leads `0..=max_lead`.
pub fn gen_archive(cfg: &WorldConfig, t: i64, max_lead: u8) -> Result<HrrrArchive> {
    let mut archive = HrrrArchive::new(world_time(t));
    for lead in 0..=max_lead {
        archive.insert(lead, gen_pseudo_hrrr(cfg, t, lead)?)?;
    }
    Ok(archive)
}

/// Pseudo rarity-threshold map: pinned near the top of the amplitude range
/// with a smooth spatial modulation, so lone blobs stay below it and
/// overlapping blobs can break it.
pub fn gen_ari_map(cfg: &WorldConfig) -> Result<GridField> {
    cfg.validate()?;
    let base = cfg.amp_range_mm.1;
    let mut out = GridField::filled(cfg.geometry(), VarTag::Ari, world_time(0), 0.0);
    for i in 0..cfg.ny {
        for j in 0..cfg.nx {
            let wave = (std::f64::consts::TAU * i as f64 / cfg.ny as f64).sin()
                * (std::f64::consts::TAU * j as f64 / cfg.nx as f64).cos();
            out.set(i, j, (base * (1.05 + 0.15 * wave)) as f32);
        }
    }
    Ok(out)
}

/// Two-by-four grid of equal rectangular regions labeled R1 through R8.
pub fn gen_region_map(cfg: &WorldConfig) -> Result<RegionMap> {
    cfg.validate()?;
    let mut field = GridField::filled(cfg.geometry(), VarTag::Region, world_time(0), 0.0);
    for i in 0..cfg.ny {
        for j in 0..cfg.nx {
            let row = (i * 2 / cfg.ny).min(1);
            let col = (j * 4 / cfg.nx).min(3);
            field.set(i, j, (row * 4 + col) as f32);
        }
    }
    RegionMap::new(field, (1..=8).map(|k| format!("R{k}")).collect())
}
