//! Autoregressive multi-hour correction in three configurations.
//!
//! All three share one loop: sample a standardised residual conditioned on
//! the current channel stack, map it back to physical units, add it to a
//! base rain field and clamp at zero. They differ in where new information
//! comes from as the horizon advances.
//!
//! * `DataDriven` conditions on three observed rain lags and feeds each
//!   prediction back as the newest lag; the base is the previous hour's
//!   rain state, so the residual is an hour-to-hour delta.
//! * `HrrrCorrective` conditions only on forecast fields from the driving
//!   model: three frozen lead-1 fields from earlier cycles standing in for
//!   an observation history, plus a current-lead pair that advances one
//!   lead per step. Predictions are never fed back, so errors cannot
//!   accumulate autoregressively; the base is the lead-L forecast.
//! * `Hybrid` does both: observed lags that roll forward with predictions
//!   and a forecast pair that advances through the leads, with the lead-L
//!   forecast as reconstruction base.
//!
//! Six auxiliary planes close each stack: latitude and longitude min-max
//! scaled to [0, 1] and sine/cosine encodings of hour-of-day and
//! day-of-year, all fixed at the initialisation hour.

use crate::edm::{heun_sample, Denoiser, ScheduleConfig, SigmaSchedule};
use crate::error::{Error, Result};
use crate::grid::{check_same_geometry, GridField, GridGeometry, NormSet, NormStats, VarTag};
use crate::residual::reconstruct;
use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use ndarray::{Array2, Array3, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;

/// Hard ceiling on rollout length, in hourly steps.
pub const MAX_HORIZON: usize = 12;

/// Largest forecast lead an archive will hold.
pub const MAX_LEAD: u8 = 13;

/// Which input-update discipline the rollout follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigKind {
    DataDriven,
    HrrrCorrective,
    Hybrid,
}

impl ConfigKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConfigKind::DataDriven => "data_driven",
            ConfigKind::HrrrCorrective => "hrrr_corrective",
            ConfigKind::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for ConfigKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data_driven" => Ok(ConfigKind::DataDriven),
            "hrrr_corrective" => Ok(ConfigKind::HrrrCorrective),
            "hybrid" => Ok(ConfigKind::Hybrid),
            other => Err(Error::Config(format!(
                "unknown configuration kind {other:?}, expected data_driven, hrrr_corrective or hybrid"
            ))),
        }
    }
}

/// How the raw companion of the normalised current-lead channel is chosen.
///
/// `SameLeadDual` pairs `zscore(fL)` with raw `fL`; `NextLeadPair` keeps
/// the training-time offset and pairs `zscore(fL)` with raw `f(L+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualPairing {
    #[default]
    SameLeadDual,
    NextLeadPair,
}

impl DualPairing {
    pub fn as_str(&self) -> &'static str {
        match self {
            DualPairing::SameLeadDual => "same_lead_dual",
            DualPairing::NextLeadPair => "next_lead_pair",
        }
    }

    fn raw_lead_for(&self, norm_lead: u8) -> u8 {
        match self {
            DualPairing::SameLeadDual => norm_lead,
            DualPairing::NextLeadPair => norm_lead + 1,
        }
    }
}

impl std::str::FromStr for DualPairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same_lead_dual" => Ok(DualPairing::SameLeadDual),
            "next_lead_pair" => Ok(DualPairing::NextLeadPair),
            other => Err(Error::Config(format!(
                "unknown pairing {other:?}, expected same_lead_dual or next_lead_pair"
            ))),
        }
    }
}

/// Everything a rollout needs beyond its input fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub kind: ConfigKind,
    pub pairing: DualPairing,
    pub schedule: ScheduleConfig,
    pub sigma_data: f64,
    pub norms: NormSet,
}

impl RolloutConfig {
    pub fn new(kind: ConfigKind, norms: NormSet) -> Self {
        RolloutConfig {
            kind,
            pairing: DualPairing::default(),
            schedule: ScheduleConfig::default(),
            sigma_data: 1.0,
            norms,
        }
    }
}

/// One forecast cycle's fields keyed by lead hour.
#[derive(Debug, Clone)]
pub struct HrrrArchive {
    init_time: DateTime<Utc>,
    by_lead: BTreeMap<u8, GridField>,
}

impl HrrrArchive {
    pub fn new(init_time: DateTime<Utc>) -> Self {
        HrrrArchive { init_time: crate::grid::truncate_to_hour(init_time), by_lead: BTreeMap::new() }
    }

    pub fn init_time(&self) -> DateTime<Utc> {
        self.init_time
    }

    /// Store the lead-`lead` field. The field must be rain, gap-free and
    /// valid exactly `lead` hours after the cycle's initialisation.
    pub fn insert(&mut self, lead: u8, field: GridField) -> Result<()> {
        if lead > MAX_LEAD {
            return Err(Error::Config(format!("lead {lead} exceeds archive maximum {MAX_LEAD}")));
        }
        if field.var != VarTag::Rain {
            return Err(Error::Shape(format!(
                "archive holds rain fields, got {}",
                field.var.as_str()
            )));
        }
        let expect = self.init_time + Duration::hours(lead as i64);
        if field.valid_time != expect {
            return Err(Error::Time(format!(
                "lead {lead} of cycle {} must be valid at {expect}, field says {}",
                self.init_time, field.valid_time
            )));
        }
        check_gapless(&field, &format!("forecast lead {lead}"))?;
        if let Some(other) = self.by_lead.values().next() {
            check_same_geometry(&other.geom, &field.geom)?;
        }
        self.by_lead.insert(lead, field);
        Ok(())
    }

    pub fn get(&self, lead: u8) -> Result<&GridField> {
        self.by_lead.get(&lead).ok_or(Error::MissingLead(lead))
    }

    pub fn has(&self, lead: u8) -> bool {
        self.by_lead.contains_key(&lead)
    }

    pub fn leads(&self) -> impl Iterator<Item = u8> + '_ {
        self.by_lead.keys().copied()
    }
}

/// The six shared conditioning planes.
#[derive(Debug, Clone)]
pub struct AuxPlanes {
    pub lat: Array2<f64>,
    pub lon: Array2<f64>,
    pub sin_hour: Array2<f64>,
    pub cos_hour: Array2<f64>,
    pub sin_doy: Array2<f64>,
    pub cos_doy: Array2<f64>,
}

impl AuxPlanes {
    /// Build the planes for a grid at one initialisation hour. Latitude and
    /// longitude scale linearly to [0, 1] across the domain (0 on a
    /// single-row or single-column axis); the temporal planes are constant.
    pub fn build(geom: &GridGeometry, t: DateTime<Utc>) -> Self {
        let (ny, nx) = (geom.ny, geom.nx);
        let axis_frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let lat = Array2::from_shape_fn((ny, nx), |(i, _)| axis_frac(i, ny));
        let lon = Array2::from_shape_fn((ny, nx), |(_, j)| axis_frac(j, nx));
        let hour_angle = TAU * t.hour() as f64 / 24.0;
        let doy_angle = TAU * (t.ordinal() as f64 - 1.0) / 365.25;
        let plane = |v: f64| Array2::from_elem((ny, nx), v);
        AuxPlanes {
            lat,
            lon,
            sin_hour: plane(hour_angle.sin()),
            cos_hour: plane(hour_angle.cos()),
            sin_doy: plane(doy_angle.sin()),
            cos_doy: plane(doy_angle.cos()),
        }
    }

    fn named(&self) -> [(&'static str, &Array2<f64>); 6] {
        [
            ("lat", &self.lat),
            ("lon", &self.lon),
            ("sin_hour", &self.sin_hour),
            ("cos_hour", &self.cos_hour),
            ("sin_doy", &self.sin_doy),
            ("cos_doy", &self.cos_doy),
        ]
    }
}

const IDX_LAG2: usize = 0;
const IDX_LAG1: usize = 1;
const IDX_LAG0: usize = 2;
const IDX_PAIR_NORM: usize = 3;
const IDX_PAIR_RAW: usize = 4;

/// A rollout in progress: the named channel stack, the forecast archive it
/// draws on and the predictions made so far.
#[derive(Debug, Clone)]
pub struct RolloutState {
    kind: ConfigKind,
    pairing: DualPairing,
    k: usize,
    init_time: DateTime<Utc>,
    geom: GridGeometry,
    channels: Vec<(String, Array2<f64>)>,
    hrrr: HrrrArchive,
    prev_rain: Option<GridField>,
    norms: NormSet,
    schedule: SigmaSchedule,
    sigma_data: f64,
    predictions: Vec<GridField>,
    residuals: Vec<GridField>,
}

impl RolloutState {
    pub fn kind(&self) -> ConfigKind {
        self.kind
    }

    pub fn pairing(&self) -> DualPairing {
        self.pairing
    }

    /// 1-based index of the next step to run.
    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn init_time(&self) -> DateTime<Utc> {
        self.init_time
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[(String, Array2<f64>)] {
        &self.channels
    }

    pub fn predictions(&self) -> &[GridField] {
        &self.predictions
    }

    /// The sampled residual fields behind each prediction, in step order.
    pub fn residuals(&self) -> &[GridField] {
        &self.residuals
    }

    /// The conditioning stack as one `(channel, y, x)` array.
    pub fn stack_array(&self) -> Array3<f64> {
        let mut out = Array3::zeros((self.channels.len(), self.geom.ny, self.geom.nx));
        for (ci, (_, plane)) in self.channels.iter().enumerate() {
            out.index_axis_mut(Axis(0), ci).assign(plane);
        }
        out
    }
}

fn check_gapless(f: &GridField, what: &str) -> Result<()> {
    if f.valid_count() != f.geom.len() {
        return Err(Error::MissingData(format!(
            "{what} contains missing pixels; rollout channels must be gap-free"
        )));
    }
    Ok(())
}

fn require_stats(stats: Option<NormStats>, name: &str) -> Result<NormStats> {
    let s = stats
        .ok_or_else(|| Error::Config(format!("{name} normalisation stats required for this kind")))?;
    check_usable_stats(&s, name)?;
    Ok(s)
}

fn check_usable_stats(s: &NormStats, name: &str) -> Result<()> {
    if !s.mean.is_finite() || !s.std.is_finite() || s.std <= 0.0 {
        return Err(Error::Config(format!(
            "{name} stats need a finite mean and positive std, got mean {} std {}",
            s.mean, s.std
        )));
    }
    Ok(())
}

fn z_plane(field: &GridField, stats: &NormStats) -> Array2<f64> {
    Array2::from_shape_fn((field.ny(), field.nx()), |(i, j)| {
        (field.get(i, j) as f64 - stats.mean) / stats.std
    })
}

/// Check a history triple: rain, gap-free, shared geometry, hourly valid
/// times ending at `t`.
fn check_history(fields: &[GridField], geom: &GridGeometry, t: DateTime<Utc>, what: &str) -> Result<()> {
    if fields.len() != 3 {
        return Err(Error::Shape(format!("{what} needs 3 fields, got {}", fields.len())));
    }
    for (i, f) in fields.iter().enumerate() {
        crate::residual::require_rain(f, what)?;
        check_same_geometry(geom, &f.geom)?;
        check_gapless(f, what)?;
        let expect = t - Duration::hours((2 - i) as i64);
        if f.valid_time != expect {
            return Err(Error::Time(format!(
                "{what} slot {i} must be valid at {expect}, field says {}",
                f.valid_time
            )));
        }
    }
    Ok(())
}

/// Assemble and validate a state ready for step 1.
///
/// `mrms_lags` are observations valid `t-2..t` (ignored by HrrrCorrective);
/// `prior_f01` are lead-1 fields from the three preceding cycles, also
/// valid `t-2..t` (used only by HrrrCorrective). The archive is the cycle
/// initialised at `t` and defines `t` itself.
pub fn init_state(
    cfg: &RolloutConfig,
    mrms_lags: &[GridField],
    hrrr: HrrrArchive,
    prior_f01: &[GridField],
    aux: AuxPlanes,
) -> Result<RolloutState> {
    cfg.schedule.validate()?;
    let schedule = SigmaSchedule::karras(&cfg.schedule)?;
    if !(cfg.sigma_data > 0.0) || !cfg.sigma_data.is_finite() {
        return Err(Error::Config(format!("sigma_data must be positive, got {}", cfg.sigma_data)));
    }
    check_usable_stats(&cfg.norms.residual, "residual")?;

    let t = hrrr.init_time();
    let uses_obs = cfg.kind != ConfigKind::HrrrCorrective;
    let uses_forecast = cfg.kind != ConfigKind::DataDriven;

    let geom = if uses_obs {
        mrms_lags
            .first()
            .ok_or_else(|| Error::Shape("observation lags needed, got none".into()))?
            .geom
            .clone()
    } else {
        prior_f01
            .first()
            .ok_or_else(|| Error::Shape("prior-cycle lead-1 fields needed, got none".into()))?
            .geom
            .clone()
    };

    let mut channels: Vec<(String, Array2<f64>)> = Vec::new();

    if uses_obs {
        let obs = require_stats(cfg.norms.obs, "observation")?;
        check_history(mrms_lags, &geom, t, "observation lag")?;
        for (name, f) in ["mrms_lag2", "mrms_lag1", "mrms_lag0"].iter().zip(mrms_lags) {
            channels.push((name.to_string(), z_plane(f, &obs)));
        }
    }
    if cfg.kind == ConfigKind::HrrrCorrective {
        let fc = require_stats(cfg.norms.forecast, "forecast")?;
        check_history(prior_f01, &geom, t, "prior-cycle lead-1 field")?;
        for (name, f) in ["hrrr_f01_tm3", "hrrr_f01_tm2", "hrrr_f01_tm1"].iter().zip(prior_f01) {
            channels.push((name.to_string(), z_plane(f, &fc)));
        }
    }
    if uses_forecast {
        let fc = require_stats(cfg.norms.forecast, "forecast")?;
        for lead in [1u8, 2] {
            let f = hrrr.get(lead)?;
            check_same_geometry(&geom, &f.geom)?;
        }
        let norm_field = hrrr.get(1)?;
        let raw_field = hrrr.get(cfg.pairing.raw_lead_for(1))?;
        channels.push(("hrrr_norm".to_string(), z_plane(norm_field, &fc)));
        channels.push(("hrrr_raw".to_string(), raw_field.to_array()));
    }
    for lead in hrrr.leads().collect::<Vec<_>>() {
        check_same_geometry(&geom, &hrrr.get(lead)?.geom)?;
    }

    for (name, plane) in aux.named() {
        if plane.dim() != (geom.ny, geom.nx) {
            return Err(Error::Shape(format!(
                "aux plane {name} is {}x{}, grid is {}x{}",
                plane.nrows(),
                plane.ncols(),
                geom.ny,
                geom.nx
            )));
        }
        channels.push((name.to_string(), plane.clone()));
    }

    let prev_rain =
        if cfg.kind == ConfigKind::DataDriven { Some(mrms_lags[2].clone()) } else { None };

    Ok(RolloutState {
        kind: cfg.kind,
        pairing: cfg.pairing,
        k: 1,
        init_time: t,
        geom,
        channels,
        hrrr,
        prev_rain,
        norms: cfg.norms,
        schedule,
        sigma_data: cfg.sigma_data,
        predictions: Vec::new(),
        residuals: Vec::new(),
    })
}

/// Run one step: sample a residual against the current stack, reconstruct
/// the rain field valid one hour past the last, then apply the kind's
/// channel-update rule and advance the step counter.
///
/// Forecast-holding kinds advance their current-lead pair to the next lead
/// at the end of the step, erroring if the archive lacks it; the
/// advancement is skipped after the final possible step.
pub fn step(
    state: &mut RolloutState,
    denoiser: &dyn Denoiser,
    rng: &mut dyn RngCore,
) -> Result<GridField> {
    let k = state.k;
    if k > MAX_HORIZON {
        return Err(Error::Config(format!("rollout already ran its {MAX_HORIZON} steps")));
    }
    let lead = k as u8;

    let cond = state.stack_array();
    let z = heun_sample(denoiser, &cond, &state.schedule, state.sigma_data, rng)?;

    let rs = state.norms.residual;
    let valid = state.init_time + Duration::hours(k as i64);
    let resid_arr = z.mapv(|v| v * rs.std + rs.mean);
    let residual = GridField::from_array(state.geom.clone(), VarTag::Residual, valid, &resid_arr)?;

    let prediction = match state.kind {
        ConfigKind::DataDriven => {
            let base = state
                .prev_rain
                .as_ref()
                .ok_or_else(|| Error::Config("data-driven state lost its rain base".into()))?;
            reconstruct(base, &residual)?
        }
        _ => reconstruct(state.hrrr.get(lead)?, &residual)?,
    };

    if state.kind != ConfigKind::HrrrCorrective {
        let obs = require_stats(state.norms.obs, "observation")?;
        let newest = z_plane(&prediction, &obs);
        let old_lag0 = std::mem::replace(&mut state.channels[IDX_LAG0].1, newest);
        let old_lag1 = std::mem::replace(&mut state.channels[IDX_LAG1].1, old_lag0);
        state.channels[IDX_LAG2].1 = old_lag1;
    }
    if state.kind != ConfigKind::DataDriven && k < MAX_HORIZON {
        let fc = require_stats(state.norms.forecast, "forecast")?;
        let next = lead + 1;
        let norm_plane = z_plane(state.hrrr.get(next)?, &fc);
        let raw_plane = state.hrrr.get(state.pairing.raw_lead_for(next))?.to_array();
        state.channels[IDX_PAIR_NORM].1 = norm_plane;
        state.channels[IDX_PAIR_RAW].1 = raw_plane;
    }

    if state.kind == ConfigKind::DataDriven {
        state.prev_rain = Some(prediction.clone());
    }
    state.predictions.push(prediction.clone());
    state.residuals.push(residual);
    state.k += 1;
    Ok(prediction)
}

impl RolloutState {
    /// Leads a full `horizon`-step run will touch, including the pair
    /// advancement at the end of every non-final step.
    fn check_leads(&self, horizon: usize) -> Result<()> {
        if self.kind == ConfigKind::DataDriven {
            return Ok(());
        }
        let mut max_norm = horizon as u8;
        if horizon < MAX_HORIZON {
            max_norm += 1;
        }
        for lead in 1..=max_norm {
            if !self.hrrr.has(lead) {
                return Err(Error::MissingLead(lead));
            }
            let raw = self.pairing.raw_lead_for(lead);
            if !self.hrrr.has(raw) {
                return Err(Error::MissingLead(raw));
            }
        }
        Ok(())
    }
}

/// Step `horizon` times from a fresh state, returning predictions valid
/// `t+1..t+horizon`. Every lead the run will need is checked up front.
pub fn run(
    state: &mut RolloutState,
    denoiser: &dyn Denoiser,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<GridField>> {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(Error::Config(format!("horizon must be 1..={MAX_HORIZON}, got {horizon}")));
    }
    if state.step_index() != 1 {
        return Err(Error::Config("rollout state was already stepped".into()));
    }
    state.check_leads(horizon)?;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        out.push(step(state, denoiser, rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::{NetConfig, OracleDenoiser, TinyConvDenoiser};
    use crate::grid::hour_utc;
    use crate::residual::{make_delta_target, make_error_target};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom(ny: usize, nx: usize) -> GridGeometry {
        GridGeometry::new(ny, nx, 35.0, -100.0, 1.0, 1.0).unwrap()
    }

    fn t0() -> DateTime<Utc> {
        hour_utc(2024, 6, 1, 6)
    }

    fn rain(g: &GridGeometry, t: DateTime<Utc>, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..g.len()).map(|_| rng.random_range(0.0f32..8.0)).collect();
        GridField::new(g.clone(), VarTag::Rain, t, values).unwrap()
    }

    /// Truth and a mildly biased pseudo-forecast of it.
    fn truth_at(g: &GridGeometry, k: i64) -> GridField {
        rain(g, t0() + Duration::hours(k), (300 + k) as u64)
    }

    fn forecast_of(truth: &GridField) -> GridField {
        let values = truth.values().iter().map(|v| 0.8 * v + 0.4).collect();
        GridField::new(truth.geom.clone(), VarTag::Rain, truth.valid_time, values).unwrap()
    }

    fn archive(g: &GridGeometry) -> HrrrArchive {
        let mut a = HrrrArchive::new(t0());
        for lead in 0..=MAX_LEAD {
            a.insert(lead, forecast_of(&truth_at(g, lead as i64))).unwrap();
        }
        a
    }

    fn mrms_lags(g: &GridGeometry) -> Vec<GridField> {
        (-2..=0).map(|k| truth_at(g, k)).collect()
    }

    fn prior_f01(g: &GridGeometry) -> Vec<GridField> {
        (-2..=0).map(|k| forecast_of(&truth_at(g, k))).collect()
    }

    fn norms() -> NormSet {
        NormSet {
            obs: Some(NormStats::new(2.0, 1.5, 100)),
            forecast: Some(NormStats::new(1.8, 1.2, 100)),
            residual: NormStats::new(0.05, 1.3, 100),
        }
    }

    fn state_for(kind: ConfigKind, pairing: DualPairing, g: &GridGeometry) -> RolloutState {
        let mut cfg = RolloutConfig::new(kind, norms());
        cfg.pairing = pairing;
        cfg.schedule.steps = 6;
        init_state(&cfg, &mrms_lags(g), archive(g), &prior_f01(g), AuxPlanes::build(g, t0()))
            .unwrap()
    }

    const AUX_NAMES: [&str; 6] = ["lat", "lon", "sin_hour", "cos_hour", "sin_doy", "cos_doy"];

    #[test]
    fn channel_layout_per_kind() {
        let g = geom(8, 9);
        let dd = state_for(ConfigKind::DataDriven, DualPairing::SameLeadDual, &g);
        let mut want = vec!["mrms_lag2", "mrms_lag1", "mrms_lag0"];
        want.extend(AUX_NAMES);
        assert_eq!(dd.channel_names(), want);
        assert_eq!(dd.channel_count(), 9);
        assert!(!dd.channel_names().iter().any(|n| n.starts_with("hrrr")));

        let co = state_for(ConfigKind::HrrrCorrective, DualPairing::SameLeadDual, &g);
        let mut want = vec!["hrrr_f01_tm3", "hrrr_f01_tm2", "hrrr_f01_tm1", "hrrr_norm", "hrrr_raw"];
        want.extend(AUX_NAMES);
        assert_eq!(co.channel_names(), want);
        assert_eq!(co.channel_count(), 11);

        let hy = state_for(ConfigKind::Hybrid, DualPairing::SameLeadDual, &g);
        let mut want = vec!["mrms_lag2", "mrms_lag1", "mrms_lag0", "hrrr_norm", "hrrr_raw"];
        want.extend(AUX_NAMES);
        assert_eq!(hy.channel_names(), want);
        assert_eq!(hy.channel_count(), 11);
    }

    #[test]
    fn aux_planes_scale_and_encode() {
        let g = geom(5, 7);
        let aux = AuxPlanes::build(&g, t0());
        assert_eq!(aux.lat[(0, 3)], 0.0);
        assert_eq!(aux.lat[(4, 3)], 1.0);
        assert_eq!(aux.lon[(2, 0)], 0.0);
        assert_eq!(aux.lon[(2, 6)], 1.0);
        let angle = TAU * 6.0 / 24.0;
        assert!((aux.sin_hour[(1, 1)] - angle.sin()).abs() < 1e-15);
        assert!((aux.cos_hour[(1, 1)] - angle.cos()).abs() < 1e-15);
        let one_row = AuxPlanes::build(&GridGeometry::new(1, 4, 35.0, -100.0, 1.0, 1.0).unwrap(), t0());
        assert!(one_row.lat.iter().all(|&v| v == 0.0));
    }

    /// With the denoiser handed the true standardised residual before each
    /// step, every kind must walk the truth sequence to within a few float
    /// roundings per hour.
    #[test]
    fn oracle_denoiser_reproduces_truth_at_every_lead() {
        let g = geom(10, 12);
        for kind in [ConfigKind::DataDriven, ConfigKind::HrrrCorrective, ConfigKind::Hybrid] {
            let mut state = state_for(kind, DualPairing::SameLeadDual, &g);
            let oracle = OracleDenoiser::constant(g.ny, g.nx, 0.0, 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let rs = norms().residual;
            let mut base = truth_at(&g, 0);
            for k in 1..=MAX_HORIZON as i64 {
                let truth = truth_at(&g, k);
                let target = match kind {
                    ConfigKind::DataDriven => make_delta_target(&base, &truth).unwrap(),
                    _ => make_error_target(&truth, state.hrrr.get(k as u8).unwrap()).unwrap(),
                };
                oracle.set_target(target.to_array().mapv(|r| (r - rs.mean) / rs.std));
                let pred = step(&mut state, &oracle, &mut rng).unwrap();
                assert_eq!(pred.valid_time, t0() + Duration::hours(k));
                let worst = pred
                    .values()
                    .iter()
                    .zip(truth.values())
                    .map(|(p, t)| (p - t).abs())
                    .fold(0.0f32, f32::max);
                assert!(worst < 1e-5, "{} lead {k} err {worst}", kind.as_str());
                base = pred;
            }
        }
    }

    #[test]
    fn zero_residual_gives_persistence_and_clamped_forecast() {
        let g = geom(9, 9);
        let mut norms0 = norms();
        norms0.residual = NormStats::new(0.0, 1.0, 1);
        let zero = OracleDenoiser::constant(g.ny, g.nx, 0.0, 1.0);

        let mut cfg = RolloutConfig::new(ConfigKind::DataDriven, norms0);
        cfg.schedule.steps = 6;
        let mut state =
            init_state(&cfg, &mrms_lags(&g), archive(&g), &[], AuxPlanes::build(&g, t0())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let preds = run(&mut state, &zero, MAX_HORIZON, &mut rng).unwrap();
        let anchor = truth_at(&g, 0);
        for p in &preds {
            for (a, b) in p.values().iter().zip(anchor.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }

        cfg.kind = ConfigKind::HrrrCorrective;
        let mut state =
            init_state(&cfg, &[], archive(&g), &prior_f01(&g), AuxPlanes::build(&g, t0())).unwrap();
        let preds = run(&mut state, &zero, MAX_HORIZON, &mut rng).unwrap();
        for (k, p) in preds.iter().enumerate() {
            let fl = forecast_of(&truth_at(&g, k as i64 + 1));
            for (a, b) in p.values().iter().zip(fl.values()) {
                assert!((a - b.max(0.0)).abs() < 1e-9);
            }
        }
    }

    /// Between consecutive steps the stack may change only where the update
    /// rule says: lags shift with the newest prediction appended, the
    /// forecast pair advances one lead, frozen and aux channels stay
    /// bit-identical.
    #[test]
    fn channel_audit_matches_update_rules() {
        let g = geom(7, 8);
        let rs = norms().residual;
        let obs = norms().obs.unwrap();
        let fc = norms().forecast.unwrap();
        for kind in [ConfigKind::DataDriven, ConfigKind::HrrrCorrective, ConfigKind::Hybrid] {
            for pairing in [DualPairing::SameLeadDual, DualPairing::NextLeadPair] {
                let mut state = state_for(kind, pairing, &g);
                let oracle = OracleDenoiser::constant(g.ny, g.nx, 0.0, 1.0);
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                for k in 1..=4u8 {
                    let before: Vec<(String, Array2<f64>)> = state.channels().to_vec();
                    oracle.set_target(Array2::from_elem((g.ny, g.nx), (0.3 - rs.mean) / rs.std));
                    let pred = step(&mut state, &oracle, &mut rng).unwrap();
                    let after = state.channels();
                    assert_eq!(
                        before.iter().map(|(n, _)| n).collect::<Vec<_>>(),
                        after.iter().map(|(n, _)| n).collect::<Vec<_>>()
                    );
                    for (name, plane) in after {
                        let old = |i: usize| &before[i].1;
                        match (kind, name.as_str()) {
                            (ConfigKind::HrrrCorrective, "mrms_lag2") => unreachable!(),
                            (_, "mrms_lag2") => assert_eq!(plane, old(IDX_LAG1)),
                            (_, "mrms_lag1") => assert_eq!(plane, old(IDX_LAG0)),
                            (_, "mrms_lag0") => assert_eq!(*plane, z_plane(&pred, &obs)),
                            (_, "hrrr_norm") => {
                                assert_eq!(*plane, z_plane(state.hrrr.get(k + 1).unwrap(), &fc))
                            }
                            (_, "hrrr_raw") => {
                                let raw = state.hrrr.get(pairing.raw_lead_for(k + 1)).unwrap();
                                assert_eq!(*plane, raw.to_array())
                            }
                            (_, n) if n.starts_with("hrrr_f01_tm") || AUX_NAMES.contains(&n) => {
                                let idx = before.iter().position(|(bn, _)| bn == name).unwrap();
                                assert_eq!(plane, old(idx), "{n} drifted");
                            }
                            (_, n) => panic!("unexpected channel {n}"),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn trained_net_rollout_is_deterministic_per_seed() {
        let g = geom(8, 8);
        let net = TinyConvDenoiser::init(NetConfig::new(9), 11).unwrap();
        let run_with = |seed: u64| {
            let mut state = state_for(ConfigKind::DataDriven, DualPairing::SameLeadDual, &g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run(&mut state, &net, 3, &mut rng).unwrap()
        };
        let a = run_with(9);
        let b = run_with(9);
        let c = run_with(10);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn missing_lead_is_reported_before_any_step() {
        let g = geom(6, 6);
        let mut a = HrrrArchive::new(t0());
        for lead in 0..=2u8 {
            a.insert(lead, forecast_of(&truth_at(&g, lead as i64))).unwrap();
        }
        let cfg = RolloutConfig::new(ConfigKind::HrrrCorrective, norms());
        let mut state =
            init_state(&cfg, &[], a, &prior_f01(&g), AuxPlanes::build(&g, t0())).unwrap();
        let zero = OracleDenoiser::constant(g.ny, g.nx, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        match run(&mut state, &zero, 3, &mut rng) {
            Err(Error::MissingLead(3)) => {}
            other => panic!("expected missing lead 3, got {other:?}"),
        }
        assert_eq!(state.step_index(), 1);
    }

    #[test]
    fn init_rejects_incomplete_inputs() {
        let g = geom(6, 6);
        let cfg = RolloutConfig::new(ConfigKind::HrrrCorrective, norms());
        let aux = || AuxPlanes::build(&g, t0());

        let mut only_f01 = HrrrArchive::new(t0());
        only_f01.insert(1, forecast_of(&truth_at(&g, 1))).unwrap();
        match init_state(&cfg, &[], only_f01, &prior_f01(&g), aux()) {
            Err(Error::MissingLead(2)) => {}
            other => panic!("expected missing lead 2, got {other:?}"),
        }

        let mut stale = prior_f01(&g);
        stale[0].valid_time = t0() - Duration::hours(5);
        assert!(matches!(init_state(&cfg, &[], archive(&g), &stale, aux()), Err(Error::Time(_))));

        let dd = RolloutConfig::new(ConfigKind::DataDriven, norms());
        let mut gappy = mrms_lags(&g);
        gappy[1].set(0, 0, f32::NAN);
        assert!(matches!(
            init_state(&dd, &gappy, HrrrArchive::new(t0()), &[], aux()),
            Err(Error::MissingData(_))
        ));

        let mut no_obs = norms();
        no_obs.obs = None;
        let dd = RolloutConfig::new(ConfigKind::DataDriven, no_obs);
        assert!(matches!(
            init_state(&dd, &mrms_lags(&g), HrrrArchive::new(t0()), &[], aux()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn archive_rejects_bad_fields() {
        let g = geom(4, 4);
        let mut a = HrrrArchive::new(t0());
        let wrong_time = forecast_of(&truth_at(&g, 5));
        assert!(matches!(a.insert(3, wrong_time), Err(Error::Time(_))));
        let mut gappy = forecast_of(&truth_at(&g, 3));
        gappy.set(1, 1, f32::NAN);
        assert!(matches!(a.insert(3, gappy), Err(Error::MissingData(_))));
        assert!(matches!(
            a.insert(MAX_LEAD + 1, forecast_of(&truth_at(&g, MAX_LEAD as i64 + 1))),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn next_lead_pair_offsets_raw_channel() {
        let g = geom(6, 6);
        let state = state_for(ConfigKind::Hybrid, DualPairing::NextLeadPair, &g);
        let raw = &state.channels()[IDX_PAIR_RAW].1;
        assert_eq!(*raw, state.hrrr.get(2).unwrap().to_array());
        let state = state_for(ConfigKind::Hybrid, DualPairing::SameLeadDual, &g);
        let raw = &state.channels()[IDX_PAIR_RAW].1;
        assert_eq!(*raw, state.hrrr.get(1).unwrap().to_array());
    }

    #[test]
    fn run_requires_fresh_state_and_sane_horizon() {
        let g = geom(5, 5);
        let mut state = state_for(ConfigKind::DataDriven, DualPairing::SameLeadDual, &g);
        let zero = OracleDenoiser::constant(g.ny, g.nx, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(run(&mut state, &zero, 0, &mut rng), Err(Error::Config(_))));
        assert!(matches!(run(&mut state, &zero, 13, &mut rng), Err(Error::Config(_))));
        step(&mut state, &zero, &mut rng).unwrap();
        assert!(matches!(run(&mut state, &zero, 2, &mut rng), Err(Error::Config(_))));
    }
}
