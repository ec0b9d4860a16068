//! Implementations of the pipeline subcommands.
//!
//! Every command reads a validated [`RunConfig`], works through plain files
//! in the directories it is given, and finishes by writing a manifest that
//! lists what it consumed and produced. Randomness is always drawn from a
//! generator derived from the config seed and a fixed stream tag, so a
//! command rerun over the same inputs writes the same bytes.

use super::config::RunConfig;
use super::files;
use super::manifest::RunManifest;
use crate::edm::{
    load_checkpoint, save_checkpoint, Checkpoint, Denoiser, NetConfig, OracleDenoiser,
    TinyConvDenoiser, TrainSample, Trainer,
};
use crate::error::{Error, Result};
use crate::grid::{
    bilinear_regrid, compute_stats, extract_tile, mosaic, read_grid, write_grid, zscore,
    GridField, GridGeometry, NormSet, TileSpec,
};
use crate::residual::{make_delta_target, make_error_target};
use crate::rollout::{self, AuxPlanes, ConfigKind, HrrrArchive, MAX_LEAD};
use crate::sampler::{regional_balance, sample_timestep, tile_manifest_csv, RegionMap};
use crate::spectral::{intensity_pdf, power_spectrum_2d, spectral_coherence};
use crate::synthworld::{
    gen_archive, gen_ari_map, gen_region_map, gen_truth, world_time,
};
use crate::uq::{coverage_rate, scenarios_from_archive, IntensityBins};
use crate::verify::{
    bootstrap_ci, contingency, contingency_wet_only, fss, mae_nonzero, mae_nonzero_pooled,
    reports_to_csv, MetricReport,
};
use chrono::Datelike;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

const STREAM_BALANCE: u64 = 1;
const STREAM_ROLLOUT: u64 = 2;
const STREAM_BOOTSTRAP: u64 = 3;
const STREAM_SAMPLE_BASE: u64 = 1 << 32;

/// Generator for one named stream of a run. The tag is diffused through a
/// splitmix round so related (seed, stream) pairs do not produce related
/// generators.
fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn emit_grid(m: &mut RunManifest, field: &GridField, path: &Path) -> Result<()> {
    write_grid(field, path)?;
    m.record_output(path);
    Ok(())
}

fn emit_text(m: &mut RunManifest, text: &str, path: &Path) -> Result<()> {
    files::write_text(path, text)?;
    m.record_output(path);
    Ok(())
}

fn out_dir_of(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if p.as_os_str().is_empty() => PathBuf::from("."),
        Some(p) => p.to_path_buf(),
        None => PathBuf::from("."),
    }
}

#[derive(Serialize, Deserialize)]
struct RegionNames {
    names: Vec<String>,
}

fn load_region_map(dir: &Path) -> Result<RegionMap> {
    let field = read_grid(dir.join("regions.grd"))?;
    let names: RegionNames = serde_json::from_str(&files::read_text(&dir.join("regions.json"))?)?;
    RegionMap::new(field, names.names)
}

/// Generate the synthetic record: hourly truth, a forecast cycle per hour
/// with leads 0 through [`MAX_LEAD`], the exceedance climatology and the
/// region partition.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let world = cfg.world();
    world.validate()?;
    files::ensure_dir(out)?;
    let mut m = RunManifest::new("synth", cfg.sha256(), cfg.seed())?;
    let hours = cfg.usize("world.hours") as i64;
    if hours < 1 {
        return Err(Error::Config("world.hours must be at least 1".into()));
    }

    for t in 0..=hours {
        emit_grid(&mut m, &gen_truth(&world, t)?, &files::truth_path(out, t))?;
    }
    for t in 0..hours {
        let archive = gen_archive(&world, t, MAX_LEAD)?;
        for lead in archive.leads().collect::<Vec<_>>() {
            emit_grid(&mut m, archive.get(lead)?, &files::hrrr_path(out, t, lead))?;
        }
    }
    emit_grid(&mut m, &gen_ari_map(&world)?, &out.join("ari.grd"))?;
    let regions = gen_region_map(&world)?;
    emit_grid(&mut m, regions.field(), &out.join("regions.grd"))?;
    let names = RegionNames { names: regions.names().to_vec() };
    let mut text = serde_json::to_string_pretty(&names)?;
    text.push('\n');
    emit_text(&mut m, &text, &out.join("regions.json"))?;
    m.note("timesteps", hours.to_string());
    m.write(out)?;
    Ok(())
}

/// Resample one grid onto a new pixel count, keeping the physical extent.
pub fn cmd_regrid(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let ny = cfg.usize("regrid.ny");
    let nx = cfg.usize("regrid.nx");
    if ny < 2 || nx < 2 {
        return Err(Error::Config(format!(
            "regrid.ny and regrid.nx must both be at least 2, got {ny}x{nx}"
        )));
    }
    let src = read_grid(input)?;
    let g = &src.geom;
    let target = GridGeometry::new(
        ny,
        nx,
        g.lat0,
        g.lon0,
        g.dy_km * (g.ny - 1) as f64 / (ny - 1) as f64,
        g.dx_km * (g.nx - 1) as f64 / (nx - 1) as f64,
    )?;
    let dst = bilinear_regrid(&src, &target)?;

    let dir = out_dir_of(output);
    files::ensure_dir(&dir)?;
    let mut m = RunManifest::new("regrid", cfg.sha256(), cfg.seed())?;
    m.record_input(input);
    emit_grid(&mut m, &dst, output)?;
    m.write(&dir)?;
    Ok(())
}

/// Pick training tiles from every truth timestep, rebalance them across
/// regions and months, and write the tile manifest (optionally with the
/// tile rasters themselves).
pub fn cmd_sample(cfg: &RunConfig, data: &Path, out: &Path, write_tiles: bool) -> Result<()> {
    let ari = read_grid(data.join("ari.grd"))?;
    let regions = load_region_map(data)?;
    let criteria = cfg.criteria(&ari);
    criteria.validate()?;

    let series = files::load_truth_series(data)?;
    if series.is_empty() {
        return Err(Error::MissingData(format!("no truth grids in {}", data.display())));
    }
    let mut pool = Vec::new();
    for (&t, field) in &series {
        let mut rng = rng_stream(cfg.seed(), STREAM_SAMPLE_BASE + t as u64);
        pool.extend(sample_timestep(field, &criteria, &mut rng)?);
    }
    let mut rng = rng_stream(cfg.seed(), STREAM_BALANCE);
    let kept = regional_balance(&pool, &regions, cfg.usize("sample.cap"), &mut rng)?;

    files::ensure_dir(out)?;
    let mut m = RunManifest::new("sample", cfg.sha256(), cfg.seed())?;
    m.record_input(data);
    emit_text(&mut m, &tile_manifest_csv(&kept, &regions, cfg.seed())?, &out.join("tiles.csv"))?;
    if write_tiles {
        let t0 = world_time(0);
        for (i, tile) in kept.iter().enumerate() {
            let t = (tile.valid_time - t0).num_hours();
            let field = series.get(&t).ok_or_else(|| {
                Error::MissingData(format!("tile refers to missing timestep t{t:03}"))
            })?;
            emit_grid(&mut m, &extract_tile(field, &tile.spec)?, &files::tile_path(out, i))?;
        }
    }
    m.note("pool_size", pool.len().to_string());
    m.note("kept", kept.len().to_string());
    m.write(out)?;
    Ok(())
}

/// Build the learning targets (hourly observation deltas and lead-1
/// forecast errors) plus the standardisation moments the corrector needs.
pub fn cmd_targets(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let series = files::load_truth_series(data)?;
    files::ensure_dir(out)?;
    let mut m = RunManifest::new("targets", cfg.sha256(), cfg.seed())?;
    m.record_input(data);

    let mut deltas = Vec::new();
    for (&t, now) in &series {
        if let Some(next) = series.get(&(t + 1)) {
            let delta = make_delta_target(now, next)?;
            emit_grid(&mut m, &delta, &files::delta_path(out, t + 1))?;
            deltas.push(delta);
        }
    }

    let mut errors = Vec::new();
    let mut forecasts = Vec::new();
    for t in files::archive_indices(data)? {
        for lead in 0..=MAX_LEAD {
            let path = files::hrrr_path(data, t, lead);
            if path.exists() {
                forecasts.push(read_grid(path)?);
            }
        }
        let f01_path = files::hrrr_path(data, t, 1);
        if let (true, Some(truth)) = (f01_path.exists(), series.get(&(t + 1))) {
            let f01 = read_grid(f01_path)?;
            let err = make_error_target(truth, &f01)?;
            emit_grid(&mut m, &err, &files::error_path(out, t))?;
            errors.push(err);
        }
    }

    let residual_pool = if cfg.kind()? == ConfigKind::DataDriven { &deltas } else { &errors };
    if residual_pool.is_empty() {
        return Err(Error::MissingData("no residual targets could be built".into()));
    }
    let norms = NormSet {
        obs: Some(compute_stats(series.values())?),
        forecast: if forecasts.is_empty() { None } else { Some(compute_stats(&forecasts)?) },
        residual: compute_stats(residual_pool)?,
    };
    let mut text = serde_json::to_string_pretty(&norms)?;
    text.push('\n');
    emit_text(&mut m, &text, &out.join("norms.json"))?;
    m.note("deltas", deltas.len().to_string());
    m.note("errors", errors.len().to_string());
    m.write(out)?;
    Ok(())
}

/// Read the lag grids, forecast cycle and prior lead-1 fields a rollout
/// state needs for initialisation time `t`, per the conditioning kind.
fn assemble_state_inputs(
    kind: ConfigKind,
    data: &Path,
    t: i64,
) -> Result<(Vec<GridField>, HrrrArchive, Vec<GridField>, AuxPlanes)> {
    let mut lags = Vec::new();
    if kind != ConfigKind::HrrrCorrective {
        for dt in [-2i64, -1, 0] {
            lags.push(read_grid(files::truth_path(data, t + dt))?);
        }
    }
    let archive = files::load_archive(data, t, MAX_LEAD)?;
    let mut priors = Vec::new();
    if kind == ConfigKind::HrrrCorrective {
        for dt in [-3i64, -2, -1] {
            priors.push(read_grid(files::hrrr_path(data, t + dt, 1))?);
        }
    }
    let geom = archive.get(1)?.geom.clone();
    let aux = AuxPlanes::build(&geom, world_time(t));
    Ok((lags, archive, priors, aux))
}

/// Train the residual corrector on consecutive initialisation times and
/// save the resulting checkpoint together with its loss trace.
pub fn cmd_train(cfg: &RunConfig, data: &Path, targets: &Path, out: &Path) -> Result<()> {
    let kind = cfg.kind()?;
    let pairing = cfg.pairing()?;
    let norms: NormSet = serde_json::from_str(&files::read_text(&targets.join("norms.json"))?)?;
    let rcfg = cfg.rollout(norms)?;

    let first = cfg.i64("train.first_init");
    let n_inits = cfg.usize("train.n_inits");
    if n_inits == 0 {
        return Err(Error::Config("train.n_inits must be at least 1".into()));
    }
    let earliest_lag = if kind == ConfigKind::HrrrCorrective { 3 } else { 2 };
    if first < earliest_lag {
        return Err(Error::Config(format!(
            "train.first_init must be at least {earliest_lag} so lag files exist, got {first}"
        )));
    }

    let mut samples = Vec::with_capacity(n_inits);
    let mut channel_count = 0;
    for t in first..first + n_inits as i64 {
        let (lags, archive, priors, aux) = assemble_state_inputs(kind, data, t)?;
        let state = rollout::init_state(&rcfg, &lags, archive, &priors, aux)?;
        channel_count = state.channel_count();
        let target_field = match kind {
            ConfigKind::DataDriven => read_grid(files::delta_path(targets, t + 1))?,
            _ => read_grid(files::error_path(targets, t))?,
        };
        let target = zscore(&target_field, &rcfg.norms.residual)?.to_array();
        samples.push(TrainSample { cond: state.stack_array(), target });
    }

    let arch = NetConfig::new(channel_count);
    let net = TinyConvDenoiser::init(arch, cfg.seed())?;
    let mut trainer = Trainer::new(net, cfg.train())?;
    let losses = trainer.run(&samples)?;

    files::ensure_dir(out)?;
    let mut m = RunManifest::new("train", cfg.sha256(), cfg.seed())?;
    m.record_input(data);
    m.record_input(targets);
    let mut curve = String::from("step,loss\n");
    for (i, loss) in losses.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", i + 1, loss));
    }
    emit_text(&mut m, &curve, &out.join("losscurve.csv"))?;

    let meta = Checkpoint {
        arch,
        seed: cfg.seed(),
        kind: Some(kind.as_str().to_string()),
        pairing: Some(pairing.as_str().to_string()),
        train: Some(cfg.train()),
        norms: Some(rcfg.norms),
        param_count: trainer.net().param_count(),
    };
    let ckpt_path = out.join("checkpoint.denz");
    save_checkpoint(trainer.net(), &meta, &ckpt_path)?;
    m.record_output(&ckpt_path);
    if let Some(last) = losses.last() {
        m.note("final_loss", last.to_string());
    }
    m.note("samples", samples.len().to_string());
    m.write(out)?;
    Ok(())
}

enum DenoiserChoice {
    ZeroResidual,
    Checkpoint(PathBuf),
}

impl DenoiserChoice {
    fn parse(raw: &str) -> Self {
        if raw == "zero" {
            DenoiserChoice::ZeroResidual
        } else {
            DenoiserChoice::Checkpoint(PathBuf::from(raw))
        }
    }
}

/// Run an autoregressive forecast from one initialisation time, writing a
/// prediction and the sampled residual for every step.
///
/// `denoiser` is either the literal `zero` (a baseline that adds no
/// correction, so forecast-conditioned kinds reproduce the clamped raw
/// forecast) or a checkpoint path.
pub fn cmd_rollout(
    cfg: &RunConfig,
    data: &Path,
    denoiser: &str,
    norms_file: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let kind = cfg.kind()?;
    let pairing = cfg.pairing()?;
    let init_t = cfg.i64("rollout.init_t");
    let horizon = cfg.usize("horizon");

    let read_norms = |path: Option<&Path>| -> Result<NormSet> {
        let path = path.ok_or_else(|| {
            Error::Config("this denoiser carries no moments, pass --norms".into())
        })?;
        Ok(serde_json::from_str(&files::read_text(path)?)?)
    };

    let (lags, archive, priors, aux) = assemble_state_inputs(kind, data, init_t)?;
    let geom = archive.get(1)?.geom.clone();

    let (denoiser, norms, label): (Box<dyn Denoiser>, NormSet, String) =
        match DenoiserChoice::parse(denoiser) {
            DenoiserChoice::ZeroResidual => {
                let norms = read_norms(norms_file)?;
                let rs = norms.residual;
                let zero_in_z = -rs.mean / rs.std;
                let oracle =
                    OracleDenoiser::constant(geom.ny, geom.nx, zero_in_z, cfg.f64("sigma_data"));
                (Box::new(oracle), norms, "zero".to_string())
            }
            DenoiserChoice::Checkpoint(path) => {
                let (net, meta) = load_checkpoint(&path)?;
                if let Some(k) = &meta.kind {
                    if k != kind.as_str() {
                        return Err(Error::Config(format!(
                            "checkpoint was trained for kind {k}, config says {}",
                            kind.as_str()
                        )));
                    }
                }
                if let Some(p) = &meta.pairing {
                    if p != pairing.as_str() {
                        return Err(Error::Config(format!(
                            "checkpoint expects pairing {p}, config says {}",
                            pairing.as_str()
                        )));
                    }
                }
                let norms = match meta.norms {
                    Some(n) => n,
                    None => read_norms(norms_file)?,
                };
                (Box::new(net), norms, path.display().to_string())
            }
        };

    let rcfg = cfg.rollout(norms)?;
    let mut state = rollout::init_state(&rcfg, &lags, archive, &priors, aux)?;
    let mut rng = rng_stream(cfg.seed(), STREAM_ROLLOUT);
    let preds = rollout::run(&mut state, denoiser.as_ref(), horizon, &mut rng)?;

    files::ensure_dir(out)?;
    let mut m = RunManifest::new("rollout", cfg.sha256(), cfg.seed())?;
    m.record_input(data);
    for (i, pred) in preds.iter().enumerate() {
        emit_grid(&mut m, pred, &files::pred_path(out, init_t, i + 1))?;
    }
    for (i, residual) in state.residuals().iter().enumerate() {
        emit_grid(&mut m, residual, &files::residual_path(out, init_t, i + 1))?;
    }
    m.note("kind", kind.as_str());
    m.note("pairing", pairing.as_str());
    m.note("denoiser", label);
    m.note("init_t", init_t.to_string());
    m.write(out)?;
    Ok(())
}

/// Turn each rollout step's residual into scenario bounds and score their
/// coverage of the verifying truth, binned by observed intensity.
pub fn cmd_uq(cfg: &RunConfig, data: &Path, preds: &Path, out: &Path) -> Result<()> {
    let init_t = cfg.i64("rollout.init_t");
    let horizon = cfg.usize("horizon");
    let tolerance = cfg.f64("uq.tolerance_km");

    let archive = files::load_archive(data, init_t, MAX_LEAD)?;
    let series = files::load_truth_series(data)?;
    let climatology: Vec<&GridField> = series.values().collect();
    let bins = IntensityBins::from_climatology(&climatology)?;

    files::ensure_dir(out)?;
    let mut m = RunManifest::new("uq", cfg.sha256(), cfg.seed())?;
    m.record_input(data);
    m.record_input(preds);
    for k in 1..=horizon {
        let residual = read_grid(files::residual_path(preds, init_t, k))?;
        let bounds = scenarios_from_archive(&archive, k as u8, &residual)?;
        emit_grid(&mut m, &bounds.lower, &out.join(format!("uq_lower_k{k:02}.grd")))?;
        emit_grid(&mut m, &bounds.middle, &out.join(format!("uq_middle_k{k:02}.grd")))?;
        emit_grid(&mut m, &bounds.upper, &out.join(format!("uq_upper_k{k:02}.grd")))?;
        let truth = series.get(&(init_t + k as i64)).ok_or_else(|| {
            Error::MissingData(format!("no verifying truth for t{:03}", init_t + k as i64))
        })?;
        let report = coverage_rate(&bounds, truth, tolerance, &bins)?;
        emit_text(&mut m, &report.to_csv(), &out.join(format!("coverage_k{k:02}.csv")))?;
    }
    m.note("tolerance_km", tolerance.to_string());
    m.write(out)?;
    Ok(())
}

fn nonzero_pair_count(pred: &GridField, truth: &GridField) -> u64 {
    truth
        .iter_valid()
        .filter(|&(i, j, v)| v > 0.0 && !pred.is_missing(i, j))
        .count() as u64
}

/// Score predictions against truth: per-lead rain-pixel MAE, categorical
/// skill and neighborhood skill at the regional climatological threshold,
/// plus a pooled MAE with a bootstrap interval over leads.
pub fn cmd_verify(cfg: &RunConfig, preds: &Path, truth_dir: &Path, out: &Path) -> Result<()> {
    let init_t = cfg.i64("rollout.init_t");
    let horizon = cfg.usize("horizon");
    let region = cfg.str("verify.region").to_string();
    let column = cfg.str("verify.threshold_column");
    let table = cfg.thresholds()?;
    let threshold = table.get(&region, column).ok_or_else(|| {
        Error::Config(format!("threshold table has no entry for {region}/{column}"))
    })?;
    let neighborhoods = cfg.neighborhoods()?;
    let wet_only = cfg.bool("verify.wet_only_categorical");

    let mut units: Vec<(GridField, GridField)> = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let pred = read_grid(files::pred_path(preds, init_t, k))?;
        let truth = read_grid(files::truth_path(truth_dir, init_t + k as i64))?;
        units.push((pred, truth));
    }

    let mut reports = Vec::new();
    let blank = MetricReport {
        metric: String::new(),
        value: 0.0,
        ci_lo: None,
        ci_hi: None,
        month: None,
        region: Some(region.clone()),
        lead_hours: None,
        threshold_mm: None,
        n: 0,
    };
    for (i, (pred, truth)) in units.iter().enumerate() {
        let lead = (i + 1) as u8;
        let month = Some(truth.valid_time.month());
        reports.push(MetricReport {
            metric: "mae_nonzero".into(),
            value: mae_nonzero(pred, truth)?,
            month,
            lead_hours: Some(lead),
            n: nonzero_pair_count(pred, truth),
            ..blank.clone()
        });
        let counts = if wet_only {
            contingency_wet_only(pred, truth, threshold)?
        } else {
            contingency(pred, truth, threshold)?
        };
        for (name, value) in [("pod", counts.pod()), ("csi", counts.csi())] {
            if let Some(value) = value {
                reports.push(MetricReport {
                    metric: name.into(),
                    value,
                    month,
                    lead_hours: Some(lead),
                    threshold_mm: Some(threshold),
                    n: counts.total(),
                    ..blank.clone()
                });
            }
        }
        for &n in &neighborhoods {
            if let Some(value) = fss(pred, truth, threshold, n)? {
                reports.push(MetricReport {
                    metric: format!("fss_n{n:02}"),
                    value,
                    month,
                    lead_hours: Some(lead),
                    threshold_mm: Some(threshold),
                    n: truth.valid_count() as u64,
                    ..blank.clone()
                });
            }
        }
    }

    if let Some(pooled) = mae_nonzero_pooled(&units) {
        let mut report = MetricReport {
            metric: "mae_nonzero_pooled".into(),
            value: pooled,
            n: units.iter().map(|(p, t)| nonzero_pair_count(p, t)).sum(),
            ..blank.clone()
        };
        if units.len() >= 2 {
            let mut rng = rng_stream(cfg.seed(), STREAM_BOOTSTRAP);
            let interval = bootstrap_ci(
                &units,
                |resample: &[&(GridField, GridField)]| {
                    mae_nonzero_pooled(resample.iter().copied())
                },
                &cfg.bootstrap(),
                &mut rng,
            )?;
            report.ci_lo = Some(interval.lo);
            report.ci_hi = Some(interval.hi);
        }
        reports.push(report);
    }

    files::ensure_dir(out)?;
    let mut m = RunManifest::new("verify", cfg.sha256(), cfg.seed())?;
    m.record_input(preds);
    m.record_input(truth_dir);
    emit_text(&mut m, &reports_to_csv(&reports)?, &out.join("verify_report.csv"))?;
    let mut json = serde_json::to_string_pretty(&reports)?;
    json.push('\n');
    emit_text(&mut m, &json, &out.join("verify_report.json"))?;
    m.note("threshold_mm", threshold.to_string());
    m.note("wet_only_categorical", wet_only.to_string());
    m.write(out)?;
    Ok(())
}

/// Copy of `field` with missing pixels replaced by zero, plus the fraction
/// replaced. Spectra need gapless input; the fraction goes in the manifest
/// so heavy gap-filling is visible.
fn fill_missing(field: &GridField) -> (GridField, f64) {
    let mut filled = field.clone();
    let total = filled.values().len();
    let mut gaps = 0usize;
    for v in filled.values_mut() {
        if v.is_nan() {
            *v = 0.0;
            gaps += 1;
        }
    }
    (filled, gaps as f64 / total as f64)
}

/// Compare prediction and truth in the frequency and intensity domains:
/// radial power spectra, Welch cross-coherence and intensity histograms
/// for every lead.
pub fn cmd_spectra(cfg: &RunConfig, preds: &Path, truth_dir: &Path, out: &Path) -> Result<()> {
    let init_t = cfg.i64("rollout.init_t");
    let horizon = cfg.usize("horizon");
    let window = cfg.spectral_window()?;
    let welch = cfg.welch();
    let edges = cfg.histogram_edges()?;

    files::ensure_dir(out)?;
    let mut m = RunManifest::new("spectra", cfg.sha256(), cfg.seed())?;
    m.record_input(preds);
    m.record_input(truth_dir);
    for k in 1..=horizon {
        let pred = read_grid(files::pred_path(preds, init_t, k))?;
        let truth = read_grid(files::truth_path(truth_dir, init_t + k as i64))?;
        let (pred_filled, pred_gap) = fill_missing(&pred);
        let (truth_filled, truth_gap) = fill_missing(&truth);
        m.note(format!("fill_fraction_pred_k{k:02}"), pred_gap.to_string());
        m.note(format!("fill_fraction_truth_k{k:02}"), truth_gap.to_string());

        let (_, pred_radial) = power_spectrum_2d(&pred_filled, window)?;
        let (_, truth_radial) = power_spectrum_2d(&truth_filled, window)?;
        emit_text(&mut m, &pred_radial.to_csv(), &out.join(format!("spectrum_pred_k{k:02}.csv")))?;
        emit_text(&mut m, &truth_radial.to_csv(), &out.join(format!("spectrum_truth_k{k:02}.csv")))?;

        let curve = spectral_coherence(&pred_filled, &truth_filled, &welch)?;
        emit_text(&mut m, &curve.to_csv(), &out.join(format!("coherence_k{k:02}.csv")))?;

        let pred_pdf = intensity_pdf(&pred, &edges)?;
        let truth_pdf = intensity_pdf(&truth, &edges)?;
        emit_text(&mut m, &pred_pdf.to_csv(), &out.join(format!("pdf_pred_k{k:02}.csv")))?;
        emit_text(&mut m, &truth_pdf.to_csv(), &out.join(format!("pdf_truth_k{k:02}.csv")))?;
    }
    m.write(out)?;
    Ok(())
}

fn parse_tile_manifest(text: &str) -> Result<Vec<(String, TileSpec)>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "timestep,row0,col0,size,region,reason,seed" {
        return Err(Error::Format(format!("unexpected tile manifest header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Format(format!("tile manifest row {} has {} columns", i + 2, cols.len())));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Format(format!("tile manifest row {}: bad {what} {s:?}", i + 2)))
        };
        let spec = TileSpec::new(parse(cols[1], "row0")?, parse(cols[2], "col0")?, parse(cols[3], "size")?);
        rows.push((cols[0].to_string(), spec));
    }
    Ok(rows)
}

/// Reassemble tile rasters from one timestep of a tile manifest onto the
/// geometry of a reference grid.
pub fn cmd_mosaic(
    cfg: &RunConfig,
    tiles_csv: &Path,
    tile_dir: &Path,
    like: &Path,
    output: &Path,
    timestep: Option<&str>,
) -> Result<()> {
    let reference = read_grid(like)?;
    let rows = parse_tile_manifest(&files::read_text(tiles_csv)?)?;
    if rows.is_empty() {
        return Err(Error::MissingData("tile manifest lists no tiles".into()));
    }
    let wanted = timestep.unwrap_or(&rows[0].0).to_string();
    let mut loaded: Vec<(TileSpec, GridField)> = Vec::new();
    for (i, (ts, spec)) in rows.iter().enumerate() {
        if *ts == wanted {
            loaded.push((*spec, read_grid(files::tile_path(tile_dir, i))?));
        }
    }
    if loaded.is_empty() {
        return Err(Error::MissingData(format!("no tiles at timestep {wanted}")));
    }
    let refs: Vec<(TileSpec, &GridField)> = loaded.iter().map(|(s, f)| (*s, f)).collect();
    let assembled = mosaic(&reference.geom, &refs)?;

    let dir = out_dir_of(output);
    files::ensure_dir(&dir)?;
    let mut m = RunManifest::new("mosaic", cfg.sha256(), cfg.seed())?;
    m.record_input(tiles_csv);
    m.record_input(tile_dir);
    m.record_input(like);
    emit_grid(&mut m, &assembled, output)?;
    m.note("timestep", wanted);
    m.note("tiles", refs.len().to_string());
    m.write(&dir)?;
    Ok(())
}
