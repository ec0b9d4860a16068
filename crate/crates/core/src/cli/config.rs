//! Run configuration: a plain `key = value` file checked against a fixed
//! schema. Unknown or duplicate keys and unparsable values are rejected at
//! load time, so commands can read settings without re-validating.

use crate::edm::{ScheduleConfig, TrainConfig};
use crate::error::{io_err, Error, Result};
use crate::loss::LossConfig;
use crate::rollout::{ConfigKind, DualPairing, RolloutConfig};
use crate::sampler::SamplingCriteria;
use crate::spectral::{SpectralWindow, WelchConfig};
use crate::synthworld::WorldConfig;
use crate::verify::{BootstrapConfig, ThresholdTable};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValKind {
    U64,
    I64,
    Usize,
    F64,
    Bool,
    Str,
}

struct KeySpec {
    key: &'static str,
    kind: ValKind,
    default: &'static str,
}

const fn spec(key: &'static str, kind: ValKind, default: &'static str) -> KeySpec {
    KeySpec { key, kind, default }
}

const SCHEMA: &[KeySpec] = &[
    spec("seed", ValKind::U64, "0"),
    spec("kind", ValKind::Str, "hrrr_corrective"),
    spec("pairing", ValKind::Str, "same_lead_dual"),
    spec("sigma_data", ValKind::F64, "1.0"),
    spec("horizon", ValKind::Usize, "12"),
    spec("world.ny", ValKind::Usize, "256"),
    spec("world.nx", ValKind::Usize, "256"),
    spec("world.dy_km", ValKind::F64, "1.0"),
    spec("world.dx_km", ValKind::F64, "1.0"),
    spec("world.blobs", ValKind::Usize, "6"),
    spec("world.amp_lo", ValKind::F64, "2.0"),
    spec("world.amp_hi", ValKind::F64, "12.0"),
    spec("world.radius_lo", ValKind::F64, "8.0"),
    spec("world.radius_hi", ValKind::F64, "24.0"),
    spec("world.vy", ValKind::F64, "9.0"),
    spec("world.vx", ValKind::F64, "12.0"),
    spec("world.lag", ValKind::F64, "1.0"),
    spec("world.bias", ValKind::F64, "0.9"),
    spec("world.smooth", ValKind::F64, "4.0"),
    spec("world.growth", ValKind::F64, "0.15"),
    spec("world.hours", ValKind::Usize, "24"),
    spec("rollout.init_t", ValKind::I64, "5"),
    spec("schedule.sigma_min", ValKind::F64, "0.002"),
    spec("schedule.sigma_max", ValKind::F64, "80.0"),
    spec("schedule.rho", ValKind::F64, "7.0"),
    spec("schedule.steps", ValKind::Usize, "18"),
    spec("loss.alpha", ValKind::F64, "0.8"),
    spec("loss.eps", ValKind::F64, "1e-6"),
    spec("train.steps", ValKind::Usize, "200"),
    spec("train.batch", ValKind::Usize, "2"),
    spec("train.lr", ValKind::F64, "1e-3"),
    spec("train.p_mean", ValKind::F64, "-1.2"),
    spec("train.p_std", ValKind::F64, "1.2"),
    spec("train.first_init", ValKind::I64, "5"),
    spec("train.n_inits", ValKind::Usize, "8"),
    spec("tile.size_km", ValKind::F64, "512.0"),
    spec("sample.min_coverage", ValKind::F64, "0.25"),
    spec("sample.min_spacing_km", ValKind::F64, "30.0"),
    spec("sample.max_candidates", ValKind::Usize, "50"),
    spec("sample.max_retained", ValKind::Usize, "20"),
    spec("sample.cap", ValKind::Usize, "120"),
    spec("uq.tolerance_km", ValKind::F64, "10.0"),
    spec("verify.neighborhoods", ValKind::Str, "5,27"),
    spec("verify.threshold_column", ValKind::Str, "p50"),
    spec("verify.region", ValKind::Str, "CONUS"),
    spec("verify.thresholds_file", ValKind::Str, ""),
    spec("verify.wet_only_categorical", ValKind::Bool, "false"),
    spec("bootstrap.n", ValKind::Usize, "1000"),
    spec("bootstrap.level", ValKind::F64, "0.95"),
    spec("spectra.segment_px", ValKind::Usize, "32"),
    spec("spectra.window", ValKind::Str, "none"),
    spec("spectra.detrend", ValKind::Bool, "true"),
    spec("spectra.mag_squared", ValKind::Bool, "false"),
    spec("spectra.edges", ValKind::Str, "0.1,0.5,1,2.5,5,10,25,60"),
    spec("regrid.ny", ValKind::Usize, "0"),
    spec("regrid.nx", ValKind::Usize, "0"),
];

fn key_spec(key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.key == key)
}

fn check_value(spec: &KeySpec, value: &str) -> Result<()> {
    let ok = match spec.kind {
        ValKind::U64 => value.parse::<u64>().is_ok(),
        ValKind::I64 => value.parse::<i64>().is_ok(),
        ValKind::Usize => value.parse::<usize>().is_ok(),
        ValKind::F64 => value.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false),
        ValKind::Bool => matches!(value, "true" | "false"),
        ValKind::Str => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "key {} expects a {:?} value, got {value:?}",
            spec.key, spec.kind
        )))
    }
}

/// A validated run configuration. Every schema key has an effective value
/// (explicit or default) and the hash covers the resolved settings, so two
/// files meaning the same run hash identically.
#[derive(Debug, Clone)]
pub struct RunConfig {
    raw: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig { raw: BTreeMap::new() }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim().to_string();
            let spec = key_spec(key)
                .ok_or_else(|| Error::Config(format!("line {}: unknown key {key:?}", lineno + 1)))?;
            check_value(spec, &value)?;
            if raw.insert(key.to_string(), value).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
        }
        Ok(RunConfig { raw })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        RunConfig::from_text(&text)
    }

    fn value(&self, key: &str) -> &str {
        let spec = key_spec(key).unwrap_or_else(|| panic!("key {key} missing from schema"));
        self.raw.get(key).map(String::as_str).unwrap_or(spec.default)
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.value(key).parse().expect("validated at load")
    }

    pub fn i64(&self, key: &str) -> i64 {
        self.value(key).parse().expect("validated at load")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.value(key).parse().expect("validated at load")
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.value(key).parse().expect("validated at load")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.value(key) == "true"
    }

    pub fn str(&self, key: &str) -> &str {
        self.value(key)
    }

    /// Hex digest of the resolved configuration (every schema key with its
    /// effective value, in schema order).
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        for spec in SCHEMA {
            hasher.update(spec.key.as_bytes());
            hasher.update(b"=");
            hasher.update(self.value(spec.key).as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed")
    }

    pub fn kind(&self) -> Result<ConfigKind> {
        self.str("kind").parse()
    }

    pub fn pairing(&self) -> Result<DualPairing> {
        self.str("pairing").parse()
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            ny: self.usize("world.ny"),
            nx: self.usize("world.nx"),
            dy_km: self.f64("world.dy_km"),
            dx_km: self.f64("world.dx_km"),
            blobs: self.usize("world.blobs"),
            amp_range_mm: (self.f64("world.amp_lo"), self.f64("world.amp_hi")),
            radius_range_km: (self.f64("world.radius_lo"), self.f64("world.radius_hi")),
            velocity_kmh: (self.f64("world.vy"), self.f64("world.vx")),
            lag_hours: self.f64("world.lag"),
            bias: self.f64("world.bias"),
            smooth_km: self.f64("world.smooth"),
            lead_growth: self.f64("world.growth"),
            seed: self.seed(),
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            sigma_min: self.f64("schedule.sigma_min"),
            sigma_max: self.f64("schedule.sigma_max"),
            rho: self.f64("schedule.rho"),
            steps: self.usize("schedule.steps"),
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.f64("loss.alpha"),
            epsilon: self.f64("loss.eps"),
            ..LossConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.f64("train.lr"),
            p_mean: self.f64("train.p_mean"),
            p_std: self.f64("train.p_std"),
            sigma_data: self.f64("sigma_data"),
            steps: self.usize("train.steps"),
            batch: self.usize("train.batch"),
            seed: self.seed(),
            loss: self.loss(),
            ..TrainConfig::default()
        }
    }

    pub fn rollout(&self, norms: crate::grid::NormSet) -> Result<RolloutConfig> {
        Ok(RolloutConfig {
            kind: self.kind()?,
            pairing: self.pairing()?,
            schedule: self.schedule(),
            sigma_data: self.f64("sigma_data"),
            norms,
        })
    }

    pub fn criteria<'a>(&self, ari: &'a crate::grid::GridField) -> SamplingCriteria<'a> {
        SamplingCriteria {
            min_coverage_fraction: self.f64("sample.min_coverage"),
            ari_map: ari,
            min_spacing_km: self.f64("sample.min_spacing_km"),
            max_candidates_per_timestep: self.usize("sample.max_candidates"),
            max_retained_per_timestep: self.usize("sample.max_retained"),
            tile_size_km: self.f64("tile.size_km"),
        }
    }

    pub fn welch(&self) -> WelchConfig {
        WelchConfig {
            segment_px: self.usize("spectra.segment_px"),
            detrend_mean: self.bool("spectra.detrend"),
            magnitude_squared: self.bool("spectra.mag_squared"),
        }
    }

    pub fn spectral_window(&self) -> Result<SpectralWindow> {
        match self.str("spectra.window") {
            "none" => Ok(SpectralWindow::None),
            "hann" => Ok(SpectralWindow::Hann),
            other => Err(Error::Config(format!(
                "spectra.window must be none or hann, got {other:?}"
            ))),
        }
    }

    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig { n_boot: self.usize("bootstrap.n"), level: self.f64("bootstrap.level") }
    }

    pub fn thresholds(&self) -> Result<ThresholdTable> {
        let path = self.str("verify.thresholds_file");
        if path.is_empty() {
            return Ok(ThresholdTable::builtin());
        }
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        ThresholdTable::from_csv(&text)
    }

    pub fn neighborhoods(&self) -> Result<Vec<usize>> {
        parse_list(self.str("verify.neighborhoods"), "verify.neighborhoods")
    }

    pub fn histogram_edges(&self) -> Result<Vec<f64>> {
        parse_list(self.str("spectra.edges"), "spectra.edges")
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, key: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Error::Config(format!("key {key}: bad list entry {part:?}")))
        })
        .collect()
}
