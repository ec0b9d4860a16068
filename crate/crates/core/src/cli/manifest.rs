//! Provenance record written next to every command's outputs.

use crate::edm::CHECKPOINT_FORMAT_VERSION;
use crate::error::{io_err, Error, Result};
use crate::grid::GRID_FORMAT_VERSION;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// What a command ran with and what it produced. Serialised as
/// `<command>_manifest.json` in the output directory. Deliberately free of
/// wall-clock fields so reruns of the same inputs are byte-identical.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub crate_version: String,
    pub grid_format_version: u32,
    pub checkpoint_format_version: u32,
    pub threads: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub extras: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: String, seed: u64) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config_sha256,
            seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            grid_format_version: GRID_FORMAT_VERSION,
            checkpoint_format_version: CHECKPOINT_FORMAT_VERSION,
            threads: requested_threads()?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            extras: BTreeMap::new(),
        })
    }

    pub fn record_input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.extras.insert(key.into(), value.into());
    }

    /// Write the manifest into `dir`; the manifest file itself is not
    /// listed among the outputs.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}_manifest.json", self.command));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

/// Worker-count request from the environment. The pipeline currently runs
/// single threaded; the value is validated and recorded so runs capture
/// what was asked for.
pub fn requested_threads() -> Result<usize> {
    match std::env::var("RESCAST_THREADS") {
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!(
                "RESCAST_THREADS must be a positive integer, got {raw:?}"
            ))),
        },
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(Error::Config(format!("RESCAST_THREADS: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_json_is_stable_and_complete() {
        let mut m = RunManifest::new("synth", "ab".repeat(32), 7).unwrap();
        m.record_input(Path::new("in/config.txt"));
        m.record_output(Path::new("out/truth_t000.grd"));
        m.note("fill_fraction", "0.25");
        let dir = tempfile::tempdir().unwrap();
        let path = m.write(dir.path()).unwrap();
        assert_eq!(path.file_name().unwrap(), "synth_manifest.json");
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["command"], "synth");
        assert_eq!(v["seed"], 7);
        assert_eq!(v["outputs"][0], "out/truth_t000.grd");
        assert_eq!(v["extras"]["fill_fraction"], "0.25");
        assert!(v.get("timestamp").is_none());
        let again = m.write(dir.path()).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}
