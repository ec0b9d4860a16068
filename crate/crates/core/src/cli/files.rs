//! Dataset file naming and discovery.
//!
//! Grids on disk are indexed by integer timestep (hours since the start of
//! the synthetic record) rather than by formatted time, which keeps names
//! sortable and parseable without a clock convention.

use crate::error::{io_err, Error, Result};
use crate::grid::{read_grid, GridField};
use crate::rollout::HrrrArchive;
use crate::synthworld::world_time;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub fn truth_path(dir: &Path, t: i64) -> PathBuf {
    dir.join(format!("truth_t{t:03}.grd"))
}

pub fn hrrr_path(dir: &Path, t: i64, lead: u8) -> PathBuf {
    dir.join(format!("hrrr_t{t:03}_f{lead:02}.grd"))
}

pub fn delta_path(dir: &Path, t_valid: i64) -> PathBuf {
    dir.join(format!("delta_t{t_valid:03}.grd"))
}

pub fn error_path(dir: &Path, t_init: i64) -> PathBuf {
    dir.join(format!("error_t{t_init:03}_f01.grd"))
}

pub fn pred_path(dir: &Path, t_init: i64, k: usize) -> PathBuf {
    dir.join(format!("pred_t{t_init:03}_k{k:02}.grd"))
}

pub fn residual_path(dir: &Path, t_init: i64, k: usize) -> PathBuf {
    dir.join(format!("residual_t{t_init:03}_k{k:02}.grd"))
}

pub fn tile_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("tile_{i:04}.grd"))
}

/// All `truth_t*.grd` files in `dir`, keyed by timestep index and loaded
/// in index order.
pub fn load_truth_series(dir: &Path) -> Result<BTreeMap<i64, GridField>> {
    let mut out = BTreeMap::new();
    for t in truth_indices(dir)? {
        out.insert(t, read_grid(truth_path(dir, t))?);
    }
    Ok(out)
}

/// Timestep indices for which a truth grid exists, ascending.
pub fn truth_indices(dir: &Path) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(t) = parse_indexed(&name, "truth_t", ".grd") {
            out.push(t);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Forecast cycle initialisation indices present in `dir` (a cycle counts
/// if its lead-0 or lead-1 file exists), ascending.
pub fn archive_indices(dir: &Path) -> Result<Vec<i64>> {
    let mut seen = std::collections::BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        for suffix in ["_f00.grd", "_f01.grd"] {
            if let Some(t) = parse_indexed(&name, "hrrr_t", suffix) {
                seen.insert(t);
            }
        }
    }
    Ok(seen.into_iter().collect())
}

/// Load the forecast cycle initialised at timestep `t`, taking every lead
/// present on disk up to `max_lead`.
pub fn load_archive(dir: &Path, t: i64, max_lead: u8) -> Result<HrrrArchive> {
    let mut archive = HrrrArchive::new(world_time(t));
    let mut found = false;
    for lead in 0..=max_lead {
        let path = hrrr_path(dir, t, lead);
        if path.exists() {
            archive.insert(lead, read_grid(path)?)?;
            found = true;
        }
    }
    if !found {
        return Err(Error::MissingData(format!("no forecast files for cycle t{t:03} in {}", dir.display())));
    }
    Ok(archive)
}

fn parse_indexed(name: &str, prefix: &str, suffix: &str) -> Option<i64> {
    let stem = name.strip_prefix(prefix)?.strip_suffix(suffix)?;
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}
