//! Trained-network checkpoint format.
//!
//! Same envelope as the raster format: magic `DENZ`, a u32 version, a u32
//! header length, a JSON header, then the flattened parameters as
//! little-endian binary32 in network order. The header carries the
//! architecture, the initialisation seed, the full training configuration,
//! the standardisation moments and the conditioning layout name, so a
//! checkpoint is everything needed to reproduce a prediction run.

use crate::edm::{NetConfig, TinyConvDenoiser, TrainConfig};
use crate::error::{io_err, Error, Result};
use crate::grid::NormSet;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"DENZ";

/// Everything a checkpoint stores besides the parameter payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: NetConfig,
    pub seed: u64,
    /// Conditioning layout the network was trained for.
    pub kind: Option<String>,
    /// Forecast pairing policy used during rollout, when applicable.
    pub pairing: Option<String>,
    pub train: Option<TrainConfig>,
    pub norms: Option<NormSet>,
    pub param_count: usize,
}

pub fn encode_checkpoint(net: &TinyConvDenoiser, meta: &Checkpoint) -> Result<Vec<u8>> {
    if meta.arch != *net.config() {
        return Err(Error::Shape("checkpoint metadata disagrees with network config".into()));
    }
    if meta.param_count != net.param_count() {
        return Err(Error::Shape(format!(
            "metadata says {} parameters, network has {}",
            meta.param_count,
            net.param_count()
        )));
    }
    let hjson = serde_json::to_vec(meta)?;
    let params = net.params_flat();
    let mut out = Vec::with_capacity(12 + hjson.len() + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    for p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(TinyConvDenoiser, Checkpoint)> {
    if bytes.len() < 12 {
        return Err(Error::Format("file shorter than fixed preamble".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12usize
        .checked_add(hlen)
        .ok_or_else(|| Error::Format("header length overflows".into()))?;
    if bytes.len() < hend {
        return Err(Error::Format("truncated header".into()));
    }
    let meta: Checkpoint = serde_json::from_slice(&bytes[12..hend])
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let mut net = TinyConvDenoiser::init(meta.arch, meta.seed)?;
    let n = net.param_count();
    if meta.param_count != n {
        return Err(Error::Format(format!(
            "header claims {} parameters, architecture implies {n}",
            meta.param_count
        )));
    }
    if bytes.len() != hend + 4 * n {
        return Err(Error::Format(format!(
            "payload holds {} parameter bytes, need {}",
            bytes.len() - hend,
            4 * n
        )));
    }
    let mut params = Vec::with_capacity(n);
    for k in 0..n {
        let off = hend + 4 * k;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite parameter at index {k}")));
        }
        params.push(v as f64);
    }
    net.set_params_flat(&params)?;
    Ok((net, meta))
}

pub fn save_checkpoint(
    net: &TinyConvDenoiser,
    meta: &Checkpoint,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(net, meta)?).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TinyConvDenoiser, Checkpoint)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
