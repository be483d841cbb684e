//! Binary checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "FARM" version
//! repeated until end of file:
//!     name_len name_bytes rank dim_0 .. dim_{rank-1} payload (f64 LE, Π dims values)
//! ```
//!
//! Metadata travels as rank-0 tensors named `meta.*`.

use std::path::Path;

use thiserror::Error;
use tracenorm_core::rnn::NamedTensor;
use tracenorm_core::train::{RegConfig, RegMode};
use tracenorm_core::{Network, SharingScheme};

pub const MAGIC: &[u8; 4] = b"FARM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Training state stored next to the tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    /// Learning rate of the last completed epoch.
    pub lr: f64,
    pub reg: RegConfig,
    pub sharing: SharingScheme,
}

const MODES: [RegMode; 3] = [RegMode::TraceNorm, RegMode::L2, RegMode::None];
const SCHEMES: [SharingScheme; 3] =
    [SharingScheme::CompletelyJoint, SharingScheme::PartiallyJoint, SharingScheme::CompletelySplit];

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt(format!("truncated {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut tensors = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: dimensions overflow")))?;
        let payload = r.take(count.saturating_mul(8), "payload")?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    Ok(tensors)
}

fn meta_tensors(meta: &CheckpointMeta) -> Vec<NamedTensor> {
    let code = |i: usize| i as f64;
    vec![
        NamedTensor::scalar("meta.epoch".into(), meta.epoch as f64),
        NamedTensor::scalar("meta.lr".into(), meta.lr),
        NamedTensor::scalar("meta.mode".into(), code(MODES.iter().position(|m| *m == meta.reg.mode).expect("known"))),
        NamedTensor::scalar("meta.lambda_rec".into(), meta.reg.lambda_rec),
        NamedTensor::scalar("meta.lambda_nonrec".into(), meta.reg.lambda_nonrec),
        NamedTensor::scalar("meta.sharing".into(), code(SCHEMES.iter().position(|s| *s == meta.sharing).expect("known"))),
    ]
}

fn read_meta(tensors: &[NamedTensor]) -> Result<CheckpointMeta, CheckpointError> {
    let get = |name: &str| -> Result<f64, CheckpointError> {
        tensors
            .iter()
            .find(|t| t.name == name && t.dims.is_empty())
            .map(|t| t.data[0])
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing {name}")))
    };
    let pick = |name: &str, n: usize| -> Result<usize, CheckpointError> {
        let v = get(name)?;
        if v.fract() != 0.0 || v < 0.0 || v as usize >= n {
            return Err(CheckpointError::Corrupt(format!("bad {name} code {v}")));
        }
        Ok(v as usize)
    };
    Ok(CheckpointMeta {
        epoch: pick("meta.epoch", usize::MAX)?,
        lr: get("meta.lr")?,
        reg: RegConfig {
            mode: MODES[pick("meta.mode", MODES.len())?],
            lambda_rec: get("meta.lambda_rec")?,
            lambda_nonrec: get("meta.lambda_nonrec")?,
        },
        sharing: SCHEMES[pick("meta.sharing", SCHEMES.len())?],
    })
}

pub fn to_bytes(net: &Network, meta: &CheckpointMeta) -> Vec<u8> {
    let mut tensors = meta_tensors(meta);
    tensors.extend(net.named_tensors());
    encode(&tensors)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Network, CheckpointMeta), CheckpointError> {
    let tensors = decode(bytes)?;
    let meta = read_meta(&tensors)?;
    let net = Network::from_named_tensors(meta.sharing, &tensors)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok((net, meta))
}

pub fn save_checkpoint(path: &Path, net: &Network, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(net, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta), CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}
