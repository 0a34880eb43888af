//! Checkpoint files: one JSON header line, then the named parameter blocks
//! as consecutive little-endian `f64` values.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, CtmNetwork, CtmParams};
use crate::schedule::ScheduleConfig;
use crate::{CtmError, Result};

pub const FORMAT: &str = "ctm-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub architecture: Architecture,
    pub schedule: ScheduleConfig,
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: String,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blocks: Vec<Vec<f64>>,
}

impl Checkpoint {
    /// Student weights, frequencies and the EMA copy; extra blocks (e.g. a
    /// discriminator) may be appended with [`Checkpoint::push_block`].
    pub fn from_model(
        net: &CtmNetwork,
        schedule: &ScheduleConfig,
        params: &CtmParams,
        ema: &CtmParams,
        iteration: u64,
        seed: u64,
        config_hash: &str,
    ) -> Self {
        let mut ck = Self {
            header: CheckpointHeader {
                format: FORMAT.into(),
                version: VERSION,
                dim: net.dim(),
                architecture: *net.architecture(),
                schedule: *schedule,
                iteration,
                seed,
                config_hash: config_hash.into(),
                blocks: Vec::new(),
            },
            blocks: Vec::new(),
        };
        ck.push_block("params", params.weights.clone());
        ck.push_block("frequencies", params.frequencies.clone());
        ck.push_block("ema", ema.weights.clone());
        ck.push_block("ema_frequencies", ema.frequencies.clone());
        ck
    }

    pub fn push_block(&mut self, name: &str, values: Vec<f64>) {
        self.header.blocks.push(BlockInfo {
            name: name.into(),
            len: values.len(),
        });
        self.blocks.push(values);
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.header
            .blocks
            .iter()
            .position(|b| b.name == name)
            .map(|i| self.blocks[i].as_slice())
    }

    fn required(&self, name: &str) -> Result<&[f64]> {
        self.block(name)
            .ok_or_else(|| CtmError::Schema(format!("checkpoint lacks block '{name}'")))
    }

    /// Rebuilds the network and returns `(net, params, ema)`.
    pub fn to_model(&self) -> Result<(CtmNetwork, CtmParams, CtmParams)> {
        let net = CtmNetwork::new(self.header.dim, self.header.architecture, &self.header.schedule)
            .map_err(|e| CtmError::Schema(format!("checkpoint architecture invalid: {e}")))?;
        let params = CtmParams {
            weights: self.required("params")?.to_vec(),
            frequencies: self.required("frequencies")?.to_vec(),
        };
        let ema = CtmParams {
            weights: self.required("ema")?.to_vec(),
            frequencies: self.required("ema_frequencies")?.to_vec(),
        };
        for p in [&params, &ema] {
            if p.weights.len() != net.n_params() || p.frequencies.len() != net.architecture().n_frequencies {
                return Err(CtmError::Schema(format!(
                    "checkpoint holds {} weights / {} frequencies, architecture needs {} / {}",
                    p.weights.len(),
                    p.frequencies.len(),
                    net.n_params(),
                    net.architecture().n_frequencies
                )));
            }
        }
        Ok((net, params, ema))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        for v in self.blocks.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| CtmError::Schema("checkpoint header line missing".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| CtmError::Schema(format!("bad checkpoint header: {e}")))?;
        if header.format != FORMAT {
            return Err(CtmError::Schema(format!("unknown checkpoint format '{}'", header.format)));
        }
        if header.version != VERSION {
            return Err(CtmError::Schema(format!(
                "checkpoint version {} unsupported (expected {VERSION})",
                header.version
            )));
        }
        let payload = &bytes[nl + 1..];
        let total: usize = header.blocks.iter().map(|b| b.len).sum();
        if payload.len() != total * 8 {
            return Err(CtmError::Schema(format!(
                "checkpoint payload has {} bytes, header declares {}",
                payload.len(),
                total * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let blocks = header
            .blocks
            .iter()
            .map(|b| values.by_ref().take(b.len).collect())
            .collect();
        Ok(Self { header, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
