//! Binary checkpoint format. All integers are little-endian.
//!
//! ```text
//! magic      8  b"TNASNNCK"
//! version    u32
//! digest     32 sha-256 of the config snapshot
//! epoch      u64
//! meta       u32 length + UTF-8 JSON (network spec, normalization, ...)
//! entries    u32 count, then per entry:
//!            u32 name length + name, u32 rank + u64 dims,
//!            u8 dtype (0 = f32, 1 = ternary 2-bit), u64 payload length, payload
//! optimizer  u8 present flag, then u64 step, f64 lr, f64 beta1, f64 beta2,
//!            f64 epsilon, u32 count + entries (first and second moments)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::data::Normalization;
use crate::quant::{pack_ternary, unpack_ternary, CompressionState};
use crate::snn::{LayerParams, NetworkSpec, ParamSet};
use crate::training::{OptimizerState, TrainMode};

pub const MAGIC: &[u8; 8] = b"TNASNNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    Ternary2Bit,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::Ternary2Bit => "ternary2bit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Decoded values; ternary entries hold only -1, 0 and +1.
    pub values: Vec<f32>,
}

impl Entry {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Self {
        Self { name: name.into(), shape, dtype: Dtype::F32, values }
    }

    pub fn payload(&self) -> Result<Vec<u8>, ExperimentError> {
        match self.dtype {
            Dtype::F32 => Ok(self.values.iter().flat_map(|v| v.to_le_bytes()).collect()),
            Dtype::Ternary2Bit => pack_ternary(&self.values)
                .map_err(|e| ExperimentError::Format(format!("{}: {e}", self.name))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: NetworkSpec,
    pub normalization: Normalization,
    pub dataset: String,
    pub mode: TrainMode,
    /// Which network of the co-trained group this is (`base`, `twin`, ...).
    pub role: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerBlob {
    pub step_count: u64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
    pub moments: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub digest: [u8; 32],
    pub epoch: u64,
    /// Kept as the exact stored text so reserialization is byte-identical.
    pub meta_json: String,
    pub entries: Vec<Entry>,
    pub optimizer: Option<OptimizerBlob>,
}

impl Checkpoint {
    /// Captures one network. Compressed layers are stored as their deployed
    /// ternary weights; everything else as f32.
    pub fn from_model(
        meta: &CheckpointMeta,
        digest: [u8; 32],
        epoch: u64,
        params: &ParamSet<f32>,
        compression: Option<&CompressionState<f32>>,
        optimizer: Option<&OptimizerState<f32>>,
    ) -> Self {
        let mut entries = Vec::with_capacity(params.layers.len() * 2);
        for (k, layer) in params.layers.iter().enumerate() {
            let deployed = compression.and_then(|c| c.deployed[k].as_ref());
            let ternary = compression.is_some_and(|c| c.policy.mode == crate::quant::QuantMode::Ternary);
            entries.push(match deployed {
                Some(d) => Entry {
                    name: format!("{}.weight", layer.name),
                    shape: layer.weight_shape.clone(),
                    // sign-binarized weights also fit the 2-bit code
                    dtype: if ternary || d.iter().all(|v| v.abs() == 1.0) { Dtype::Ternary2Bit } else { Dtype::F32 },
                    values: d.clone(),
                },
                None => Entry::f32(format!("{}.weight", layer.name), layer.weight_shape.clone(), layer.weight.clone()),
            });
            entries.push(Entry::f32(format!("{}.bias", layer.name), vec![layer.bias.len()], layer.bias.clone()));
        }
        let optimizer = optimizer.map(|o| OptimizerBlob {
            step_count: o.step_count,
            lr: o.lr,
            betas: o.betas,
            epsilon: o.epsilon,
            moments: params
                .layers
                .iter()
                .enumerate()
                .flat_map(|(k, l)| {
                    let (mw, mb) = &o.first_moment[k];
                    let (vw, vb) = &o.second_moment[k];
                    [
                        Entry::f32(format!("{}.weight.m", l.name), l.weight_shape.clone(), mw.clone()),
                        Entry::f32(format!("{}.bias.m", l.name), vec![mb.len()], mb.clone()),
                        Entry::f32(format!("{}.weight.v", l.name), l.weight_shape.clone(), vw.clone()),
                        Entry::f32(format!("{}.bias.v", l.name), vec![vb.len()], vb.clone()),
                    ]
                })
                .collect(),
        });
        Self {
            version: FORMAT_VERSION,
            digest,
            epoch,
            meta_json: serde_json::to_string(meta).expect("meta serializes"),
            entries,
            optimizer,
        }
    }

    pub fn meta(&self) -> Result<CheckpointMeta, ExperimentError> {
        serde_json::from_str(&self.meta_json).map_err(|e| ExperimentError::Format(format!("checkpoint metadata: {e}")))
    }

    /// Rebuilds the parameter set and checks it against the stored spec.
    pub fn params(&self) -> Result<ParamSet<f32>, ExperimentError> {
        let spec = self.meta()?.spec;
        if !self.entries.len().is_multiple_of(2) {
            return Err(ExperimentError::Format("weight/bias entries are not paired".into()));
        }
        let layers = self
            .entries
            .chunks(2)
            .enumerate()
            .map(|(k, pair)| {
                let name = format!("layer{k}");
                if pair[0].name != format!("{name}.weight") || pair[1].name != format!("{name}.bias") {
                    return Err(ExperimentError::Format(format!(
                        "expected {name}.weight/{name}.bias, found {}/{}",
                        pair[0].name, pair[1].name
                    )));
                }
                Ok(LayerParams {
                    name,
                    weight_shape: pair[0].shape.clone(),
                    weight: pair[0].values.clone(),
                    bias: pair[1].values.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let params = ParamSet { layers };
        params
            .check_against(&spec)
            .map_err(|e| ExperimentError::Format(format!("checkpoint does not match its architecture: {e}")))?;
        Ok(params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ExperimentError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_bytes(&mut out, self.meta_json.as_bytes());
        put_entries(&mut out, &self.entries)?;
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step_count.to_le_bytes());
                for v in [o.lr, o.betas.0, o.betas.1, o.epsilon] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                put_entries(&mut out, &o.moments)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExperimentError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ExperimentError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ExperimentError::Format(format!(
                "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let digest = r.take(32)?.try_into().expect("32 bytes");
        let epoch = r.u64()?;
        let meta_len = r.u32()? as usize;
        let meta_json = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| ExperimentError::Format("metadata is not UTF-8".into()))?;
        let entries = r.entries()?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => Some(OptimizerBlob {
                step_count: r.u64()?,
                lr: r.f64()?,
                betas: (r.f64()?, r.f64()?),
                epsilon: r.f64()?,
                moments: r.entries()?,
            }),
            other => return Err(ExperimentError::Format(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(ExperimentError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { version, digest, epoch, meta_json, entries, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| ExperimentError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let bytes = std::fs::read(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            ExperimentError::Format(msg) => ExperimentError::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn put_entries(out: &mut Vec<u8>, entries: &[Entry]) -> Result<(), ExperimentError> {
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        put_bytes(out, e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(match e.dtype {
            Dtype::F32 => 0,
            Dtype::Ternary2Bit => 1,
        });
        let payload = e.payload()?;
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ExperimentError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ExperimentError::Format(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ExperimentError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ExperimentError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ExperimentError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ExperimentError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn entries(&mut self) -> Result<Vec<Entry>, ExperimentError> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = self.u32()? as usize;
            let name = String::from_utf8(self.take(name_len)?.to_vec())
                .map_err(|_| ExperimentError::Format("entry name is not UTF-8".into()))?;
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| Ok(self.u64()? as usize)).collect::<Result<Vec<_>, ExperimentError>>()?;
            let len: usize = shape.iter().product();
            let dtype = match self.u8()? {
                0 => Dtype::F32,
                1 => Dtype::Ternary2Bit,
                other => return Err(ExperimentError::Format(format!("{name}: unknown dtype tag {other}"))),
            };
            let payload_len = self.u64()? as usize;
            let expected = match dtype {
                Dtype::F32 => len * 4,
                Dtype::Ternary2Bit => len.div_ceil(4),
            };
            if payload_len != expected {
                return Err(ExperimentError::Format(format!(
                    "{name}: payload of {payload_len} bytes, shape {shape:?} as {} needs {expected}",
                    dtype.as_str()
                )));
            }
            let payload = self.take(payload_len)?;
            let values = match dtype {
                Dtype::F32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
                Dtype::Ternary2Bit => unpack_ternary(payload, len).map_err(|e| ExperimentError::Format(format!("{name}: {e}")))?,
            };
            out.push(Entry { name, shape, dtype, values });
        }
        Ok(out)
    }
}
