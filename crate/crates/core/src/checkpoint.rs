//! Binary checkpoint format.
//!
//! ```text
//! b"VSCKPT\0\n"            8 bytes
//! version                  u32 LE
//! header length            u64 LE
//! header                   UTF-8 JSON (configs, counters, tensor index)
//! payload                  f32 LE, tensors back to back in index order
//! sha256                   32 bytes over everything above
//! ```
//!
//! Model tensors use their parameter names; optimizer moments are stored as
//! `optim.m/<name>` and `optim.v/<name>`. The file contains no timestamps or
//! paths, so equal states serialize to equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::ContrastiveConfig;
use crate::model::{ModelConfig, SplitNet};
use crate::optim::{OptimState, OptimizerKind};
use crate::trainer::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"VSCKPT\0\n";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Element offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: ContrastiveConfig,
    pub step: u64,
    pub epoch: usize,
    pub batch_cursor: usize,
    pub seed: u64,
    pub best_metric: Option<f64>,
    pub optimizer: OptimizerKind,
    pub optimizer_t: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let model = &state.model;
    let mut tensors = Vec::new();
    let mut payload: Vec<f32> = Vec::with_capacity(model.num_params() * 3);
    let mut push = |name: String, shape: &[usize], data: &[f32]| {
        tensors.push(TensorEntry {
            name,
            dtype: "f32".into(),
            shape: shape.to_vec(),
            offset: payload.len(),
        });
        payload.extend_from_slice(data);
    };
    for spec in model.param_specs() {
        push(
            spec.name.clone(),
            &spec.shape,
            spec.slot().of(model.params()),
        );
    }
    let moments = [("optim.m/", &state.optim.m), ("optim.v/", &state.optim.v)];
    for (prefix, buf) in moments {
        if buf.is_empty() {
            continue;
        }
        for spec in model.param_specs() {
            push(
                format!("{prefix}{}", spec.name),
                &spec.shape,
                spec.slot().of(buf),
            );
        }
    }
    let header = Header {
        model: model.config().clone(),
        train: state.train.clone(),
        loss: state.loss.clone(),
        step: state.step,
        epoch: state.epoch,
        batch_cursor: state.batch_cursor,
        seed: state.seed,
        best_metric: state.best_metric,
        optimizer: state.optim.kind,
        optimizer_t: state.optim.t,
        tensors,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + header.len() + payload.len() * 4 + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes atomically (temp file + rename), so an interrupted save never
/// clobbers the previous checkpoint.
pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Checks magic, checksum and version, and returns the header with the raw payload.
pub fn parse(bytes: &[u8]) -> Result<(Header, Vec<f32>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
        return Err(Error::Checkpoint(
            "checksum mismatch: file is truncated".into(),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint(
            "checksum mismatch: file is corrupt or truncated".into(),
        ));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &body[20..];
    if hlen > rest.len() || !(rest.len() - hlen).is_multiple_of(4) {
        return Err(Error::Checkpoint(
            "header length disagrees with file size".into(),
        ));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let payload: Vec<f32> = rest[hlen..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    for t in &header.tensors {
        let len: usize = t.shape.iter().product();
        if t.dtype != "f32" || t.offset + len > payload.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} does not fit the payload",
                t.name
            )));
        }
    }
    Ok((header, payload))
}

pub fn read_header(path: &Path) -> Result<Header> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(&bytes)?.0)
}

fn tensor_map(
    header: &Header,
    payload: &[f32],
    prefix: &str,
) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
    header
        .tensors
        .iter()
        .filter_map(|t| {
            let name = if prefix.is_empty() {
                (!t.name.starts_with("optim.")).then_some(t.name.as_str())?
            } else {
                t.name.strip_prefix(prefix)?
            };
            let len: usize = t.shape.iter().product();
            Some((
                name.to_string(),
                (t.shape.clone(), payload[t.offset..t.offset + len].to_vec()),
            ))
        })
        .collect()
}

fn moments(
    model: &SplitNet,
    named: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    which: &str,
) -> Result<Vec<f32>> {
    let mut buf = vec![0f32; model.num_params()];
    for spec in model.param_specs() {
        let (shape, data) = named.get(&spec.name).ok_or_else(|| {
            Error::Checkpoint(format!("optimizer {which} state for {} missing", spec.name))
        })?;
        if *shape != spec.shape {
            return Err(Error::Shape(format!(
                "optimizer {which} state for {}: expected {:?}, found {:?}",
                spec.name, spec.shape, shape
            )));
        }
        spec.slot().of_mut(&mut buf).copy_from_slice(data);
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let (header, payload) = parse(bytes)?;
    let model = SplitNet::from_named(&header.model, &tensor_map(&header, &payload, ""))?;
    let m = moments(&model, &tensor_map(&header, &payload, "optim.m/"), "m")?;
    let v = match header.optimizer {
        OptimizerKind::AdamFamily => {
            moments(&model, &tensor_map(&header, &payload, "optim.v/"), "v")?
        }
        OptimizerKind::SgdMomentum => Vec::new(),
    };
    Ok(TrainState {
        model,
        optim: OptimState {
            kind: header.optimizer,
            t: header.optimizer_t,
            m,
            v,
        },
        step: header.step,
        epoch: header.epoch,
        batch_cursor: header.batch_cursor,
        seed: header.seed,
        best_metric: header.best_metric,
        train: header.train,
        loss: header.loss,
    })
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint that must match `expected`; a mismatch names the first
/// parameter whose shape differs.
pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, _) = parse(&bytes)?;
    if header.model != *expected {
        expected.validate()?;
        let reference = SplitNet::init(expected, 0)?;
        let found: BTreeMap<&str, &TensorEntry> = header
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t))
            .collect();
        for spec in reference.param_specs() {
            match found.get(spec.name.as_str()) {
                Some(t) if t.shape == spec.shape => {}
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "parameter {}: checkpoint has {:?}, model expects {:?}",
                        spec.name, t.shape, spec.shape
                    )))
                }
                None => {
                    return Err(Error::Shape(format!(
                        "parameter {} missing from checkpoint",
                        spec.name
                    )))
                }
            }
        }
        let input = (header.model.input, expected.input);
        if input.0 != input.1 {
            return Err(Error::Shape(format!(
                "checkpoint input dims {} differ from expected {}",
                input.0, input.1
            )));
        }
        return Err(Error::Shape(
            "checkpoint model config differs from the expected one".into(),
        ));
    }
    decode(&bytes)
}

/// Model only, with the view branch intact.
pub fn load_model(path: &Path) -> Result<SplitNet> {
    Ok(load(path)?.model)
}
