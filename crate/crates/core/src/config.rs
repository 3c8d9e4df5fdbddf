//! Run configuration: one JSON object with flat dotted keys
//! (`"train.epochs": 5`) overlaid on the defaults. Unknown keys are rejected
//! by name.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::losses::ContrastiveConfig;
use crate::model::{ArchConfig, ModelConfig};
use crate::splits::{make_split, Protocol, Split};
use crate::synthdata::{ClipDims, DatasetManifest, SynthConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub protocol: Protocol,
    /// Held-out subjects or views; `None` holds out the last quarter (at least one).
    pub held_out: Option<Vec<usize>>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            protocol: Protocol::CrossSubject,
            held_out: None,
        }
    }
}

impl SplitSpec {
    pub fn held_out_for(&self, manifest: &DatasetManifest) -> Vec<usize> {
        if let Some(h) = &self.held_out {
            return h.clone();
        }
        let n = match self.protocol {
            Protocol::CrossSubject => manifest.meta.num_subjects,
            Protocol::CrossView => manifest.meta.num_views,
        };
        let k = n.div_ceil(4).max(1);
        (n.saturating_sub(k)..n).collect()
    }

    pub fn make(&self, manifest: &DatasetManifest) -> Result<Split> {
        make_split(manifest, self.protocol, &self.held_out_for(manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub model: ArchConfig,
    pub train: TrainConfig,
    pub loss: ContrastiveConfig,
    pub split: SplitSpec,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        let Value::Object(map) = value else {
            return Err(Error::config(
                "<root>",
                "config file must hold a JSON object",
            ));
        };
        Self::from_flat(&map)
    }

    /// Overlays `map` (dotted keys) onto the defaults.
    pub fn from_flat(map: &Map<String, Value>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v.clone())?;
        }
        Ok(cfg)
    }

    /// Sets one dotted key. Unknown keys and ill-typed values name the key.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let mut root = serde_json::to_value(&*self).expect("RunConfig serializes");
        let mut node = &mut root;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::config(key, "unknown config key"))?;
        }
        *node = value;
        *self = serde_json::from_value(root).map_err(|e| Error::config(key, e.to_string()))?;
        Ok(())
    }

    /// Like [`RunConfig::set`] with a command-line string; non-JSON text is
    /// taken as a JSON string.
    pub fn set_str(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key, value)
    }

    /// Flat dotted view of the whole config, as written to `config.json`.
    pub fn to_flat(&self) -> Map<String, Value> {
        fn walk(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
            match v {
                Value::Object(o) if !o.is_empty() => {
                    for (k, child) in o {
                        let key = if prefix.is_empty() {
                            k.clone()
                        } else {
                            format!("{prefix}.{k}")
                        };
                        walk(&key, child, out);
                    }
                }
                _ => {
                    out.insert(prefix.to_string(), v.clone());
                }
            }
        }
        let mut out = Map::new();
        walk(
            "",
            &serde_json::to_value(self).expect("RunConfig serializes"),
            &mut out,
        );
        out
    }

    pub fn model_config_for(
        &self,
        dims: ClipDims,
        num_actions: usize,
        num_views: usize,
    ) -> ModelConfig {
        ModelConfig {
            arch: self.model.clone(),
            input: dims,
            num_actions,
            num_views,
        }
    }

    /// Model config matching the synthetic data section.
    pub fn model_config(&self) -> ModelConfig {
        self.model_config_for(self.data.dims(), self.data.num_actions, self.data.num_views)
    }

    /// Model config matching an on-disk dataset.
    pub fn model_config_for_manifest(&self, manifest: &DatasetManifest) -> ModelConfig {
        let m = &manifest.meta;
        let frames = manifest
            .records
            .first()
            .map_or(self.data.frames, |r| r.frames);
        let dims = ClipDims {
            frames,
            channels: m.channels,
            height: m.height,
            width: m.width,
        };
        self.model_config_for(dims, m.num_actions, m.num_views)
    }

    /// Validates every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model_config().validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if let Some(h) = &self.split.held_out {
            if h.is_empty() {
                return Err(Error::config("split.held_out", "must not be empty"));
            }
        }
        Ok(())
    }
}
