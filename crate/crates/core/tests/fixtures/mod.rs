//! Small on-disk datasets and matching model configs for integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use viewsplit::model::{ArchConfig, ModelConfig};
use viewsplit::splits::{make_split, Protocol, Split};
use viewsplit::synthdata::{
    generate_dataset, ClipSource, DatasetManifest, ManifestRecord, SynthConfig, VideoClip,
};

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        num_actions: 3,
        num_views: 2,
        num_subjects: 4,
        clips_per_combination: 1,
        frames: 4,
        channels: 3,
        height: 8,
        width: 8,
        ..SynthConfig::default()
    }
}

pub fn tiny_model(synth: &SynthConfig) -> ModelConfig {
    ModelConfig {
        arch: ArchConfig {
            d_model: 8,
            num_action_queries: 2,
            decoder_layers: 1,
            attention_heads: 2,
            temporal_downsample: 2,
            encoder_channels: vec![4, 4],
            ffn_dim: 16,
        },
        input: synth.dims(),
        num_actions: synth.num_actions,
        num_views: synth.num_views,
    }
}

/// Generates the tiny dataset and its cross-subject split (last subject held out).
pub fn tiny_dataset(dir: &Path) -> (DatasetManifest, Split) {
    let synth = tiny_synth();
    let m = generate_dataset(&synth, dir).unwrap();
    let split = make_split(&m, Protocol::CrossSubject, &[synth.num_subjects - 1]).unwrap();
    (m, split)
}

/// Records every clip id it is asked to load.
pub struct LoggingSource<'a> {
    pub inner: &'a DatasetManifest,
    pub seen: Mutex<BTreeSet<String>>,
}

impl<'a> LoggingSource<'a> {
    pub fn new(inner: &'a DatasetManifest) -> Self {
        Self {
            inner,
            seen: Mutex::new(BTreeSet::new()),
        }
    }
}

impl ClipSource for LoggingSource<'_> {
    fn load(&self, record: &ManifestRecord) -> viewsplit::Result<VideoClip> {
        self.seen.lock().unwrap().insert(record.clip_id.clone());
        self.inner.load_clip(record)
    }
}

/// Replaces the frames of one clip with NaN.
pub struct PoisonedSource<'a> {
    pub inner: &'a DatasetManifest,
    pub clip_id: String,
}

impl ClipSource for PoisonedSource<'_> {
    fn load(&self, record: &ManifestRecord) -> viewsplit::Result<VideoClip> {
        let mut c = self.inner.load_clip(record)?;
        if c.clip_id == self.clip_id {
            c.frames.fill(f32::NAN);
        }
        Ok(c)
    }
}
