//! The split-query network: 3D-CNN encoder, learnable positional encoding,
//! transformer decoder over `N_a` action queries plus one view query, action
//! pooling and the two linear heads.

pub mod decoder;
pub mod encoder;
pub mod ops;
pub mod params;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::synthdata::{ClipDims, VideoClip};
use decoder::{Decoder, DecoderCache, DecoderLayer};
use encoder::{groups_for, AvgPool, Block, Conv3d, Encoder, EncoderCache, GroupNorm, Volume};
use ops::{Attention, LayerNorm, Linear};
use params::{ParamLayout, ParamSpec, Slot};

/// Architecture hyperparameters (independent of the dataset).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub d_model: usize,
    pub num_action_queries: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub temporal_downsample: usize,
    pub encoder_channels: Vec<usize>,
    pub ffn_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            num_action_queries: 4,
            decoder_layers: 2,
            attention_heads: 4,
            temporal_downsample: 4,
            encoder_channels: vec![8, 16, 32],
            ffn_dim: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchConfig,
    pub input: ClipDims,
    pub num_actions: usize,
    pub num_views: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if a.d_model == 0 {
            return Err(Error::config("model.d_model", "must be ≥ 1"));
        }
        if a.attention_heads == 0 || !a.d_model.is_multiple_of(a.attention_heads) {
            return Err(Error::config(
                "model.attention_heads",
                format!(
                    "d_model {} is not divisible by {} heads",
                    a.d_model, a.attention_heads
                ),
            ));
        }
        if a.num_action_queries == 0 {
            return Err(Error::config("model.num_action_queries", "must be ≥ 1"));
        }
        if a.num_action_queries + 1 > a.d_model {
            return Err(Error::config(
                "model.num_action_queries",
                format!(
                    "N_a+1 = {} orthonormal queries do not fit in D = {}",
                    a.num_action_queries + 1,
                    a.d_model
                ),
            ));
        }
        if a.decoder_layers == 0 {
            return Err(Error::config("model.decoder_layers", "must be ≥ 1"));
        }
        if a.encoder_channels.is_empty() || a.encoder_channels.contains(&0) {
            return Err(Error::config(
                "model.encoder_channels",
                "need at least one block, all widths ≥ 1",
            ));
        }
        if a.ffn_dim == 0 {
            return Err(Error::config("model.ffn_dim", "must be ≥ 1"));
        }
        let st = a.temporal_downsample;
        if st == 0 || !self.input.frames.is_multiple_of(st) {
            return Err(Error::config(
                "model.temporal_downsample",
                format!("T = {} is not divisible by s_t = {st}", self.input.frames),
            ));
        }
        let i = self.input;
        if i.frames == 0 || i.channels == 0 || i.height == 0 || i.width == 0 {
            return Err(Error::config("data.frames", format!("empty clip dims {i}")));
        }
        if self.num_actions == 0 {
            return Err(Error::config("data.num_actions", "must be ≥ 1"));
        }
        if self.num_views == 0 {
            return Err(Error::config("data.num_views", "must be ≥ 1"));
        }
        Ok(())
    }

    /// Number of encoder tokens, `T / s_t`.
    pub fn tokens(&self) -> usize {
        self.input.frames / self.arch.temporal_downsample
    }

    /// Per-block temporal pooling factors whose product is `s_t`.
    fn temporal_pools(&self) -> Vec<usize> {
        let n = self.arch.encoder_channels.len();
        let mut rest = self.arch.temporal_downsample;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i + 1 == n {
                out.push(rest);
            } else if rest.is_multiple_of(2) {
                out.push(2);
                rest /= 2;
            } else {
                out.push(1);
            }
        }
        out
    }
}

/// `Q_a` (`N_a × D`) and the optional `Q_v` (`1 × D`), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBank {
    pub dim: usize,
    pub action: Vec<f32>,
    pub view: Option<Vec<f32>>,
}

impl QueryBank {
    pub fn num_action(&self) -> usize {
        self.action.len() / self.dim
    }

    /// All rows stacked: action rows, then the view row if present.
    pub fn stacked(&self) -> Vec<f32> {
        let mut rows = self.action.clone();
        if let Some(v) = &self.view {
            rows.extend_from_slice(v);
        }
        rows
    }

    /// Gram matrix of the stacked rows, in f64.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let rows = self.stacked();
        let n = rows.len() / self.dim;
        let row = |i: usize| &rows[i * self.dim..(i + 1) * self.dim];
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        row(i)
                            .iter()
                            .zip(row(j))
                            .map(|(a, b)| *a as f64 * *b as f64)
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Encoder tokens and the learnable positional table, both `T_s × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub tokens: Vec<f32>,
    pub positional: Vec<f32>,
    pub dim: usize,
}

impl EncoderOutput {
    /// Decoder memory: tokens plus positional encoding.
    pub fn memory(&self) -> Vec<f32> {
        self.tokens
            .iter()
            .zip(&self.positional)
            .map(|(t, p)| t + p)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    /// Refined action features `F`, `N_a × D`.
    pub action_features: Vec<f32>,
    pub view_feature: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub action_features: Vec<f32>,
    pub f_a: Vec<f32>,
    pub f_v: Option<Vec<f32>>,
    pub p_a: Vec<f32>,
    pub p_v: Option<Vec<f32>>,
}

impl FeatureBundle {
    pub fn action_prediction(&self) -> usize {
        argmax(&self.p_a)
    }

    pub fn view_prediction(&self) -> Option<usize> {
        self.p_v.as_deref().map(argmax)
    }

    pub fn view_feature(&self) -> Result<&[f32]> {
        self.f_v
            .as_deref()
            .ok_or_else(|| Error::Invalid("model has no view branch".into()))
    }

    pub fn view_logits(&self) -> Result<&[f32]> {
        self.p_v
            .as_deref()
            .ok_or_else(|| Error::Invalid("model has no view branch".into()))
    }

    pub fn is_finite(&self) -> bool {
        let opt = |v: &Option<Vec<f32>>| v.iter().flatten().all(|x| x.is_finite());
        self.action_features.iter().all(|x| x.is_finite())
            && self.f_a.iter().all(|x| x.is_finite())
            && self.p_a.iter().all(|x| x.is_finite())
            && opt(&self.f_v)
            && opt(&self.p_v)
    }
}

pub fn argmax(xs: &[f32]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Upstream gradients for one forward pass. Empty vectors mean zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BundleGrad {
    pub f_a: Vec<f32>,
    pub f_v: Vec<f32>,
    pub p_a: Vec<f32>,
    pub p_v: Vec<f32>,
}

/// Row mean of `F` (`rows × dim`).
pub fn pool_action(features: &[f32], dim: usize) -> Vec<f32> {
    let rows = features.len() / dim;
    let mut out = vec![0f32; dim];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&features[r * dim..(r + 1) * dim]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= rows as f32);
    out
}

pub struct ForwardCache {
    encoder: EncoderCache,
    memory_len: usize,
    decoder: DecoderCache,
    f_a: Vec<f32>,
    f_v: Option<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct SplitNet {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<f32>,
    encoder: Encoder,
    decoder: Decoder,
    action_queries: Slot,
    view_queries: Option<Slot>,
    action_head: Linear,
    view_head: Option<Linear>,
}

struct Builder {
    layout: ParamLayout,
}

impl Builder {
    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        Linear {
            weight: self.layout.add(format!("{name}.weight"), &[out, inp]),
            bias: self.layout.add(format!("{name}.bias"), &[out]),
            inp,
            out,
        }
    }

    fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: self.layout.add(format!("{name}.gamma"), &[dim]),
            beta: self.layout.add(format!("{name}.beta"), &[dim]),
            dim,
        }
    }

    fn attention(&mut self, name: &str, dim: usize, heads: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), dim, dim),
            k: self.linear(&format!("{name}.k"), dim, dim),
            v: self.linear(&format!("{name}.v"), dim, dim),
            o: self.linear(&format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }
}

impl SplitNet {
    fn build(config: &ModelConfig, with_view: bool) -> Result<Self> {
        config.validate()?;
        let arch = &config.arch;
        let d = arch.d_model;
        let mut b = Builder {
            layout: ParamLayout::default(),
        };

        let mut blocks = Vec::new();
        let mut vol = Volume {
            c: config.input.channels,
            t: config.input.frames,
            h: config.input.height,
            w: config.input.width,
        };
        for (i, (&cout, tp)) in arch
            .encoder_channels
            .iter()
            .zip(config.temporal_pools())
            .enumerate()
        {
            let conv = Conv3d {
                weight: b.layout.add(
                    format!("encoder.block{i}.conv.weight"),
                    &[cout, vol.c, 3, 3, 3],
                ),
                bias: b.layout.add(format!("encoder.block{i}.conv.bias"), &[cout]),
                cin: vol.c,
                cout,
                stride: if i == 0 { 2 } else { 1 },
            };
            let norm = GroupNorm {
                gamma: b
                    .layout
                    .add(format!("encoder.block{i}.norm.gamma"), &[cout]),
                beta: b.layout.add(format!("encoder.block{i}.norm.beta"), &[cout]),
                channels: cout,
                groups: groups_for(cout),
            };
            let cv = conv.out_volume(vol);
            let pool = AvgPool {
                t: tp,
                h: if cv.h >= 2 { 2 } else { 1 },
                w: if cv.w >= 2 { 2 } else { 1 },
            };
            vol = pool.out_volume(cv);
            blocks.push(Block { conv, norm, pool });
        }
        let last_c = *arch.encoder_channels.last().unwrap();
        let proj = b.linear("encoder.proj", last_c, d);
        let tokens = config.tokens();
        debug_assert_eq!(vol.t, tokens);
        let positional = b.layout.add("encoder.positional", &[tokens, d]);
        let encoder = Encoder {
            blocks,
            proj,
            positional,
            tokens,
            dim: d,
        };

        let na = arch.num_action_queries;
        let action_queries = b.layout.add("queries.action", &[na, d]);
        let view_queries = with_view.then(|| b.layout.add("queries.view", &[1, d]));
        let layers = (0..arch.decoder_layers)
            .map(|l| {
                let n = format!("decoder.layer{l}");
                DecoderLayer {
                    self_attn: b.attention(&format!("{n}.self_attn"), d, arch.attention_heads),
                    norm1: b.layer_norm(&format!("{n}.norm1"), d),
                    cross_attn: b.attention(&format!("{n}.cross_attn"), d, arch.attention_heads),
                    norm2: b.layer_norm(&format!("{n}.norm2"), d),
                    ffn_in: b.linear(&format!("{n}.ffn_in"), d, arch.ffn_dim),
                    ffn_out: b.linear(&format!("{n}.ffn_out"), arch.ffn_dim, d),
                    norm3: b.layer_norm(&format!("{n}.norm3"), d),
                }
            })
            .collect();
        let decoder = Decoder { layers, dim: d };
        let action_head = b.linear("head.action", d, config.num_actions);
        let view_head = with_view.then(|| b.linear("head.view", d, config.num_views));

        let params = vec![0f32; b.layout.len()];
        Ok(SplitNet {
            config: config.clone(),
            layout: b.layout,
            params,
            encoder,
            decoder,
            action_queries,
            view_queries,
            action_head,
            view_head,
        })
    }

    /// Seeded initialization: orthonormal query bank, fan-in scaled weights,
    /// zero biases, unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::build(config, true)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.arch.d_model;
        let specs = model.layout.specs().to_vec();
        for spec in &specs {
            let slot = spec.slot();
            let name = spec.name.as_str();
            let values = slot.of_mut(&mut model.params);
            if name.ends_with(".bias") || name.ends_with(".beta") {
                values.fill(0.0);
            } else if name.ends_with(".gamma") {
                values.fill(1.0);
            } else if name == "encoder.positional" {
                fill_normal(values, 0.02, &mut rng);
            } else if name.starts_with("queries.") {
                // filled jointly below
            } else {
                let fan_in: usize = spec.shape[1..].iter().product();
                let std = if name.contains(".conv.") {
                    (2.0 / fan_in as f64).sqrt()
                } else {
                    (1.0 / fan_in as f64).sqrt()
                };
                fill_normal(values, std, &mut rng);
            }
        }
        let na = config.arch.num_action_queries;
        let bank = orthonormal_rows(na + 1, d, &mut rng);
        model
            .action_queries
            .of_mut(&mut model.params)
            .copy_from_slice(&bank[..na * d]);
        if let Some(v) = model.view_queries {
            v.of_mut(&mut model.params).copy_from_slice(&bank[na * d..]);
        }
        Ok(model)
    }

    /// Rebuilds a model from named tensors. The view branch is present iff
    /// `queries.view` is among the entries.
    pub fn from_named(
        config: &ModelConfig,
        named: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<Self> {
        let with_view = named.contains_key("queries.view");
        let mut model = Self::build(config, with_view)?;
        for spec in model.layout.specs().to_vec() {
            let (shape, data) = named
                .get(&spec.name)
                .ok_or_else(|| Error::Shape(format!("parameter {} missing", spec.name)))?;
            if *shape != spec.shape || data.len() != spec.len() {
                return Err(Error::Shape(format!(
                    "parameter {}: expected shape {:?}, found {:?}",
                    spec.name, spec.shape, shape
                )));
            }
            spec.slot().of_mut(&mut model.params).copy_from_slice(data);
        }
        let expected: usize = model.layout.specs().len();
        if named.len() != expected {
            let extra = named
                .keys()
                .find(|k| model.layout.find(k).is_none())
                .cloned()
                .unwrap_or_default();
            return Err(Error::Shape(format!("unexpected parameter {extra}")));
        }
        Ok(model)
    }

    pub fn named_params(&self) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        self.layout
            .specs()
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    (s.shape.clone(), s.slot().of(&self.params).to_vec()),
                )
            })
            .collect()
    }

    /// Copy of the model with `Q_v` and `L_v` removed.
    pub fn without_view_branch(&self) -> Result<Self> {
        let mut named = self.named_params();
        named.retain(|k, _| k != "queries.view" && !k.starts_with("head.view."));
        Self::from_named(&self.config, &named)
    }

    pub fn has_view_branch(&self) -> bool {
        self.view_queries.is_some()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        self.layout.specs()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn action_query_slot(&self) -> Slot {
        self.action_queries
    }

    pub fn query_bank(&self) -> QueryBank {
        QueryBank {
            dim: self.config.arch.d_model,
            action: self.action_queries.of(&self.params).to_vec(),
            view: self.view_queries.map(|s| s.of(&self.params).to_vec()),
        }
    }

    fn check_dims(&self, clip: &VideoClip) -> Result<()> {
        if clip.dims != self.config.input || clip.frames.len() != clip.dims.len() {
            return Err(Error::Shape(format!(
                "clip {}: expected dims {} (T×C×H×W), got {}",
                clip.clip_id, self.config.input, clip.dims
            )));
        }
        Ok(())
    }

    /// `(T, C, H, W)` frames to the encoder's `(C, T, H, W)` layout.
    fn to_channel_major(clip: &VideoClip) -> (Vec<f32>, Volume) {
        let d = clip.dims;
        let plane = d.height * d.width;
        let mut out = vec![0f32; d.len()];
        for t in 0..d.frames {
            for c in 0..d.channels {
                let src = (t * d.channels + c) * plane;
                let dst = (c * d.frames + t) * plane;
                out[dst..dst + plane].copy_from_slice(&clip.frames[src..src + plane]);
            }
        }
        let vol = Volume {
            c: d.channels,
            t: d.frames,
            h: d.height,
            w: d.width,
        };
        (out, vol)
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<EncoderOutput> {
        self.check_dims(clip)?;
        let (input, vol) = Self::to_channel_major(clip);
        let (tokens, _) = self.encoder.forward(&self.params, &input, vol);
        Ok(EncoderOutput {
            tokens,
            positional: self.encoder.positional.of(&self.params).to_vec(),
            dim: self.config.arch.d_model,
        })
    }

    pub fn decode(&self, enc: &EncoderOutput, queries: &QueryBank) -> Result<DecoderOutput> {
        let d = self.config.arch.d_model;
        if enc.dim != d
            || enc.tokens.len() != enc.positional.len()
            || enc.tokens.is_empty()
            || !enc.tokens.len().is_multiple_of(d)
        {
            return Err(Error::Shape(format!(
                "encoder output with {} tokens / {} positional values does not fit D = {d}",
                enc.tokens.len(),
                enc.positional.len()
            )));
        }
        if queries.dim != d || queries.action.len() != self.config.arch.num_action_queries * d {
            return Err(Error::Shape(format!(
                "query bank has {} action values of width {}, expected {}×{d}",
                queries.action.len(),
                queries.dim,
                self.config.arch.num_action_queries
            )));
        }
        let memory = enc.memory();
        Ok(self.decode_memory(&queries.stacked(), &memory).0)
    }

    fn decode_memory(&self, stacked: &[f32], memory: &[f32]) -> (DecoderOutput, DecoderCache) {
        let d = self.config.arch.d_model;
        let na = self.config.arch.num_action_queries;
        let (out, cache) = self.decoder.forward(&self.params, stacked, na, memory);
        let view_feature = (out.len() > na * d).then(|| out[na * d..].to_vec());
        let mut action = out;
        action.truncate(na * d);
        (
            DecoderOutput {
                action_features: action,
                view_feature,
            },
            cache,
        )
    }

    /// Applies `L_a` and (when present) `L_v`.
    pub fn heads(&self, f_a: &[f32], f_v: Option<&[f32]>) -> (Vec<f32>, Option<Vec<f32>>) {
        let p_a = self.action_head.forward(&self.params, f_a, 1);
        let p_v = match (f_v, self.view_head) {
            (Some(f), Some(h)) => Some(h.forward(&self.params, f, 1)),
            _ => None,
        };
        (p_a, p_v)
    }

    pub fn forward(&self, clip: &VideoClip) -> Result<FeatureBundle> {
        Ok(self.forward_cached(clip)?.0)
    }

    pub fn forward_batch(&self, clips: &[&VideoClip], exec: Exec) -> Result<Vec<FeatureBundle>> {
        exec.try_map(clips, |c| self.forward(c))
    }

    pub fn forward_cached(&self, clip: &VideoClip) -> Result<(FeatureBundle, ForwardCache)> {
        self.check_dims(clip)?;
        let d = self.config.arch.d_model;
        let (input, vol) = Self::to_channel_major(clip);
        let (mut memory, enc_cache) = self.encoder.forward(&self.params, &input, vol);
        self.encoder.add_positional(&self.params, &mut memory);
        let bank = self.query_bank().stacked();
        let (out, dec_cache) = self.decode_memory(&bank, &memory);
        let f_a = pool_action(&out.action_features, d);
        let (p_a, p_v) = self.heads(&f_a, out.view_feature.as_deref());
        let bundle = FeatureBundle {
            action_features: out.action_features,
            f_a: f_a.clone(),
            f_v: out.view_feature.clone(),
            p_a,
            p_v,
        };
        let cache = ForwardCache {
            encoder: enc_cache,
            memory_len: memory.len(),
            decoder: dec_cache,
            f_a,
            f_v: out.view_feature,
        };
        Ok((bundle, cache))
    }

    /// Accumulates parameter gradients for one cached forward into `g`.
    pub fn backward(&self, cache: &ForwardCache, grad: &BundleGrad, g: &mut [f32]) {
        let p = &self.params;
        let d = self.config.arch.d_model;
        let na = self.config.arch.num_action_queries;
        let mut d_fa = if grad.f_a.is_empty() {
            vec![0f32; d]
        } else {
            grad.f_a.clone()
        };
        if !grad.p_a.is_empty() {
            let dx = self.action_head.backward(p, g, &cache.f_a, &grad.p_a, 1);
            ops::add_assign(&mut d_fa, &dx);
        }
        let rows = na + usize::from(self.view_queries.is_some());
        let mut d_out = vec![0f32; rows * d];
        for r in 0..na {
            for (o, v) in d_out[r * d..(r + 1) * d].iter_mut().zip(&d_fa) {
                *o = v / na as f32;
            }
        }
        if let (Some(f_v), Some(head)) = (&cache.f_v, self.view_head) {
            let row = &mut d_out[na * d..];
            if !grad.f_v.is_empty() {
                row.copy_from_slice(&grad.f_v);
            }
            if !grad.p_v.is_empty() {
                let dx = head.backward(p, g, f_v, &grad.p_v, 1);
                ops::add_assign(row, &dx);
            }
        }
        let (dq, dmem) = self
            .decoder
            .backward(p, g, &cache.decoder, &d_out, cache.memory_len);
        ops::add_assign(self.action_queries.of_mut(g), &dq[..na * d]);
        if let Some(v) = self.view_queries {
            ops::add_assign(v.of_mut(g), &dq[na * d..]);
        }
        ops::add_assign(self.encoder.positional.of_mut(g), &dmem);
        self.encoder.backward(p, g, &cache.encoder, &dmem);
    }
}

fn fill_normal(values: &mut [f32], std: f64, rng: &mut ChaCha8Rng) {
    for v in values.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = (z * std) as f32;
    }
}

/// `n` orthonormal rows in `R^dim` from a seeded Gaussian matrix via
/// Gram–Schmidt QR with one re-orthogonalization pass, computed in f64.
pub fn orthonormal_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    assert!(n <= dim, "{n} orthonormal rows do not fit in R^{dim}");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &rows {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    rows.into_iter().flatten().map(|x| x as f32).collect()
}
