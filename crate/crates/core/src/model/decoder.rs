//! Post-norm transformer decoder over the query bank.
//!
//! Each layer runs masked self-attention among the queries, cross-attention
//! onto the encoder memory and a ReLU feed-forward, each followed by a residual
//! add and layer norm. Action queries only see other action queries in
//! self-attention; the view query sees everything. The action rows are
//! therefore independent of the view query, which makes the view branch
//! removable at inference time without changing action predictions.

use super::ops::{
    add_assign, relu_backward_inplace, relu_inplace, Attention, AttentionCache, LayerNorm,
    LayerNormCache, Linear,
};

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_attn: Attention,
    pub norm2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm3: LayerNorm,
}

pub struct LayerCache {
    sa: AttentionCache,
    n1: LayerNormCache,
    ca: AttentionCache,
    n2: LayerNormCache,
    x2: Vec<f32>,
    hidden: Vec<f32>,
    n3: LayerNormCache,
}

/// Self-attention key limits: action rows see the first `num_action` rows only.
pub fn self_attention_limits(rows: usize, num_action: usize) -> Vec<usize> {
    (0..rows)
        .map(|i| if i < num_action { num_action } else { rows })
        .collect()
}

impl DecoderLayer {
    pub fn forward(
        &self,
        p: &[f32],
        x: &[f32],
        memory: &[f32],
        self_limits: &[usize],
        cross_limits: &[usize],
    ) -> (Vec<f32>, LayerCache) {
        let rows = self_limits.len();
        let (mut h, sa) = self.self_attn.forward(p, x, x, self_limits);
        add_assign(&mut h, x);
        let (x1, n1) = self.norm1.forward(p, &h);
        let (mut h, ca) = self.cross_attn.forward(p, &x1, memory, cross_limits);
        add_assign(&mut h, &x1);
        let (x2, n2) = self.norm2.forward(p, &h);
        let mut hidden = self.ffn_in.forward(p, &x2, rows);
        relu_inplace(&mut hidden);
        let mut h = self.ffn_out.forward(p, &hidden, rows);
        add_assign(&mut h, &x2);
        let (y, n3) = self.norm3.forward(p, &h);
        let cache = LayerCache {
            sa,
            n1,
            ca,
            n2,
            x2,
            hidden,
            n3,
        };
        (y, cache)
    }

    /// Returns `(dx, dmemory)`.
    pub fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        c: &LayerCache,
        dy: &[f32],
        self_limits: &[usize],
        cross_limits: &[usize],
    ) -> (Vec<f32>, Vec<f32>) {
        let rows = self_limits.len();
        let dh = self.norm3.backward(p, g, &c.n3, dy);
        let mut dhidden = self.ffn_out.backward(p, g, &c.hidden, &dh, rows);
        relu_backward_inplace(&c.hidden, &mut dhidden);
        let mut dx2 = self.ffn_in.backward(p, g, &c.x2, &dhidden, rows);
        add_assign(&mut dx2, &dh);
        let dh = self.norm2.backward(p, g, &c.n2, &dx2);
        let (mut dx1, dmem) = self.cross_attn.backward(p, g, &c.ca, &dh, cross_limits);
        add_assign(&mut dx1, &dh);
        let dh = self.norm1.backward(p, g, &c.n1, &dx1);
        let (mut dx, dkv) = self.self_attn.backward(p, g, &c.sa, &dh, self_limits);
        add_assign(&mut dx, &dkv);
        add_assign(&mut dx, &dh);
        (dx, dmem)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub dim: usize,
}

pub struct DecoderCache {
    layers: Vec<LayerCache>,
    self_limits: Vec<usize>,
    cross_limits: Vec<usize>,
}

impl Decoder {
    /// `queries` holds the action rows followed by an optional view row.
    pub fn forward(
        &self,
        p: &[f32],
        queries: &[f32],
        num_action: usize,
        memory: &[f32],
    ) -> (Vec<f32>, DecoderCache) {
        let rows = queries.len() / self.dim;
        let tokens = memory.len() / self.dim;
        let self_limits = self_attention_limits(rows, num_action);
        let cross_limits = vec![tokens; rows];
        let mut x = queries.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(p, &x, memory, &self_limits, &cross_limits);
            caches.push(c);
            x = y;
        }
        (
            x,
            DecoderCache {
                layers: caches,
                self_limits,
                cross_limits,
            },
        )
    }

    /// Returns `(dqueries, dmemory)`.
    pub fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        c: &DecoderCache,
        dy: &[f32],
        memory_len: usize,
    ) -> (Vec<f32>, Vec<f32>) {
        let mut dx = dy.to_vec();
        let mut dmem = vec![0f32; memory_len];
        for (layer, cache) in self.layers.iter().zip(&c.layers).rev() {
            let (d, dm) = layer.backward(p, g, cache, &dx, &c.self_limits, &c.cross_limits);
            add_assign(&mut dmem, &dm);
            dx = d;
        }
        (dx, dmem)
    }
}
