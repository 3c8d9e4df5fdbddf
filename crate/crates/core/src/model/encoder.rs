//! Spatio-temporal 3D-CNN encoder producing `T_s` tokens of width `D`.
//!
//! Activations are `(C, T, H, W)` row-major. Each block is
//! conv3d(3×3×3, pad 1) → group norm → ReLU → average pool; the first block's
//! convolution has spatial stride 2. A global spatial mean and a linear
//! projection turn the last block into one token per remaining time step.

use super::ops::{add_assign, gemm, relu_backward_inplace, relu_inplace, Linear, NORM_EPS};
use super::params::Slot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Volume {
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Volume {
    pub fn len(&self) -> usize {
        self.c * self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn spatial(&self) -> usize {
        self.t * self.h * self.w
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv3d {
    pub weight: Slot,
    pub bias: Slot,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

const KT: usize = 3;
const KH: usize = 3;
const KW: usize = 3;

impl Conv3d {
    pub fn out_volume(&self, x: Volume) -> Volume {
        Volume {
            c: self.cout,
            t: x.t,
            h: (x.h - 1) / self.stride + 1,
            w: (x.w - 1) / self.stride + 1,
        }
    }

    fn kernel_len(&self) -> usize {
        self.cin * KT * KH * KW
    }

    /// Visits `(col_index, input_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, x: Volume, y: Volume, mut f: impl FnMut(usize, usize)) {
        let n = y.spatial();
        let s = self.stride;
        for ci in 0..self.cin {
            for kt in 0..KT {
                for kh in 0..KH {
                    for kw in 0..KW {
                        let row = ((ci * KT + kt) * KH + kh) * KW + kw;
                        for to in 0..y.t {
                            let ti = to as isize + kt as isize - 1;
                            if ti < 0 || ti >= x.t as isize {
                                continue;
                            }
                            for ho in 0..y.h {
                                let hi = (ho * s + kh) as isize - 1;
                                if hi < 0 || hi >= x.h as isize {
                                    continue;
                                }
                                let in_base = ((ci * x.t + ti as usize) * x.h + hi as usize) * x.w;
                                let col_base = row * n + (to * y.h + ho) * y.w;
                                for wo in 0..y.w {
                                    let wi = (wo * s + kw) as isize - 1;
                                    if wi < 0 || wi >= x.w as isize {
                                        continue;
                                    }
                                    f(col_base + wo, in_base + wi as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f32], x: Volume, y: Volume) -> Vec<f32> {
        let mut col = vec![0f32; self.kernel_len() * y.spatial()];
        self.for_each_tap(x, y, |c, i| col[c] = input[i]);
        col
    }

    pub fn forward(&self, p: &[f32], input: &[f32], x: Volume) -> (Vec<f32>, Volume) {
        let y = self.out_volume(x);
        let n = y.spatial();
        let col = self.im2col(input, x, y);
        let mut out = vec![0f32; y.len()];
        for (co, b) in self.bias.of(p).iter().enumerate() {
            out[co * n..(co + 1) * n].fill(*b);
        }
        gemm(
            self.cout,
            self.kernel_len(),
            n,
            self.weight.of(p),
            false,
            &col,
            false,
            1.0,
            &mut out,
        );
        (out, y)
    }

    /// Accumulates parameter gradients; returns `dx` when `need_dx`.
    pub fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        input: &[f32],
        x: Volume,
        dy: &[f32],
        need_dx: bool,
    ) -> Option<Vec<f32>> {
        let y = self.out_volume(x);
        let n = y.spatial();
        let k = self.kernel_len();
        let col = self.im2col(input, x, y);
        gemm(
            self.cout,
            n,
            k,
            dy,
            false,
            &col,
            true,
            1.0,
            self.weight.of_mut(g),
        );
        let gb = self.bias.of_mut(g);
        for co in 0..self.cout {
            gb[co] += dy[co * n..(co + 1) * n].iter().sum::<f32>();
        }
        if !need_dx {
            return None;
        }
        let mut dcol = col;
        gemm(
            k,
            self.cout,
            n,
            self.weight.of(p),
            true,
            dy,
            false,
            0.0,
            &mut dcol,
        );
        let mut dx = vec![0f32; x.len()];
        self.for_each_tap(x, y, |c, i| dx[i] += dcol[c]);
        Some(dx)
    }
}

/// Group normalization over `(channels-in-group × T·H·W)`.
#[derive(Debug, Clone, Copy)]
pub struct GroupNorm {
    pub gamma: Slot,
    pub beta: Slot,
    pub channels: usize,
    pub groups: usize,
}

pub struct GroupNormCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

pub fn groups_for(channels: usize) -> usize {
    [4, 2, 1]
        .into_iter()
        .find(|g| channels.is_multiple_of(*g))
        .unwrap()
}

impl GroupNorm {
    pub fn forward(&self, p: &[f32], x: &[f32], spatial: usize) -> (Vec<f32>, GroupNormCache) {
        let cg = self.channels / self.groups;
        let span = cg * spatial;
        let (gamma, beta) = (self.gamma.of(p), self.beta.of(p));
        let mut y = vec![0f32; x.len()];
        let mut xhat = vec![0f32; x.len()];
        let mut inv_std = vec![0f32; self.groups];
        for gi in 0..self.groups {
            let seg = &x[gi * span..(gi + 1) * span];
            let mean = seg.iter().sum::<f32>() / span as f32;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / span as f32;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[gi] = is;
            for (j, v) in seg.iter().enumerate() {
                let idx = gi * span + j;
                let ch = idx / spatial;
                let h = (v - mean) * is;
                xhat[idx] = h;
                y[idx] = h * gamma[ch] + beta[ch];
            }
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        c: &GroupNormCache,
        dy: &[f32],
        spatial: usize,
    ) -> Vec<f32> {
        let cg = self.channels / self.groups;
        let span = cg * spatial;
        let gamma = self.gamma.of(p);
        for ch in 0..self.channels {
            let range = ch * spatial..(ch + 1) * spatial;
            let (dg, db) = dy[range.clone()]
                .iter()
                .zip(&c.xhat[range])
                .fold((0f32, 0f32), |(a, b), (d, h)| (a + d * h, b + d));
            self.gamma.of_mut(g)[ch] += dg;
            self.beta.of_mut(g)[ch] += db;
        }
        let mut dx = vec![0f32; dy.len()];
        for gi in 0..self.groups {
            let base = gi * span;
            let (mut mean_d, mut mean_dx) = (0f32, 0f32);
            for j in 0..span {
                let idx = base + j;
                let d = dy[idx] * gamma[idx / spatial];
                mean_d += d;
                mean_dx += d * c.xhat[idx];
            }
            mean_d /= span as f32;
            mean_dx /= span as f32;
            for j in 0..span {
                let idx = base + j;
                let d = dy[idx] * gamma[idx / spatial];
                dx[idx] = c.inv_std[gi] * (d - mean_d - c.xhat[idx] * mean_dx);
            }
        }
        dx
    }
}

/// Non-overlapping average pooling; trailing remainders are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl AvgPool {
    pub fn out_volume(&self, x: Volume) -> Volume {
        Volume {
            c: x.c,
            t: x.t / self.t,
            h: x.h / self.h,
            w: x.w / self.w,
        }
    }

    pub fn forward(&self, input: &[f32], x: Volume) -> Vec<f32> {
        let y = self.out_volume(x);
        let norm = 1.0 / (self.t * self.h * self.w) as f32;
        let mut out = vec![0f32; y.len()];
        for c in 0..y.c {
            for to in 0..y.t {
                for ho in 0..y.h {
                    for wo in 0..y.w {
                        let mut acc = 0f32;
                        for dt in 0..self.t {
                            for dh in 0..self.h {
                                let base = ((c * x.t + to * self.t + dt) * x.h + ho * self.h + dh)
                                    * x.w
                                    + wo * self.w;
                                acc += input[base..base + self.w].iter().sum::<f32>();
                            }
                        }
                        out[((c * y.t + to) * y.h + ho) * y.w + wo] = acc * norm;
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, dy: &[f32], x: Volume) -> Vec<f32> {
        let y = self.out_volume(x);
        let norm = 1.0 / (self.t * self.h * self.w) as f32;
        let mut dx = vec![0f32; x.len()];
        for c in 0..y.c {
            for to in 0..y.t {
                for ho in 0..y.h {
                    for wo in 0..y.w {
                        let d = dy[((c * y.t + to) * y.h + ho) * y.w + wo] * norm;
                        for dt in 0..self.t {
                            for dh in 0..self.h {
                                let base = ((c * x.t + to * self.t + dt) * x.h + ho * self.h + dh)
                                    * x.w
                                    + wo * self.w;
                                dx[base..base + self.w].iter_mut().for_each(|v| *v = d);
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub conv: Conv3d,
    pub norm: GroupNorm,
    pub pool: AvgPool,
}

pub struct BlockCache {
    input: Vec<f32>,
    x: Volume,
    norm: GroupNormCache,
    activated: Vec<f32>,
}

impl Block {
    pub fn forward(&self, p: &[f32], input: &[f32], x: Volume) -> (Vec<f32>, Volume, BlockCache) {
        let (conv, cv) = self.conv.forward(p, input, x);
        let (mut act, norm) = self.norm.forward(p, &conv, cv.spatial());
        relu_inplace(&mut act);
        let out = self.pool.forward(&act, cv);
        let cache = BlockCache {
            input: input.to_vec(),
            x,
            norm,
            activated: act,
        };
        (out, self.pool.out_volume(cv), cache)
    }

    pub fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        c: &BlockCache,
        dy: &[f32],
        need_dx: bool,
    ) -> Option<Vec<f32>> {
        let cv = self.conv.out_volume(c.x);
        let mut d = self.pool.backward(dy, cv);
        relu_backward_inplace(&c.activated, &mut d);
        let d = self.norm.backward(p, g, &c.norm, &d, cv.spatial());
        self.conv.backward(p, g, &c.input, c.x, &d, need_dx)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<Block>,
    pub proj: Linear,
    pub positional: Slot,
    pub tokens: usize,
    pub dim: usize,
}

pub struct EncoderCache {
    blocks: Vec<BlockCache>,
    last: Volume,
    pooled: Vec<f32>,
}

impl Encoder {
    /// `input` is `(C, T, H, W)`. Returns tokens `(T_s × D)` without the positional term.
    pub fn forward(&self, p: &[f32], input: &[f32], x: Volume) -> (Vec<f32>, EncoderCache) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut cur = input.to_vec();
        let mut vol = x;
        for b in &self.blocks {
            let (out, v, cache) = b.forward(p, &cur, vol);
            caches.push(cache);
            cur = out;
            vol = v;
        }
        let hw = (vol.h * vol.w) as f32;
        let mut pooled = vec![0f32; vol.t * vol.c];
        for c in 0..vol.c {
            for t in 0..vol.t {
                let base = (c * vol.t + t) * vol.h * vol.w;
                pooled[t * vol.c + c] = cur[base..base + vol.h * vol.w].iter().sum::<f32>() / hw;
            }
        }
        let tokens = self.proj.forward(p, &pooled, vol.t);
        (
            tokens,
            EncoderCache {
                blocks: caches,
                last: vol,
                pooled,
            },
        )
    }

    pub fn backward(&self, p: &[f32], g: &mut [f32], c: &EncoderCache, dtokens: &[f32]) {
        let vol = c.last;
        let dpooled = self.proj.backward(p, g, &c.pooled, dtokens, vol.t);
        let hw = vol.h * vol.w;
        let mut d = vec![0f32; vol.len()];
        for ch in 0..vol.c {
            for t in 0..vol.t {
                let v = dpooled[t * vol.c + ch] / hw as f32;
                let base = (ch * vol.t + t) * hw;
                d[base..base + hw].iter_mut().for_each(|x| *x = v);
            }
        }
        for (i, (b, cache)) in self.blocks.iter().zip(&c.blocks).enumerate().rev() {
            match b.backward(p, g, cache, &d, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    pub fn add_positional(&self, p: &[f32], tokens: &mut [f32]) {
        add_assign(tokens, self.positional.of(p));
    }
}
