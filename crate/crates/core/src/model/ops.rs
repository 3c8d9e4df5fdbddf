//! Dense kernels with hand-written backward passes. Matrices are row-major.

use super::params::Slot;

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths are checked above against the strides used.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Affine map `y = x · Wᵀ + b`, `W` stored `(out × in)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: Slot,
    pub bias: Slot,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn forward(&self, p: &[f32], x: &[f32], rows: usize) -> Vec<f32> {
        let mut y = Vec::with_capacity(rows * self.out);
        for _ in 0..rows {
            y.extend_from_slice(self.bias.of(p));
        }
        gemm(
            rows,
            self.inp,
            self.out,
            x,
            false,
            self.weight.of(p),
            true,
            1.0,
            &mut y,
        );
        y
    }

    /// Accumulates weight/bias gradients into `g` and returns `dx`.
    pub fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        x: &[f32],
        dy: &[f32],
        rows: usize,
    ) -> Vec<f32> {
        self.backward_params(g, x, dy, rows);
        let mut dx = vec![0f32; rows * self.inp];
        gemm(
            rows,
            self.out,
            self.inp,
            dy,
            false,
            self.weight.of(p),
            false,
            0.0,
            &mut dx,
        );
        dx
    }

    pub fn backward_params(&self, g: &mut [f32], x: &[f32], dy: &[f32], rows: usize) {
        gemm(
            self.out,
            rows,
            self.inp,
            dy,
            true,
            x,
            false,
            1.0,
            self.weight.of_mut(g),
        );
        let gb = self.bias.of_mut(g);
        for r in 0..rows {
            for (b, d) in gb.iter_mut().zip(&dy[r * self.out..(r + 1) * self.out]) {
                *b += d;
            }
        }
    }
}

/// Per-row layer normalization over the last dimension with affine gain/shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: Slot,
    pub beta: Slot,
    pub dim: usize,
}

pub struct LayerNormCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

pub const NORM_EPS: f32 = 1e-5;

impl LayerNorm {
    pub fn forward(&self, p: &[f32], x: &[f32]) -> (Vec<f32>, LayerNormCache) {
        let d = self.dim;
        let rows = x.len() / d;
        let (gamma, beta) = (self.gamma.of(p), self.beta.of(p));
        let mut y = vec![0f32; x.len()];
        let mut xhat = vec![0f32; x.len()];
        let mut inv_std = vec![0f32; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let h = (row[i] - mean) * is;
                xhat[r * d + i] = h;
                y[r * d + i] = h * gamma[i] + beta[i];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        cache: &LayerNormCache,
        dy: &[f32],
    ) -> Vec<f32> {
        let d = self.dim;
        let rows = dy.len() / d;
        let gamma = self.gamma.of(p);
        {
            let gg = self.gamma.of_mut(g);
            for r in 0..rows {
                for i in 0..d {
                    gg[i] += dy[r * d + i] * cache.xhat[r * d + i];
                }
            }
        }
        {
            let gb = self.beta.of_mut(g);
            for r in 0..rows {
                for i in 0..d {
                    gb[i] += dy[r * d + i];
                }
            }
        }
        let mut dx = vec![0f32; dy.len()];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dxhat: Vec<f32> = (0..d).map(|i| dy[r * d + i] * gamma[i]).collect();
            let mean_d = dxhat.iter().sum::<f32>() / d as f32;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f32>() / d as f32;
            for i in 0..d {
                dx[r * d + i] = cache.inv_std[r] * (dxhat[i] - mean_d - xh[i] * mean_dx);
            }
        }
        dx
    }
}

pub fn relu_inplace(x: &mut [f32]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `dy` wherever the ReLU output was not positive.
pub fn relu_backward_inplace(out: &[f32], dy: &mut [f32]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn softmax_inplace(x: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn add_assign(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Multi-head scaled dot-product attention with per-query key prefixes.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionCache {
    xq: Vec<f32>,
    xkv: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    /// `[head][query][key]`, keys beyond the query's limit are zero.
    probs: Vec<f32>,
    ctx: Vec<f32>,
    nq: usize,
    nk: usize,
}

impl Attention {
    /// Query row `i` attends to keys `0..limits[i]`.
    pub fn forward(
        &self,
        p: &[f32],
        xq: &[f32],
        xkv: &[f32],
        limits: &[usize],
    ) -> (Vec<f32>, AttentionCache) {
        let d = self.dim;
        let (nq, nk) = (xq.len() / d, xkv.len() / d);
        debug_assert_eq!(limits.len(), nq);
        let q = self.q.forward(p, xq, nq);
        let k = self.k.forward(p, xkv, nk);
        let v = self.v.forward(p, xkv, nk);
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut probs = vec![0f32; self.heads * nq * nk];
        let mut ctx = vec![0f32; nq * d];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..nq {
                let lim = limits[i].min(nk);
                let row = &mut probs[(h * nq + i) * nk..(h * nq + i) * nk + lim];
                for (j, s) in row.iter_mut().enumerate() {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let kj = &k[j * d + off..j * d + off + dh];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                softmax_inplace(row);
                let out = &mut ctx[i * d + off..i * d + off + dh];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (o, vv) in out.iter_mut().zip(vj) {
                        *o += pij * vv;
                    }
                }
            }
        }
        let y = self.o.forward(p, &ctx, nq);
        let cache = AttentionCache {
            xq: xq.to_vec(),
            xkv: xkv.to_vec(),
            q,
            k,
            v,
            probs,
            ctx,
            nq,
            nk,
        };
        (y, cache)
    }

    /// Returns `(dxq, dxkv)`.
    pub fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        c: &AttentionCache,
        dy: &[f32],
        limits: &[usize],
    ) -> (Vec<f32>, Vec<f32>) {
        let d = self.dim;
        let (nq, nk) = (c.nq, c.nk);
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let dctx = self.o.backward(p, g, &c.ctx, dy, nq);
        let mut dq = vec![0f32; nq * d];
        let mut dk = vec![0f32; nk * d];
        let mut dv = vec![0f32; nk * d];
        let mut dp = vec![0f32; nk];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..nq {
                let lim = limits[i].min(nk);
                let prow = &c.probs[(h * nq + i) * nk..(h * nq + i) * nk + lim];
                let dci = &dctx[i * d + off..i * d + off + dh];
                for j in 0..lim {
                    let vj = &c.v[j * d + off..j * d + off + dh];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    for (t, &dc) in dci.iter().enumerate() {
                        dv[j * d + off + t] += prow[j] * dc;
                    }
                }
                let dot: f32 = (0..lim).map(|j| prow[j] * dp[j]).sum();
                for j in 0..lim {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    for t in 0..dh {
                        dq[i * d + off + t] += ds * c.k[j * d + off + t];
                        dk[j * d + off + t] += ds * c.q[i * d + off + t];
                    }
                }
            }
        }
        let dxq = self.q.backward(p, g, &c.xq, &dq, nq);
        let mut dxkv = self.k.backward(p, g, &c.xkv, &dk, nk);
        let dxv = self.v.backward(p, g, &c.xkv, &dv, nk);
        add_assign(&mut dxkv, &dxv);
        (dxq, dxkv)
    }
}
