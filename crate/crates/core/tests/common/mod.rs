//! Independent reference implementations used as test oracles. Nothing here
//! calls into the crate's loss code.
#![allow(dead_code)]

use std::collections::BTreeSet;

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let xn: Vec<f64> = x.iter().map(|v| v / norm(x)).collect();
    let yn: Vec<f64> = y.iter().map(|v| v / norm(y)).collect();
    xn.iter().zip(&yn).map(|(a, b)| a * b).sum()
}

/// `‖x̂ − ŷ‖²` on unit-normalized inputs, computed as a literal squared difference.
pub fn sq_dist_normalized(x: &[f64], y: &[f64]) -> f64 {
    let (nx, ny) = (norm(x), norm(y));
    x.iter()
        .zip(y)
        .map(|(a, b)| (a / nx - b / ny).powi(2))
        .sum()
}

/// `−log(exp(z_label) / Σ exp(z_i))`, evaluated naively.
pub fn nll(logits: &[f64], label: usize) -> f64 {
    let denom: f64 = logits.iter().map(|z| z.exp()).sum();
    -(logits[label].exp() / denom).ln()
}

pub fn triplet(margin: f64, anchor: &[f64], pos: &[f64], neg: &[f64]) -> f64 {
    (margin + sq_dist_normalized(anchor, pos) - sq_dist_normalized(anchor, neg)).max(0.0)
}

/// Literal double sum over ordered pairs `m ≠ n` of rows of `q` (`rows × dim`).
pub fn ortho(q: &[f64], dim: usize) -> f64 {
    let rows = q.len() / dim;
    let mut s = 0.0;
    for m in 0..rows {
        for n in 0..rows {
            if m != n {
                s += cosine(&q[m * dim..(m + 1) * dim], &q[n * dim..(n + 1) * dim]).abs();
            }
        }
    }
    s
}

/// Central finite differences with step `h`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Brute-force scan: for each anchor `(action, view)`, which roles have no
/// candidate among `clips`. Returns `(missing_sv, missing_sa)` per anchor.
pub fn uncoverable(clips: &[(usize, usize)]) -> Vec<(bool, bool)> {
    clips
        .iter()
        .map(|&(a, v)| {
            let sv = clips.iter().any(|&(a2, v2)| v2 == v && a2 != a);
            let sa = clips.iter().any(|&(a2, v2)| a2 == a && v2 != v);
            (!sv, !sa)
        })
        .collect()
}

pub fn distinct<T: Ord + Clone>(xs: &[T]) -> usize {
    xs.iter().cloned().collect::<BTreeSet<_>>().len()
}

/// Pearson chi-square statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}
