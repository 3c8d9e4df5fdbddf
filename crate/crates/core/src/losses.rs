//! Training objectives with closed-form gradients, all in f64.
//!
//! * action / view cross-entropy (negative log-likelihood of the label);
//! * action contrastive: hinge on `δ + D(a, sa) − D(a, sv)`;
//! * view contrastive: the same hinge with positive and negative swapped;
//! * orthogonality: summed absolute cosine over ordered pairs of action queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// `‖x/‖x‖ − y/‖y‖‖² = 2 − 2·cos(x, y)`, range `[0, 4]`.
    SquaredEuclideanNormalized,
    /// `1 − cos(x, y)`, range `[0, 2]`.
    CosineDistance,
}

/// Which branch feeds the view contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewLossFeatures {
    ViewBranch,
    ActionBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub margin: f64,
    pub distance: DistanceKind,
    pub view_loss_features: ViewLossFeatures,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 1.5,
            distance: DistanceKind::SquaredEuclideanNormalized,
            view_loss_features: ViewLossFeatures::ViewBranch,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config("loss.margin", "δ must be finite and > 0"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Cross-entropy

/// `−log softmax(logits)[label]` and its gradient `softmax − onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label: "class",
            value: label,
            limit: logits.len(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let (imax, max) =
        logits
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (i, v)| if v > b.1 { (i, v) } else { b },
            );
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != imax)
        .map(|(_, v)| (v - max).exp())
        .sum();
    let loss = (max - logits[label]) + rest.ln_1p();
    let norm = 1.0 + rest;
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, v)| (v - max).exp() / norm - if i == label { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    Ok(cross_entropy_grad(logits, label)?.0)
}

// ---------------------------------------------------------------------------
// Distance

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Cosine similarity with its gradients `(c, ∂c/∂x, ∂c/∂y)`.
fn cosine_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Invalid(
            "distance of a zero-norm vector is undefined".into(),
        ));
    }
    if !(nx.is_finite() && ny.is_finite()) {
        return Err(Error::NonFinite("distance input".into()));
    }
    let c = dot(x, y) / (nx * ny);
    let gx = x
        .iter()
        .zip(y)
        .map(|(a, b)| b / (nx * ny) - c * a / (nx * nx))
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(a, b)| a / (nx * ny) - c * b / (ny * ny))
        .collect();
    Ok((c, gx, gy))
}

/// Distance with gradients `(D, ∂D/∂x, ∂D/∂y)`.
pub fn distance_grad(
    x: &[f64],
    y: &[f64],
    kind: DistanceKind,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (c, gx, gy) = cosine_grad(x, y)?;
    let scale = match kind {
        DistanceKind::SquaredEuclideanNormalized => 2.0,
        DistanceKind::CosineDistance => 1.0,
    };
    let d = (scale * (1.0 - c)).max(0.0);
    let neg = |g: Vec<f64>| g.into_iter().map(|v| -scale * v).collect();
    Ok((d, neg(gx), neg(gy)))
}

pub fn distance(x: &[f64], y: &[f64], config: &ContrastiveConfig) -> Result<f64> {
    Ok(distance_grad(x, y, config.distance)?.0)
}

/// f32 convenience used by the evaluator on model features.
pub fn distance_f32(x: &[f32], y: &[f32], config: &ContrastiveConfig) -> Result<f64> {
    let (x, y) = (widen(x), widen(y));
    distance(&x, &y, config)
}

pub fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

// ---------------------------------------------------------------------------
// Triplet margin

/// `max(0, δ + d_pos − d_neg)`.
pub fn hinge(margin: f64, d_pos: f64, d_neg: f64) -> f64 {
    (margin + d_pos - d_neg).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletTerm {
    pub value: f64,
    pub d_anchor: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negative: Vec<f64>,
}

/// Hinged triplet loss; value and gradients are exactly zero when inactive.
pub fn triplet_margin(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    config: &ContrastiveConfig,
) -> Result<TripletTerm> {
    let (dp, gap, gp) = distance_grad(anchor, positive, config.distance)?;
    let (dn, gan, gn) = distance_grad(anchor, negative, config.distance)?;
    let arg = config.margin + dp - dn;
    if arg <= 0.0 {
        let z = vec![0.0; anchor.len()];
        return Ok(TripletTerm {
            value: 0.0,
            d_anchor: z.clone(),
            d_positive: z.clone(),
            d_negative: z,
        });
    }
    Ok(TripletTerm {
        value: arg,
        d_anchor: gap.iter().zip(&gan).map(|(a, b)| a - b).collect(),
        d_positive: gp,
        d_negative: gn.into_iter().map(|v| -v).collect(),
    })
}

/// Positive = same action (other view), negative = same view (other action).
pub fn action_contrastive(
    anchor: &[f64],
    same_action: &[f64],
    same_view: &[f64],
    config: &ContrastiveConfig,
) -> Result<TripletTerm> {
    triplet_margin(anchor, same_action, same_view, config)
}

/// Positive = same view (other action), negative = same action (other view).
pub fn view_contrastive(
    anchor: &[f64],
    same_view: &[f64],
    same_action: &[f64],
    config: &ContrastiveConfig,
) -> Result<TripletTerm> {
    triplet_margin(anchor, same_view, same_action, config)
}

// ---------------------------------------------------------------------------
// Orthogonality

/// `Σ_{m≠n} |cos(q_m, q_n)|` over the rows of `queries` (`rows × dim`), and
/// its gradient with respect to every entry.
pub fn orthogonality_grad(queries: &[f64], dim: usize) -> Result<(f64, Vec<f64>)> {
    if dim == 0 || !queries.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of {dim}",
            queries.len()
        )));
    }
    let rows = queries.len() / dim;
    let row = |i: usize| &queries[i * dim..(i + 1) * dim];
    for i in 0..rows {
        if norm(row(i)) == 0.0 {
            return Err(Error::Invalid(format!(
                "action query row {i} has zero norm"
            )));
        }
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; queries.len()];
    for m in 0..rows {
        for n in m + 1..rows {
            let (c, gm, gn) = cosine_grad(row(m), row(n))?;
            // (m, n) and (n, m) both appear in the ordered double sum
            loss += 2.0 * c.abs();
            let s = 2.0 * c.signum() * if c == 0.0 { 0.0 } else { 1.0 };
            for k in 0..dim {
                grad[m * dim + k] += s * gm[k];
                grad[n * dim + k] += s * gn[k];
            }
        }
    }
    Ok((loss, grad))
}

pub fn orthogonality(queries: &[f64], dim: usize) -> Result<f64> {
    Ok(orthogonality_grad(queries, dim)?.0)
}

// ---------------------------------------------------------------------------
// Composition

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Ace,
    Vce,
    Ac,
    Vc,
    Ortho,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::Ace,
        LossTerm::Vce,
        LossTerm::Ac,
        LossTerm::Vc,
        LossTerm::Ortho,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Ace => "ace",
            LossTerm::Vce => "vce",
            LossTerm::Ac => "ac",
            LossTerm::Vc => "vc",
            LossTerm::Ortho => "ortho",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for LossTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossTerm::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| Error::config("train.loss_mask", format!("unknown loss term {s:?}")))
    }
}

/// Per-term weights in the order `ace, vce, ac, vc, ortho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossWeights(pub [f64; 5]);

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights([1.0; 5])
    }
}

impl LossWeights {
    /// Unit weight for every listed term, zero for the rest.
    pub fn from_mask(terms: &[LossTerm]) -> Self {
        let mut w = [0.0; 5];
        for t in terms {
            w[t.index()] = 1.0;
        }
        LossWeights(w)
    }

    /// Parses `ace,ac,ortho` style lists.
    pub fn parse_mask(s: &str) -> Result<Self> {
        let terms = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<LossTerm>>>()?;
        Ok(Self::from_mask(&terms))
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        self.0[term.index()]
    }

    pub fn is_active(&self, term: LossTerm) -> bool {
        self.get(term) != 0.0
    }

    /// Five-bit mask, 1 where the weight is non-zero.
    pub fn mask_bits(&self) -> [u8; 5] {
        self.0.map(|w| u8::from(w != 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let w = self.get(t);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(
                    "train.loss_weights",
                    format!(
                        "weight for {} is {w}; weights must be finite and ≥ 0",
                        t.name()
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ace: f64,
    pub l_vce: f64,
    pub l_ac: f64,
    pub l_vc: f64,
    pub l_ortho: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 5] {
        [self.l_ace, self.l_vce, self.l_ac, self.l_vc, self.l_ortho]
    }

    /// First non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        LossTerm::ALL
            .into_iter()
            .find(|t| !self.terms()[t.index()].is_finite())
            .map(LossTerm::name)
    }
}

/// `Σ w_i · term_i` over the five terms.
pub fn total_loss(terms: [f64; 5], weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let total = terms.iter().zip(weights.0).map(|(t, w)| t * w).sum();
    let [l_ace, l_vce, l_ac, l_vc, l_ortho] = terms;
    Ok(LossBreakdown {
        l_ace,
        l_vce,
        l_ac,
        l_vc,
        l_ortho,
        total,
        weights: *weights,
    })
}
