//! Accuracy, distance tables, linear probes, silhouettes, unseen-view
//! separation and loss-mask ablations. Everything here is read-only over the
//! model and deterministic.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{self, ContrastiveConfig, LossTerm, LossWeights};
use crate::model::{argmax, FeatureBundle, ModelConfig, SplitNet};
use crate::optim::{OptimState, OptimizerKind, OptimizerParams};
use crate::splits::{Protocol, Split};
use crate::synthdata::{ClipSource, DatasetManifest, ManifestRecord, VideoClip};
use crate::trainer::{self, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Side::Train),
            "test" => Ok(Side::Test),
            _ => Err(Error::config(
                "side",
                format!("expected train or test, got {s:?}"),
            )),
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Train => "train",
            Side::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub action_accuracy: f64,
    pub view_accuracy: f64,
    /// `None` for classes absent from the evaluated side.
    pub per_class_action: Vec<Option<f64>>,
    pub per_class_view: Vec<Option<f64>>,
    /// `[true][predicted]` counts.
    pub action_confusion: Vec<Vec<u64>>,
    pub view_confusion: Vec<Vec<u64>>,
    pub n_samples: usize,
}

fn confusion(pairs: impl Iterator<Item = (usize, usize)>, classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (truth, pred) in pairs {
        m[truth][pred] += 1;
    }
    m
}

fn summarize(m: &[Vec<u64>]) -> (f64, Vec<Option<f64>>) {
    let total: u64 = m.iter().flatten().sum();
    let correct: u64 = (0..m.len()).map(|i| m[i][i]).sum();
    let per_class = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    let acc = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    (acc, per_class)
}

pub fn accuracy_from_bundles(
    bundles: &[FeatureBundle],
    clips: &[&VideoClip],
    config: &ModelConfig,
) -> Result<AccuracyReport> {
    let labels: Vec<(usize, usize)> = clips.iter().map(|c| (c.action, c.view)).collect();
    accuracy_from_labels(bundles, &labels, config)
}

fn accuracy_from_labels(
    bundles: &[FeatureBundle],
    labels: &[(usize, usize)],
    config: &ModelConfig,
) -> Result<AccuracyReport> {
    for &(a, v) in labels {
        if a >= config.num_actions {
            return Err(Error::LabelOutOfRange {
                label: "action",
                value: a,
                limit: config.num_actions,
            });
        }
        if v >= config.num_views {
            return Err(Error::LabelOutOfRange {
                label: "view",
                value: v,
                limit: config.num_views,
            });
        }
    }
    let action_confusion = confusion(
        bundles
            .iter()
            .zip(labels)
            .map(|(b, l)| (l.0, b.action_prediction())),
        config.num_actions,
    );
    let view_preds = bundles
        .iter()
        .map(|b| {
            b.view_prediction()
                .ok_or_else(|| Error::Invalid("model has no view branch".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let view_confusion = confusion(labels.iter().map(|l| l.1).zip(view_preds), config.num_views);
    let (action_accuracy, per_class_action) = summarize(&action_confusion);
    let (view_accuracy, per_class_view) = summarize(&view_confusion);
    Ok(AccuracyReport {
        action_accuracy,
        view_accuracy,
        per_class_action,
        per_class_view,
        action_confusion,
        view_confusion,
        n_samples: bundles.len(),
    })
}

/// Records of one side of the split, in split order.
pub fn side_records(
    manifest: &DatasetManifest,
    split: &Split,
    side: Side,
) -> Result<Vec<ManifestRecord>> {
    let ids = match side {
        Side::Train => &split.train_ids,
        Side::Test => &split.test_ids,
    };
    ids.iter()
        .map(|id| {
            manifest
                .record(id)
                .cloned()
                .ok_or_else(|| Error::Split(format!("clip {id} not in manifest")))
        })
        .collect()
}

/// Fails unless the model was built for this dataset's dims and label counts.
pub fn check_compatible(model: &SplitNet, manifest: &DatasetManifest) -> Result<()> {
    let c = model.config();
    let m = &manifest.meta;
    let (h, w, ch) = (c.input.height, c.input.width, c.input.channels);
    if (h, w, ch) != (m.height, m.width, m.channels) {
        return Err(Error::Shape(format!(
            "model expects C×H×W = {ch}×{h}×{w}, data has {}×{}×{}",
            m.channels, m.height, m.width
        )));
    }
    if let Some(r) = manifest.records.iter().find(|r| r.frames != c.input.frames) {
        return Err(Error::Shape(format!(
            "model expects T = {} frames, clip {} has {}",
            c.input.frames, r.clip_id, r.frames
        )));
    }
    if c.num_actions != m.num_actions || c.num_views != m.num_views {
        return Err(Error::Shape(format!(
            "model has A = {}, V = {}; data has A = {}, V = {}",
            c.num_actions, c.num_views, m.num_actions, m.num_views
        )));
    }
    Ok(())
}

/// Forward pass for every record, loading clips on the fly.
pub fn extract(
    model: &SplitNet,
    source: &dyn ClipSource,
    records: &[ManifestRecord],
    exec: Exec,
) -> Result<Vec<FeatureBundle>> {
    exec.try_map(records, |r| model.forward(&source.load(r)?))
}

pub fn evaluate(
    model: &SplitNet,
    source: &dyn ClipSource,
    manifest: &DatasetManifest,
    split: &Split,
    side: Side,
    exec: Exec,
) -> Result<AccuracyReport> {
    check_compatible(model, manifest)?;
    let records = side_records(manifest, split, side)?;
    let bundles = extract(model, source, &records, exec)?;
    let labels: Vec<(usize, usize)> = records.iter().map(|r| (r.action, r.view)).collect();
    accuracy_from_labels(&bundles, &labels, model.config())
}

// ---------------------------------------------------------------------------
// Distance table

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub clip_id: String,
    pub action: usize,
    pub view: usize,
    pub d_action: f64,
    pub d_view: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    pub reference: String,
    pub rows: Vec<DistanceRow>,
}

impl DistanceTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Invalid(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Mean `d_action` to clips of the reference's action class (excluding the
    /// reference) and to clips of other classes.
    pub fn action_class_means(&self) -> Result<(f64, f64)> {
        let r = self
            .rows
            .iter()
            .find(|r| r.clip_id == self.reference)
            .ok_or_else(|| Error::Invalid(format!("reference {} not in table", self.reference)))?;
        let mean = |it: Vec<f64>| {
            if it.is_empty() {
                f64::NAN
            } else {
                it.iter().sum::<f64>() / it.len() as f64
            }
        };
        let within = self
            .rows
            .iter()
            .filter(|x| x.action == r.action && x.clip_id != r.clip_id)
            .map(|x| x.d_action)
            .collect();
        let between = self
            .rows
            .iter()
            .filter(|x| x.action != r.action)
            .map(|x| x.d_action)
            .collect();
        Ok((mean(within), mean(between)))
    }
}

pub fn distance_table_from(
    records: &[ManifestRecord],
    bundles: &[FeatureBundle],
    reference: &str,
    loss: &ContrastiveConfig,
) -> Result<DistanceTable> {
    let ri = records
        .iter()
        .position(|r| r.clip_id == reference)
        .ok_or_else(|| Error::Invalid(format!("unknown reference clip id {reference}")))?;
    let rb = &bundles[ri];
    let rows = records
        .iter()
        .zip(bundles)
        .map(|(r, b)| {
            Ok(DistanceRow {
                clip_id: r.clip_id.clone(),
                action: r.action,
                view: r.view,
                d_action: losses::distance_f32(&rb.f_a, &b.f_a, loss)?,
                d_view: losses::distance_f32(rb.view_feature()?, b.view_feature()?, loss)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DistanceTable {
        reference: reference.to_string(),
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn distance_table(
    model: &SplitNet,
    source: &dyn ClipSource,
    manifest: &DatasetManifest,
    split: &Split,
    side: Side,
    reference: &str,
    loss: &ContrastiveConfig,
    exec: Exec,
) -> Result<DistanceTable> {
    check_compatible(model, manifest)?;
    let records = side_records(manifest, split, side)?;
    if !records.iter().any(|r| r.clip_id == reference) {
        return Err(Error::Invalid(format!(
            "unknown reference clip id {reference} on the {side} side"
        )));
    }
    let bundles = extract(model, source, &records, exec)?;
    distance_table_from(&records, &bundles, reference, loss)
}

// ---------------------------------------------------------------------------
// Silhouette

/// Mean silhouette under the training distance. Points in singleton clusters
/// score 0. Needs at least two clusters.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize], loss: &ContrastiveConfig) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} points, {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(Error::Invalid(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let n = points.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = losses::distance(&points[i], &points[j], loss)?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let index: HashMap<usize, usize> = clusters.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; clusters.len()];
        let mut count = vec![0usize; clusters.len()];
        for j in 0..n {
            if j != i {
                let k = index[&labels[j]];
                sum[k] += dist[i * n + j];
                count[k] += 1;
            }
        }
        let own = index[&labels[i]];
        if count[own] == 0 {
            continue;
        }
        let a = sum[own] / count[own] as f64;
        let b = (0..clusters.len())
            .filter(|&k| k != own && count[k] > 0)
            .map(|k| sum[k] / count[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

// ---------------------------------------------------------------------------
// Linear probes

/// Probe optimizer settings: the training defaults (AdamW, lr 3e-4, weight
/// decay 1e-4) for 200 full-batch steps on raw frozen features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: 200,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
        }
    }
}

/// Affine softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProbe {
    /// `classes × (dim + 1)`, bias last.
    weights: Vec<f32>,
    dim: usize,
    classes: usize,
}

impl AffineProbe {
    /// Full-batch AdamW on mean softmax cross-entropy from zero init.
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, config: &ProbeConfig) -> Result<Self> {
        let dim = x
            .first()
            .ok_or_else(|| Error::Invalid("probe needs training samples".into()))?
            .len();
        let mut distinct: Vec<usize> = y.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::Invalid(
                "probe training side has a single class".into(),
            ));
        }
        let n = x.len() as f64;
        let mut probe = Self {
            weights: vec![0.0; classes * (dim + 1)],
            dim,
            classes,
        };
        let mut opt = OptimState::new(OptimizerKind::AdamFamily, probe.weights.len());
        let hp = OptimizerParams::default();
        for _ in 0..config.steps {
            let mut grad = vec![0f64; probe.weights.len()];
            for (row, &label) in x.iter().zip(y) {
                let (_, g) = losses::cross_entropy_grad(&probe.logits(row), label)?;
                for (c, gc) in g.iter().enumerate() {
                    let base = c * (dim + 1);
                    for k in 0..dim {
                        grad[base + k] += gc * row[k] / n;
                    }
                    grad[base + dim] += gc / n;
                }
            }
            let grad: Vec<f32> = grad.iter().map(|&v| v as f32).collect();
            opt.step(
                &mut probe.weights,
                &grad,
                config.learning_rate,
                config.weight_decay,
                &hp,
            );
        }
        Ok(probe)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let w = &self.weights[c * (self.dim + 1)..(c + 1) * (self.dim + 1)];
                w[..self.dim]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| *a as f64 * b)
                    .sum::<f64>()
                    + w[self.dim] as f64
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let l: Vec<f32> = self.logits(x).iter().map(|&v| v as f32).collect();
        argmax(&l)
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let hits = x
            .iter()
            .zip(y)
            .filter(|(r, &l)| self.predict(r) == l)
            .count();
        hits as f64 / x.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe_view_from_fv: f64,
    pub probe_view_from_fa: f64,
    pub probe_action_from_fa: f64,
    pub silhouette_action_on_fa: f64,
    pub silhouette_view_on_fa: f64,
    pub silhouette_view_on_fv: f64,
}

/// Frozen features of one side, widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct SideFeatures {
    pub records: Vec<ManifestRecord>,
    pub f_a: Vec<Vec<f64>>,
    pub f_v: Vec<Vec<f64>>,
}

impl SideFeatures {
    pub fn from_bundles(records: Vec<ManifestRecord>, bundles: &[FeatureBundle]) -> Result<Self> {
        let f_a = bundles.iter().map(|b| losses::widen(&b.f_a)).collect();
        let f_v = bundles
            .iter()
            .map(|b| b.view_feature().map(losses::widen))
            .collect::<Result<_>>()?;
        Ok(Self { records, f_a, f_v })
    }

    pub fn actions(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.action).collect()
    }

    pub fn views(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.view).collect()
    }
}

/// Probes are fit on `train` and scored on `test`; silhouettes use `test`.
pub fn probe_from_features(
    train: &SideFeatures,
    test: &SideFeatures,
    config: &ModelConfig,
    loss: &ContrastiveConfig,
) -> Result<ProbeReport> {
    let pc = ProbeConfig::default();
    let fit = |x: &[Vec<f64>], y: &[usize], classes| AffineProbe::fit(x, y, classes, &pc);
    let (va, vv) = (config.num_actions, config.num_views);
    let view_fv = fit(&train.f_v, &train.views(), vv)?;
    let view_fa = fit(&train.f_a, &train.views(), vv)?;
    let action_fa = fit(&train.f_a, &train.actions(), va)?;
    Ok(ProbeReport {
        probe_view_from_fv: view_fv.accuracy(&test.f_v, &test.views()),
        probe_view_from_fa: view_fa.accuracy(&test.f_a, &test.views()),
        probe_action_from_fa: action_fa.accuracy(&test.f_a, &test.actions()),
        silhouette_action_on_fa: silhouette(&test.f_a, &test.actions(), loss)?,
        silhouette_view_on_fa: silhouette(&test.f_a, &test.views(), loss)?,
        silhouette_view_on_fv: silhouette(&test.f_v, &test.views(), loss)?,
    })
}

pub fn side_features(
    model: &SplitNet,
    source: &dyn ClipSource,
    manifest: &DatasetManifest,
    split: &Split,
    side: Side,
    exec: Exec,
) -> Result<SideFeatures> {
    let records = side_records(manifest, split, side)?;
    let bundles = extract(model, source, &records, exec)?;
    SideFeatures::from_bundles(records, &bundles)
}

pub fn probe(
    model: &SplitNet,
    source: &dyn ClipSource,
    manifest: &DatasetManifest,
    split: &Split,
    loss: &ContrastiveConfig,
    exec: Exec,
) -> Result<ProbeReport> {
    check_compatible(model, manifest)?;
    let train = side_features(model, source, manifest, split, Side::Train, exec)?;
    let test = side_features(model, source, manifest, split, Side::Test, exec)?;
    probe_from_features(&train, &test, model.config(), loss)
}

// ---------------------------------------------------------------------------
// Unseen-view separation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub held_out_views: Vec<usize>,
    pub num_view_clusters: usize,
    pub clips_per_view: Vec<usize>,
    /// Silhouette of the view clusters on `f_v`, unseen views included.
    pub silhouette_view_on_fv: f64,
    /// Fraction of held-out-view clips whose nearest view centroid belongs to another view.
    pub unseen_misassignment_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Action,
    View,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Action => "action",
            Branch::View => "view",
        }
    }
}

/// `clip_id,action,view,branch,dim_0,…` with one row per clip.
pub fn write_embeddings_csv(path: &Path, features: &SideFeatures, branch: Branch) -> Result<()> {
    let rows = match branch {
        Branch::Action => &features.f_a,
        Branch::View => &features.f_v,
    };
    let dim = rows.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let mut header = vec![
        "clip_id".to_string(),
        "action".into(),
        "view".into(),
        "branch".into(),
    ];
    header.extend((0..dim).map(|k| format!("dim_{k}")));
    let csv_err = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for (r, f) in features.records.iter().zip(rows) {
        let mut rec = vec![
            r.clip_id.clone(),
            r.action.to_string(),
            r.view.to_string(),
            branch.name().into(),
        ];
        rec.extend(f.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn unit(x: &[f64]) -> Vec<f64> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter().map(|v| v / n).collect()
}

pub fn separation_from_features(
    all: &SideFeatures,
    held_out: &[usize],
    num_views: usize,
    loss: &ContrastiveConfig,
) -> Result<SeparationReport> {
    let views = all.views();
    let mut centroids = vec![vec![0.0; all.f_v.first().map_or(0, Vec::len)]; num_views];
    let mut counts = vec![0usize; num_views];
    for (f, &v) in all.f_v.iter().zip(&views) {
        for (c, x) in centroids[v].iter_mut().zip(unit(f)) {
            *c += x;
        }
        counts[v] += 1;
    }
    if let Some(v) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Invalid(format!("view {v} has no clips")));
    }
    let mut wrong = 0usize;
    let mut unseen = 0usize;
    for (f, &v) in all.f_v.iter().zip(&views) {
        if !held_out.contains(&v) {
            continue;
        }
        unseen += 1;
        let mut best = (f64::INFINITY, usize::MAX);
        for (k, c) in centroids.iter().enumerate() {
            let d = losses::distance(f, c, loss)?;
            if d < best.0 {
                best = (d, k);
            }
        }
        wrong += usize::from(best.1 != v);
    }
    Ok(SeparationReport {
        held_out_views: held_out.to_vec(),
        num_view_clusters: num_views,
        clips_per_view: counts,
        silhouette_view_on_fv: silhouette(&all.f_v, &views, loss)?,
        unseen_misassignment_rate: if unseen == 0 {
            0.0
        } else {
            wrong as f64 / unseen as f64
        },
    })
}

/// `split` must be the cross-view split the model was trained on; features are
/// taken for every clip of the manifest.
pub fn unseen_view_separation(
    model: &SplitNet,
    source: &dyn ClipSource,
    manifest: &DatasetManifest,
    split: &Split,
    loss: &ContrastiveConfig,
    exec: Exec,
) -> Result<(SeparationReport, SideFeatures)> {
    if split.protocol != Protocol::CrossView {
        return Err(Error::Invalid(
            "unseen-view separation needs a cross-view split".into(),
        ));
    }
    check_compatible(model, manifest)?;
    let bundles = extract(model, source, &manifest.records, exec)?;
    let all = SideFeatures::from_bundles(manifest.records.clone(), &bundles)?;
    let report = separation_from_features(&all, &split.held_out, model.config().num_views, loss)?;
    Ok((report, all))
}

// ---------------------------------------------------------------------------
// Ablation

/// Default ablation masks over (ace, vce, ac, vc, ortho), full loss last.
pub const ABLATION_MASKS: [[u8; 5]; 6] = [
    [1, 0, 1, 0, 1],
    [1, 1, 0, 1, 1],
    [1, 1, 1, 0, 1],
    [1, 1, 0, 0, 1],
    [1, 1, 1, 1, 0],
    [1, 1, 1, 1, 1],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: [u8; 5],
    pub seeds: Vec<u64>,
    pub mean_acc: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std_acc: f64,
    pub accuracies: Vec<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn mask_weights(mask: [u8; 5]) -> Result<LossWeights> {
    if mask[LossTerm::Ace.index()] == 0 {
        return Err(Error::config(
            "ablate.masks",
            "every mask must keep the action cross-entropy (ace) on",
        ));
    }
    if let Some(b) = mask.iter().find(|&&b| b > 1) {
        return Err(Error::config(
            "ablate.masks",
            format!("mask entries are 0 or 1, got {b}"),
        ));
    }
    Ok(LossWeights(mask.map(f64::from)))
}

/// Trains one model per `(mask, seed)` under `out_dir/mask_<bits>/seed_<s>`
/// and reports test-side action accuracy per mask.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    source: &dyn ClipSource,
    manifest: &DatasetManifest,
    split: &Split,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    loss: &ContrastiveConfig,
    masks: &[[u8; 5]],
    seeds: &[u64],
    out_dir: &Path,
    exec: Exec,
) -> Result<Vec<AblationRow>> {
    let weights = masks
        .iter()
        .map(|&m| mask_weights(m))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(Error::config("ablate.seeds", "need at least one seed"));
    }
    model_config.validate()?;
    train_config.validate()?;
    loss.validate()?;
    let runner = trainer::Trainer::new(source, manifest, split, exec)?;
    let test = side_records(manifest, split, Side::Test)?;
    let test_clips = exec.try_map(&test, |r| source.load(r))?;
    let refs: Vec<&VideoClip> = test_clips.iter().collect();
    let mut rows = Vec::with_capacity(masks.len());
    for (&mask, w) in masks.iter().zip(weights) {
        let bits: String = mask.iter().map(|b| b.to_string()).collect();
        let mut accs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                loss_weights: w,
                seed,
                ..train_config.clone()
            };
            let dir = out_dir
                .join(format!("mask_{bits}"))
                .join(format!("seed_{seed}"));
            let mut state = trainer::TrainState::new(model_config, &cfg, loss)?;
            runner.run(&mut state, &dir)?;
            let bundles = state.model.forward_batch(&refs, exec)?;
            let acc = accuracy_from_bundles(&bundles, &refs, model_config)?.action_accuracy;
            log::info!("ablation mask {bits} seed {seed}: test action accuracy {acc:.4}");
            accs.push(acc);
        }
        let (mean_acc, std_acc) = mean_std(&accs);
        rows.push(AblationRow {
            mask,
            seeds: seeds.to_vec(),
            mean_acc,
            std_acc,
            accuracies: accs,
        });
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
