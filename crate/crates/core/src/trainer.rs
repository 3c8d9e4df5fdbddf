//! Triplet training loop: sampler → three shared-weight forwards per triplet →
//! five loss terms → clipped AdamW (or SGD) step, with JSONL metrics and
//! periodic checkpoints.
//!
//! Work is split per triplet: forward, loss gradients and backward for one
//! triplet run as a unit on the [`Exec`] pool, and the per-triplet gradient
//! vectors are summed afterwards in batch order. The optimizer update itself is
//! sequential, so results do not depend on the number of threads.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::evaluator::{accuracy_from_bundles, AccuracyReport};
use crate::exec::Exec;
use crate::losses::{
    self, ContrastiveConfig, LossBreakdown, LossTerm, LossWeights, ViewLossFeatures,
};
use crate::model::{BundleGrad, FeatureBundle, ModelConfig, SplitNet};
use crate::optim::{clip_global_norm, OptimState, OptimizerKind, OptimizerParams};
use crate::splits::{Split, Triplet, TripletSampler};
use crate::synthdata::{splitmix64, ClipSource, DatasetManifest, VideoClip};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub optimizer_params: OptimizerParams,
    /// Order: ace, vce, ac, vc, ortho.
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// 0 disables intermediate checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    /// 0 disables periodic train-side evaluation.
    pub eval_every: u64,
    pub grad_clip_norm: f64,
    /// Apply the two cross-entropy terms to all three triplet members instead
    /// of the anchor only.
    pub ce_all_members: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            optimizer: OptimizerKind::AdamFamily,
            optimizer_params: OptimizerParams::default(),
            loss_weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            grad_clip_norm: 5.0,
            ce_all_members: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "train.learning_rate",
                "must be finite and > 0",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be ≥ 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(
                "train.weight_decay",
                "must be finite and ≥ 0",
            ));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm < 0.0 {
            return Err(Error::config(
                "train.grad_clip_norm",
                "must be ≥ 0 (0 disables clipping)",
            ));
        }
        let hp = &self.optimizer_params;
        for (key, v) in [
            ("beta1", hp.beta1),
            ("beta2", hp.beta2),
            ("momentum", hp.momentum),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(
                    format!("train.optimizer_params.{key}"),
                    "must lie in [0, 1)",
                ));
            }
        }
        if hp.eps.is_nan() || hp.eps <= 0.0 {
            return Err(Error::config("train.optimizer_params.eps", "must be > 0"));
        }
        self.loss_weights.validate()
    }
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: SplitNet,
    pub optim: OptimState,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub epoch: usize,
    /// Index of the next batch within `epoch`.
    pub batch_cursor: usize,
    /// Batch order for epoch `e` is a pure function of `(seed, e)`.
    pub seed: u64,
    /// Best train-side action accuracy seen at an eval point.
    pub best_metric: Option<f64>,
    pub train: TrainConfig,
    pub loss: ContrastiveConfig,
}

impl TrainState {
    pub fn new(
        model_config: &ModelConfig,
        train: &TrainConfig,
        loss: &ContrastiveConfig,
    ) -> Result<Self> {
        let model = SplitNet::init(model_config, train.seed)?;
        let optim = OptimState::new(train.optimizer, model.num_params());
        Ok(Self {
            model,
            optim,
            step: 0,
            epoch: 0,
            batch_cursor: 0,
            seed: train.seed,
            best_metric: None,
            train: train.clone(),
            loss: loss.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_ace: f64,
    pub l_vce: f64,
    pub l_ac: f64,
    pub l_vc: f64,
    pub l_ortho: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub split: String,
    pub action_acc: f64,
    pub view_acc: f64,
}

/// Per-triplet loss values (batch-mean contributions) and parameter gradient.
struct TripletOutcome {
    terms: [f64; 4],
    grad: Option<Vec<f32>>,
}

/// Train-side data resident in memory plus the fixed objective.
pub struct Trainer {
    sampler: TripletSampler,
    clips: Vec<VideoClip>,
    exec: Exec,
}

impl Trainer {
    /// Loads every train-side clip of `split` through `source`. Test clips are
    /// never requested.
    pub fn new(
        source: &dyn ClipSource,
        manifest: &DatasetManifest,
        split: &Split,
        exec: Exec,
    ) -> Result<Self> {
        split.validate(manifest)?;
        let sampler = TripletSampler::new(manifest, split)?;
        let issues = sampler.coverage_report();
        if !issues.is_empty() {
            let listed: Vec<String> = issues
                .iter()
                .take(20)
                .map(|i| {
                    let roles: Vec<String> = i.missing.iter().map(ToString::to_string).collect();
                    format!("{} ({})", i.clip_id, roles.join(", "))
                })
                .collect();
            return Err(Error::Sampling(format!(
                "{} train anchors cannot form a triplet: {}{}",
                issues.len(),
                listed.join("; "),
                if issues.len() > listed.len() {
                    "; …"
                } else {
                    ""
                }
            )));
        }
        let clips = exec.try_map(sampler.records(), |r| source.load(r))?;
        Ok(Self {
            sampler,
            clips,
            exec,
        })
    }

    pub fn sampler(&self) -> &TripletSampler {
        &self.sampler
    }

    pub fn clips(&self) -> &[VideoClip] {
        &self.clips
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.clips.len().div_ceil(batch_size)
    }

    pub fn epoch_batches(
        &self,
        seed: u64,
        epoch: usize,
        batch_size: usize,
    ) -> Result<Vec<Vec<Triplet>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(epoch as u64 + 1)));
        self.sampler.epoch_batches(batch_size, &mut rng)
    }

    /// Loss breakdown and full parameter gradient for one batch at the current
    /// parameters. Terms with weight 0 contribute no gradient.
    pub fn loss_and_grad(
        &self,
        model: &SplitNet,
        batch: &[Triplet],
        train: &TrainConfig,
        loss: &ContrastiveConfig,
    ) -> Result<(LossBreakdown, Vec<f32>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let weights = train.loss_weights;
        let scale = 1.0 / batch.len() as f64;
        let outcomes = self.exec.try_map(batch, |t| {
            self.triplet(model, t, &weights, scale, train.ce_all_members, loss)
        })?;

        let mut terms = [0.0; 5];
        let mut grad = vec![0f32; model.num_params()];
        for o in &outcomes {
            for (acc, v) in terms.iter_mut().zip(o.terms) {
                *acc += v;
            }
            if let Some(g) = &o.grad {
                crate::model::ops::add_assign(&mut grad, g);
            }
        }

        let d = model.config().arch.d_model;
        let slot = model.action_query_slot();
        let q = losses::widen(slot.of(model.params()));
        let (ortho, g_ortho) = losses::orthogonality_grad(&q, d)?;
        terms[LossTerm::Ortho.index()] = ortho;
        let w = weights.get(LossTerm::Ortho);
        if w != 0.0 {
            for (g, v) in slot.of_mut(&mut grad).iter_mut().zip(g_ortho) {
                *g += (w * v) as f32;
            }
        }

        let breakdown = losses::total_loss(terms, &weights)?;
        if let Some(term) = breakdown.non_finite_term() {
            return Err(Error::NonFinite(format!("loss term l_{term}")));
        }
        Ok((breakdown, grad))
    }

    fn triplet(
        &self,
        model: &SplitNet,
        t: &Triplet,
        weights: &LossWeights,
        scale: f64,
        ce_all: bool,
        loss: &ContrastiveConfig,
    ) -> Result<TripletOutcome> {
        let members = [t.anchor, t.same_view, t.same_action];
        let mut bundles: Vec<FeatureBundle> = Vec::with_capacity(3);
        let mut caches = Vec::with_capacity(3);
        for &i in &members {
            let (b, c) = model.forward_cached(&self.clips[i])?;
            bundles.push(b);
            caches.push(c);
        }
        let clips: Vec<&VideoClip> = members.iter().map(|&i| &self.clips[i]).collect();
        let mut grads = vec![BundleGrad::default(); 3];
        let mut terms = [0.0; 4];

        let ce_members: &[usize] = if ce_all { &[0, 1, 2] } else { &[0] };
        let ce_scale = scale / ce_members.len() as f64;
        for &k in ce_members {
            let (v, g) =
                losses::cross_entropy_grad(&losses::widen(&bundles[k].p_a), clips[k].action)
                    .map_err(|e| in_term(e, LossTerm::Ace))?;
            terms[0] += ce_scale * v;
            if weights.is_active(LossTerm::Ace) {
                grads[k].p_a = narrow(&g, weights.get(LossTerm::Ace) * ce_scale);
            }
            let (v, g) = losses::cross_entropy_grad(
                &losses::widen(bundles[k].view_logits()?),
                clips[k].view,
            )
            .map_err(|e| in_term(e, LossTerm::Vce))?;
            terms[1] += ce_scale * v;
            if weights.is_active(LossTerm::Vce) {
                grads[k].p_v = narrow(&g, weights.get(LossTerm::Vce) * ce_scale);
            }
        }

        let fa: Vec<Vec<f64>> = bundles.iter().map(|b| losses::widen(&b.f_a)).collect();
        let ac = losses::action_contrastive(&fa[0], &fa[2], &fa[1], loss)
            .map_err(|e| in_term(e, LossTerm::Ac))?;
        terms[2] = scale * ac.value;
        let w_ac = weights.get(LossTerm::Ac);
        if w_ac != 0.0 {
            add_into(&mut grads[0].f_a, &ac.d_anchor, w_ac * scale);
            add_into(&mut grads[2].f_a, &ac.d_positive, w_ac * scale);
            add_into(&mut grads[1].f_a, &ac.d_negative, w_ac * scale);
        }

        let use_view = loss.view_loss_features == ViewLossFeatures::ViewBranch;
        let fv: Vec<Vec<f64>> = if use_view {
            bundles
                .iter()
                .map(|b| b.view_feature().map(losses::widen))
                .collect::<Result<_>>()?
        } else {
            fa
        };
        let vc = losses::view_contrastive(&fv[0], &fv[1], &fv[2], loss)
            .map_err(|e| in_term(e, LossTerm::Vc))?;
        terms[3] = scale * vc.value;
        let w_vc = weights.get(LossTerm::Vc);
        if w_vc != 0.0 {
            for (k, g) in [(0, &vc.d_anchor), (1, &vc.d_positive), (2, &vc.d_negative)] {
                let target = if use_view {
                    &mut grads[k].f_v
                } else {
                    &mut grads[k].f_a
                };
                add_into(target, g, w_vc * scale);
            }
        }

        let active = grads.iter().any(|g| {
            !(g.f_a.is_empty() && g.f_v.is_empty() && g.p_a.is_empty() && g.p_v.is_empty())
        });
        let grad = active.then(|| {
            let mut g = vec![0f32; model.num_params()];
            for (cache, bg) in caches.iter().zip(&grads) {
                model.backward(cache, bg, &mut g);
            }
            g
        });
        Ok(TripletOutcome { terms, grad })
    }

    /// One optimization step on `batch`. Returns the breakdown at the
    /// pre-update parameters.
    pub fn step(&self, state: &mut TrainState, batch: &[Triplet]) -> Result<LossBreakdown> {
        self.step_with_lr(state, batch, state.train.learning_rate)
    }

    /// [`Trainer::step`] with an explicit learning rate (0 is allowed here).
    pub fn step_with_lr(
        &self,
        state: &mut TrainState,
        batch: &[Triplet],
        lr: f64,
    ) -> Result<LossBreakdown> {
        let (breakdown, mut grad) =
            self.loss_and_grad(&state.model, batch, &state.train, &state.loss)?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            let name = state
                .model
                .param_specs()
                .iter()
                .find(|s| i >= s.offset && i < s.offset + s.len())
                .map(|s| s.name.clone())
                .unwrap_or_default();
            return Err(Error::NonFinite(format!(
                "gradient of {name} at step {}",
                state.step
            )));
        }
        clip_global_norm(&mut grad, state.train.grad_clip_norm);
        let (wd, hp) = (state.train.weight_decay, state.train.optimizer_params);
        state
            .optim
            .step(state.model.params_mut(), &grad, lr, wd, &hp);
        state.step += 1;
        Ok(breakdown)
    }

    /// Train-side accuracy at the current parameters.
    pub fn evaluate_train(&self, model: &SplitNet) -> Result<AccuracyReport> {
        let refs: Vec<&VideoClip> = self.clips.iter().collect();
        let bundles = model.forward_batch(&refs, self.exec)?;
        accuracy_from_bundles(&bundles, &refs, model.config())
    }

    /// Runs `state` to completion, writing metrics and checkpoints under `out_dir`.
    pub fn run(&self, state: &mut TrainState, out_dir: &Path) -> Result<TrainOutcome> {
        state.train.validate()?;
        state.loss.validate()?;
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let metrics_path = out_dir.join(METRICS_FILE);
        let mut log = MetricsLog::open(&metrics_path, state.step == 0)?;
        let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
        let bs = state.train.batch_size;
        while state.epoch < state.train.epochs {
            let batches = self.epoch_batches(state.seed, state.epoch, bs)?;
            while state.batch_cursor < batches.len() {
                let step = state.step;
                let b = self.step(state, &batches[state.batch_cursor])?;
                state.batch_cursor += 1;
                log.write(&StepRecord {
                    step,
                    epoch: state.epoch,
                    l_ace: b.l_ace,
                    l_vce: b.l_vce,
                    l_ac: b.l_ac,
                    l_vc: b.l_vc,
                    l_ortho: b.l_ortho,
                    total: b.total,
                    lr: state.train.learning_rate,
                })?;
                log::debug!("step {step} epoch {} total {:.5}", state.epoch, b.total);
                let every = |n: u64| n > 0 && state.step.is_multiple_of(n);
                if every(state.train.eval_every) {
                    let r = self.evaluate_train(&state.model)?;
                    log.write(&EvalRecord {
                        step: state.step,
                        split: "train".into(),
                        action_acc: r.action_accuracy,
                        view_acc: r.view_accuracy,
                    })?;
                    if state.best_metric.is_none_or(|m| r.action_accuracy > m) {
                        state.best_metric = Some(r.action_accuracy);
                    }
                }
                if every(state.train.checkpoint_every) {
                    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
                    checkpoint::save(
                        state,
                        &ckpt_dir.join(format!("step_{:06}.ckpt", state.step)),
                    )?;
                }
            }
            log::info!("epoch {} done at step {}", state.epoch, state.step);
            state.epoch += 1;
            state.batch_cursor = 0;
        }
        let final_path = out_dir.join(FINAL_CHECKPOINT);
        checkpoint::save(state, &final_path)?;
        Ok(TrainOutcome {
            final_checkpoint: final_path,
            metrics: metrics_path,
            steps: state.step,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: u64,
}

/// Fresh run from the seeded initialization.
#[allow(clippy::too_many_arguments)]
pub fn train(
    source: &dyn ClipSource,
    manifest: &DatasetManifest,
    split: &Split,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    loss: &ContrastiveConfig,
    out_dir: &Path,
    exec: Exec,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    loss.validate()?;
    let trainer = Trainer::new(source, manifest, split, exec)?;
    let mut state = TrainState::new(model_config, train_config, loss)?;
    trainer.run(&mut state, out_dir)
}

/// JSON Lines writer; appends when resuming.
pub struct MetricsLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsLog {
    pub fn open(path: &Path, truncate: bool) -> Result<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(!truncate)
            .truncate(truncate)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn in_term(e: Error, term: LossTerm) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("loss term l_{} ({what})", term.name())),
        other => other,
    }
}

fn narrow(g: &[f64], scale: f64) -> Vec<f32> {
    g.iter().map(|v| (v * scale) as f32).collect()
}

fn add_into(target: &mut Vec<f32>, g: &[f64], scale: f64) {
    if target.is_empty() {
        target.resize(g.len(), 0.0);
    }
    for (t, v) in target.iter_mut().zip(g) {
        *t += (v * scale) as f32;
    }
}
