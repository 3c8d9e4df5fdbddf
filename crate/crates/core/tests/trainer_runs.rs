mod fixtures;

use std::fs;

use fixtures::{tiny_dataset, tiny_model, tiny_synth, LoggingSource, PoisonedSource};
use viewsplit::checkpoint;
use viewsplit::losses::{ContrastiveConfig, LossTerm, LossWeights};
use viewsplit::model::ModelConfig;
use viewsplit::splits::{make_split, Protocol};
use viewsplit::synthdata::{generate_dataset, SynthConfig};
use viewsplit::trainer::{
    train, StepRecord, TrainConfig, TrainState, Trainer, FINAL_CHECKPOINT, METRICS_FILE,
};
use viewsplit::{Error, Exec};

fn small_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn step_zero_is_deterministic_and_exec_independent() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(dir.path());
    let mc = tiny_model(&tiny_synth());
    let tc = small_train();
    let loss = ContrastiveConfig::default();
    let mut results = Vec::new();
    for exec in [Exec::Sequential, Exec::Parallel, Exec::Sequential] {
        let t = Trainer::new(&m, &m, &split, exec).unwrap();
        let mut st = TrainState::new(&mc, &tc, &loss).unwrap();
        let batch = &t.epoch_batches(st.seed, 0, tc.batch_size).unwrap()[0];
        let b = t.step(&mut st, batch).unwrap();
        results.push((b, st.model.params().to_vec()));
    }
    assert_eq!(results[0], results[1]);
    assert_eq!(results[0], results[2]);
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(dir.path());
    let mc = tiny_model(&tiny_synth());
    let tc = TrainConfig {
        loss_weights: LossWeights([0.0; 5]),
        weight_decay: 0.0,
        ..small_train()
    };
    let t = Trainer::new(&m, &m, &split, Exec::default()).unwrap();
    let mut st = TrainState::new(&mc, &tc, &ContrastiveConfig::default()).unwrap();
    let before = st.model.params().to_vec();
    for batch in t.epoch_batches(st.seed, 0, 4).unwrap() {
        let b = t.step(&mut st, &batch).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(b.l_ace > 0.0);
    }
    assert_eq!(st.model.params(), &before[..]);
}

#[test]
fn zero_learning_rate_still_reports_losses() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(dir.path());
    let mc = tiny_model(&tiny_synth());
    let t = Trainer::new(&m, &m, &split, Exec::default()).unwrap();
    let mut st = TrainState::new(&mc, &small_train(), &ContrastiveConfig::default()).unwrap();
    let before = st.model.params().to_vec();
    let batch = &t.epoch_batches(st.seed, 0, 4).unwrap()[0];
    let b = t.step_with_lr(&mut st, batch, 0.0).unwrap();
    assert!(b.total.is_finite() && b.total > 0.0);
    assert_eq!(st.model.params(), &before[..]);
}

#[test]
fn masked_terms_contribute_no_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(dir.path());
    let mc = tiny_model(&tiny_synth());
    let t = Trainer::new(&m, &m, &split, Exec::default()).unwrap();
    let st = TrainState::new(&mc, &small_train(), &ContrastiveConfig::default()).unwrap();
    let batch = &t.epoch_batches(st.seed, 0, 8).unwrap()[0];
    let grad_for = |w: [f64; 5]| {
        let tc = TrainConfig {
            loss_weights: LossWeights(w),
            ..small_train()
        };
        t.loss_and_grad(&st.model, batch, &tc, &st.loss).unwrap().1
    };
    let full = grad_for([1.0; 5]);
    let scale = full.iter().fold(0f32, |a, g| a.max(g.abs()));
    for term in LossTerm::ALL {
        let mut without = [1.0; 5];
        without[term.index()] = 0.0;
        let mut only = [0.0; 5];
        only[term.index()] = 1.0;
        let (g_without, g_only) = (grad_for(without), grad_for(only));
        for i in 0..full.len() {
            let recombined = g_without[i] + g_only[i];
            assert!(
                (recombined - full[i]).abs() <= 1e-4 * scale,
                "{}: coordinate {i}: {recombined} vs {}",
                term.name(),
                full[i]
            );
        }
    }
}

#[test]
fn two_steps_on_one_batch_usually_descend() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(dir.path());
    let mc = tiny_model(&tiny_synth());
    let t = Trainer::new(&m, &m, &split, Exec::default()).unwrap();
    let mut descended = 0;
    for seed in 0..100 {
        let tc = TrainConfig {
            seed,
            ..small_train()
        };
        let mut st = TrainState::new(&mc, &tc, &ContrastiveConfig::default()).unwrap();
        let batch = t.epoch_batches(seed, 0, 8).unwrap().remove(0);
        let first = t.step(&mut st, &batch).unwrap().total;
        let second = t.step(&mut st, &batch).unwrap().total;
        descended += usize::from(second <= first);
    }
    assert!(descended >= 95, "descended in {descended}/100 trials");
}

#[test]
fn one_epoch_on_default_data_logs_ceil_train_over_batch_steps() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig::default();
    let data = dir.path().join("data");
    let m = generate_dataset(&synth, &data).unwrap();
    let split = make_split(&m, Protocol::CrossSubject, &[6, 7]).unwrap();
    let mc = ModelConfig {
        arch: Default::default(),
        input: synth.dims(),
        num_actions: synth.num_actions,
        num_views: synth.num_views,
    };
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let out = dir.path().join("run");
    let outcome = train(
        &m,
        &m,
        &split,
        &mc,
        &tc,
        &ContrastiveConfig::default(),
        &out,
        Exec::default(),
    )
    .unwrap();
    let want = split.train_ids.len().div_ceil(32) as u64;
    assert_eq!(outcome.steps, want);
    let lines = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    let steps: Vec<StepRecord> = lines
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(steps.len() as u64, want);
    assert_eq!(
        steps.iter().map(|s| s.step).collect::<Vec<_>>(),
        (0..want).collect::<Vec<_>>()
    );
}

#[test]
fn resumed_step_matches_uninterrupted_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(dir.path());
    let mc = tiny_model(&tiny_synth());
    let t = Trainer::new(&m, &m, &split, Exec::default()).unwrap();
    let mut st = TrainState::new(&mc, &small_train(), &ContrastiveConfig::default()).unwrap();
    let batches = t.epoch_batches(st.seed, 0, 4).unwrap();
    for b in &batches[..2] {
        t.step(&mut st, b).unwrap();
    }
    st.batch_cursor = 2;
    let bytes = checkpoint::encode(&st).unwrap();
    let mut restored = checkpoint::decode(&bytes).unwrap();
    let a = t.step(&mut st, &batches[2]).unwrap();
    let b = t.step(&mut restored, &batches[2]).unwrap();
    assert_eq!(a, b);
    assert_eq!(st.model.params(), restored.model.params());
    assert_eq!(st.optim, restored.optim);
}

#[test]
fn interrupted_run_resumes_to_identical_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(dir.path());
    let mc = tiny_model(&tiny_synth());
    let loss = ContrastiveConfig::default();
    let t = Trainer::new(&m, &m, &split, Exec::default()).unwrap();

    let tc = TrainConfig {
        checkpoint_every: 3,
        ..small_train()
    };
    let full = dir.path().join("full");
    let mut st = TrainState::new(&mc, &tc, &loss).unwrap();
    t.run(&mut st, &full).unwrap();

    let mut resumed = checkpoint::load(&full.join("checkpoints/step_000003.ckpt")).unwrap();
    let part = dir.path().join("part");
    t.run(&mut resumed, &part).unwrap();
    assert_eq!(
        fs::read(full.join(FINAL_CHECKPOINT)).unwrap(),
        fs::read(part.join(FINAL_CHECKPOINT)).unwrap()
    );
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(dir.path());
    let mc = tiny_model(&tiny_synth());
    let t = Trainer::new(&m, &m, &split, Exec::default()).unwrap();
    let mut st = TrainState::new(&mc, &small_train(), &ContrastiveConfig::default()).unwrap();
    let batch = &t.epoch_batches(st.seed, 0, 4).unwrap()[0];
    t.step(&mut st, batch).unwrap();
    st.best_metric = Some(0.25);

    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    checkpoint::save(&st, &p1).unwrap();
    let loaded = checkpoint::load(&p1).unwrap();
    checkpoint::save(&loaded, &p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(loaded.step, 1);
    assert_eq!(loaded.best_metric, Some(0.25));

    let bytes = fs::read(&p1).unwrap();
    let truncated = dir.path().join("t.ckpt");
    fs::write(&truncated, &bytes[..bytes.len() - 100]).unwrap();
    let err = checkpoint::load(&truncated).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");

    let mut other = mc.clone();
    other.arch.d_model = 12;
    other.arch.attention_heads = 3;
    let err = checkpoint::load_expecting(&p1, &other).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
    let first_mismatch = viewsplit::model::SplitNet::init(&other, 0)
        .unwrap()
        .param_specs()
        .iter()
        .zip(loaded.model.param_specs())
        .find(|(a, b)| a.shape != b.shape)
        .map(|(a, _)| a.name.clone())
        .unwrap();
    assert!(
        err.to_string().contains(&first_mismatch),
        "{err} should name {first_mismatch}"
    );
}

#[test]
fn training_never_reads_test_clips() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(&dir.path().join("data"));
    let mc = tiny_model(&tiny_synth());
    let tc = TrainConfig {
        eval_every: 2,
        checkpoint_every: 2,
        ..small_train()
    };
    let source = LoggingSource::new(&m);
    train(
        &source,
        &m,
        &split,
        &mc,
        &tc,
        &ContrastiveConfig::default(),
        &dir.path().join("run"),
        Exec::default(),
    )
    .unwrap();
    let seen = source.seen.lock().unwrap();
    assert!(!seen.is_empty());
    for id in &split.test_ids {
        assert!(
            !seen.contains(id),
            "test clip {id} was read during training"
        );
    }
    let log = fs::read_to_string(dir.path().join("run").join(METRICS_FILE)).unwrap();
    assert!(log.lines().any(|l| l.contains("\"split\":\"train\"")));
    assert!(!log.contains("\"split\":\"test\""));
}

#[test]
fn non_finite_loss_aborts_and_keeps_previous_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(&dir.path().join("data"));
    let mc = tiny_model(&tiny_synth());
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    let sentinel = out.join(FINAL_CHECKPOINT);
    fs::write(&sentinel, b"previous").unwrap();
    let source = PoisonedSource {
        inner: &m,
        clip_id: split.train_ids[0].clone(),
    };
    let err = train(
        &source,
        &m,
        &split,
        &mc,
        &small_train(),
        &ContrastiveConfig::default(),
        &out,
        Exec::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(err.to_string().contains("l_"), "{err}");
    assert_eq!(fs::read(&sentinel).unwrap(), b"previous");
}

#[test]
fn full_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (m, split) = tiny_dataset(&dir.path().join("data"));
    let mc = tiny_model(&tiny_synth());
    let run = |name: &str| {
        let out = dir.path().join(name);
        train(
            &m,
            &m,
            &split,
            &mc,
            &small_train(),
            &ContrastiveConfig::default(),
            &out,
            Exec::default(),
        )
        .unwrap();
        (
            fs::read_to_string(out.join(METRICS_FILE)).unwrap(),
            fs::read(out.join(FINAL_CHECKPOINT)).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}
