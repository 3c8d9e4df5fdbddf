use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use viewsplit::config::RunConfig;
use viewsplit::evaluator::{self, Branch, Side, ABLATION_MASKS};
use viewsplit::losses::LossWeights;
use viewsplit::splits::{Protocol, Split};
use viewsplit::synthdata::{self, DatasetManifest, MANIFEST_FILE};
use viewsplit::trainer::{TrainState, Trainer};
use viewsplit::{checkpoint, Error, Exec};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "viewsplit",
    version,
    about = "View-disentangled action recognition on synthetic multi-view video"
)]
struct Cli {
    /// Run every per-clip map sequentially instead of on the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON object with flat dotted keys, e.g. {"train.epochs": 5}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, `key=value`; applied after the file, last wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing dataset directory.
        #[arg(long)]
        force: bool,
    },
    /// Train one model; writes config.json, split.json, metrics.jsonl and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of ace,vce,ac,vc,ortho.
        #[arg(long)]
        loss_mask: Option<String>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Accuracy report (JSON on stdout).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value = "test")]
        side: Side,
    },
    /// Distance table, embeddings and probe report.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long = "ref")]
        reference: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        side: Side,
    },
    /// Train one model per (loss mask, seed) and report test accuracy per mask.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Semicolon-separated masks such as `ace,ac,ortho;ace,vce,ac,vc,ortho`.
        /// Defaults to the six standard ablation masks.
        #[arg(long)]
        masks: Option<String>,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config { .. }) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn config_failure(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error,
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)
            .with_context(|| format!("reading config {}", p.display()))
            .map_err(config_failure)?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            config_failure(anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))
        })?;
        cfg.set_str(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    evaluator::write_json(path, value).with_context(|| format!("writing {}", path.display()))
}

fn load_data(dir: &Path) -> anyhow::Result<DatasetManifest> {
    synthdata::load_manifest(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn gen_data(cfg: RunConfig, out: &Path, force: bool) -> CmdResult {
    cfg.validate()?;
    if out.join(MANIFEST_FILE).exists() && !force {
        return Err(anyhow::anyhow!(
            "refusing to overwrite existing dataset at {} (pass --force)",
            out.display()
        )
        .into());
    }
    let manifest = synthdata::generate_dataset(&cfg.data, out)?;
    log::info!(
        "wrote {} clips to {}",
        manifest.records.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    mut cfg: RunConfig,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    loss_mask: Option<&str>,
    resume: Option<&Path>,
    exec: Exec,
) -> CmdResult {
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(m) = loss_mask {
        cfg.train.loss_weights = LossWeights::parse_mask(m)?;
    }
    cfg.validate()?;
    let manifest = load_data(data)?;
    let model_config = cfg.model_config_for_manifest(&manifest);
    model_config.validate()?;
    let split = cfg.split.make(&manifest)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), &cfg.to_flat())?;
    split.save(&out.join("split.json"))?;
    let trainer = Trainer::new(&manifest, &manifest, &split, exec)?;
    let mut state = match resume {
        Some(p) => checkpoint::load_expecting(p, &model_config)
            .with_context(|| format!("resuming from {}", p.display()))?,
        None => TrainState::new(&model_config, &cfg.train, &cfg.loss)?,
    };
    let outcome = trainer.run(&mut state, out)?;
    log::info!(
        "{} steps; final checkpoint {}",
        outcome.steps,
        outcome.final_checkpoint.display()
    );
    Ok(())
}

fn load_split(path: &Path) -> anyhow::Result<Split> {
    Split::load(path).with_context(|| format!("loading split {}", path.display()))
}

fn eval(checkpoint: &Path, data: &Path, split: &Path, side: Side, exec: Exec) -> CmdResult {
    let model = checkpoint::load_model(checkpoint)?;
    let manifest = load_data(data)?;
    let split = load_split(split)?;
    let report = evaluator::evaluate(&model, &manifest, &manifest, &split, side, exec)?;
    let text = serde_json::to_string_pretty(&report).context("serializing report")?;
    println!("{text}");
    Ok(())
}

fn analyze(
    ckpt: &Path,
    data: &Path,
    split: &Path,
    reference: &str,
    out: &Path,
    side: Side,
    exec: Exec,
) -> CmdResult {
    let state = checkpoint::load(ckpt)?;
    let (model, loss) = (&state.model, &state.loss);
    let manifest = load_data(data)?;
    let split = load_split(split)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let table = evaluator::distance_table(
        model, &manifest, &manifest, &split, side, reference, loss, exec,
    )?;
    table.write_csv(&out.join("distance_table.csv"))?;
    let probe = evaluator::probe(model, &manifest, &manifest, &split, loss, exec)?;
    write_json(&out.join("probe_report.json"), &probe)?;

    let embeddings = out.join("embeddings.csv");
    if split.protocol == Protocol::CrossView {
        let (report, features) =
            evaluator::unseen_view_separation(model, &manifest, &manifest, &split, loss, exec)?;
        evaluator::write_embeddings_csv(&embeddings, &features, Branch::View)?;
        write_json(&out.join("separation_report.json"), &report)?;
    } else {
        let features = evaluator::side_features(model, &manifest, &manifest, &split, side, exec)?;
        evaluator::write_embeddings_csv(&embeddings, &features, Branch::View)?;
    }
    Ok(())
}

fn parse_masks(spec: Option<&str>) -> Result<Vec<[u8; 5]>, Failure> {
    let Some(spec) = spec else {
        return Ok(ABLATION_MASKS.to_vec());
    };
    spec.split(';')
        .filter(|m| !m.trim().is_empty())
        .map(|m| Ok(LossWeights::parse_mask(m)?.mask_bits()))
        .collect()
}

fn ablate(
    cfg: RunConfig,
    data: &Path,
    out: &Path,
    seeds: &[u64],
    masks: Option<&str>,
    exec: Exec,
) -> CmdResult {
    cfg.validate()?;
    let masks = parse_masks(masks)?;
    for &m in &masks {
        evaluator::mask_weights(m)?;
    }
    let manifest = load_data(data)?;
    let model_config = cfg.model_config_for_manifest(&manifest);
    model_config.validate()?;
    let split = cfg.split.make(&manifest)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), &cfg.to_flat())?;
    split.save(&out.join("split.json"))?;
    let rows = evaluator::ablate(
        &manifest,
        &manifest,
        &split,
        &model_config,
        &cfg.train,
        &cfg.loss,
        &masks,
        seeds,
        out,
        exec,
    )?;
    write_json(&out.join("ablation_report.json"), &rows)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.command {
        Command::GenData { cfg, out, force } => gen_data(load_config(&cfg)?, &out, force),
        Command::Train {
            cfg,
            data,
            out,
            seed,
            loss_mask,
            resume,
        } => train(
            load_config(&cfg)?,
            &data,
            &out,
            seed,
            loss_mask.as_deref(),
            resume.as_deref(),
            exec,
        ),
        Command::Eval {
            checkpoint,
            data,
            split,
            side,
        } => eval(&checkpoint, &data, &split, side, exec),
        Command::Analyze {
            checkpoint,
            data,
            split,
            reference,
            out,
            side,
        } => analyze(&checkpoint, &data, &split, &reference, &out, side, exec),
        Command::Ablate {
            cfg,
            data,
            out,
            seeds,
            masks,
        } => ablate(
            load_config(&cfg)?,
            &data,
            &out,
            &seeds,
            masks.as_deref(),
            exec,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
