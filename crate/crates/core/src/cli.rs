//! Command-line interface: argument parsing and dispatch to the library.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::desk::{self, DeskPlan};
use crate::error::{Error, Result};
use crate::evalsuite::{
    ablate_augmentations, crop_test, diagnostics, finetune_fraction, probe_checkpoint, write_json, EvalContext,
    EvalCrop, FinetuneConfig, ProbeConfig, TrainedProbe, PROBE_FILE,
};
use crate::objective::LossMode;
use crate::trainer::{pretrain, resolve_checkpoint, resume, Checkpoint, RunConfig};

/// Relative output directories are placed under this root when it is set.
pub const OUTPUT_ROOT_ENV: &str = "LEOCLR_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "leoclr", version, about = "Anchored contrastive pretraining and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain an encoder from a config file.
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Render SVG figures from metrics and result files.
    Plot(PlotArgs),
    /// Run the desk-scale comparison pipeline end to end.
    ReproduceDesk(DeskArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run config; every key has a default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override such as `loss.loss_mode=moco_baseline`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue from a checkpoint file or run directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, default_value_t = 100)]
    pub epochs: u64,
    #[arg(long, default_value_t = 30.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Pre-drawn augmented views per image; 0 draws fresh views each epoch.
    #[arg(long, default_value_t = 0)]
    pub cached_views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ProbeArgs {
    fn to_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            cached_views: self.cached_views,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Checkpoint file, or a run directory (its latest checkpoint is used).
    #[arg(long = "ckpt", alias = "checkpoint")]
    pub ckpt: PathBuf,
    /// Directory for result files; defaults to the checkpoint's run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CheckpointArg {
    fn load(&self) -> Result<(Checkpoint, PathBuf)> {
        let path = resolve_checkpoint(&self.ckpt)?;
        let ckpt = Checkpoint::load(&path)?;
        let out = match &self.out {
            Some(o) => resolve_output(o),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok((ckpt, out))
    }
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Linear probe on frozen backbone features.
    Linear {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Fine-tune the whole network on a labeled fraction.
    Finetune {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long, default_value_t = 30)]
        epochs: u64,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        /// Backbone learning-rate grid; the head uses ten times each value.
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.001])]
        lrs: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate the trained probe under center or random eval crops.
    CropTest {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value = "center")]
        mode: EvalCrop,
        /// Random crops averaged per image.
        #[arg(long, default_value_t = 1)]
        draws: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probe file; defaults to the one saved next to the checkpoint.
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// Pretrain and probe once per augmentation preset.
    AblateAugs {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = crate::viewgen::PRESETS.map(String::from))]
        presets: Vec<String>,
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embedding spread, class cosine gap, alignment and uniformity.
    Diagnostics {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use at most this many evaluation images.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// metrics.jsonl files, fine-tuning results and ablation grids.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DeskArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [LossMode::Leoclr, LossMode::MocoBaseline])]
    pub modes: Vec<LossMode>,
    #[arg(long, default_value_t = desk::DESK_EPOCHS)]
    pub epochs: u64,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Joins relative paths onto the output root from the environment, if set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path, &args.overrides)?,
        None => RunConfig::default().with_overrides(&args.overrides)?,
    };
    cfg.output_dir = resolve_output(&cfg.output_dir);
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_json(path, value)?;
    println!("{}", serde_json::to_string(value).expect("result serializes"));
    Ok(())
}

fn pretrain_cmd(args: &PretrainArgs) -> Result<()> {
    let outcome = match &args.resume {
        Some(ckpt) => {
            let expected = args.config.config.as_ref().map(|_| load_config(&args.config)).transpose()?;
            resume(ckpt, expected.as_ref(), None)?
        }
        None => pretrain(&load_config(&args.config)?, &args.config.overrides)?,
    };
    println!(
        "{}",
        serde_json::json!({
            "output_dir": outcome.output_dir,
            "checkpoint": outcome.checkpoint,
            "final_step": outcome.final_step,
            "steps_run": outcome.steps_run,
            "collapse_warnings": outcome.collapse_warnings,
        })
    );
    Ok(())
}

fn eval_cmd(cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Linear { ckpt, probe } => {
            let (ck, out) = ckpt.load()?;
            let (result, trained) = probe_checkpoint(&ck, &probe.to_config())?;
            trained.save(&out.join(PROBE_FILE))?;
            emit(&result, &out.join("linear.json"))
        }
        EvalCommand::Finetune {
            ckpt,
            fraction,
            epochs,
            batch_size,
            lrs,
            seed,
        } => {
            let (ck, out) = ckpt.load()?;
            let ctx = EvalContext::from_checkpoint(&ck)?;
            let cfg = FinetuneConfig {
                fraction: *fraction,
                epochs: *epochs,
                batch_size: *batch_size,
                backbone_lrs: lrs.clone(),
                seed: *seed,
                ..Default::default()
            };
            let result = finetune_fraction(&ctx.encoder, &ctx.policy, &ctx.train_manifest, &ctx.eval_manifest, &cfg)?;
            emit(&result, &out.join(format!("finetune_{fraction}.json")))
        }
        EvalCommand::CropTest {
            ckpt,
            mode,
            draws,
            seed,
            probe,
        } => {
            let (ck, out) = ckpt.load()?;
            let probe_path = probe.clone().unwrap_or_else(|| out.join(PROBE_FILE));
            let trained = TrainedProbe::load(&probe_path)?;
            let ctx = EvalContext::from_checkpoint(&ck)?;
            trained.check_compatible(&ctx.config_hash, ctx.step)?;
            let eval = ctx.eval_samples()?;
            let scale = ProbeConfig::default().crop_scale;
            let result = crop_test(&ctx.encoder, &trained, &ctx.policy, &eval, *mode, *draws, scale, *seed)?;
            let name = match mode {
                EvalCrop::Center => "crop_center.json",
                EvalCrop::Random => "crop_random.json",
            };
            emit(&result, &out.join(name))
        }
        EvalCommand::AblateAugs {
            config,
            presets,
            probe,
            out,
        } => {
            let cfg = load_config(config)?;
            let out = resolve_output(out);
            let grid = ablate_augmentations(&cfg, presets, &probe.to_config(), &out)?;
            println!("{}", serde_json::to_string(&grid).expect("grid serializes"));
            Ok(())
        }
        EvalCommand::Diagnostics { ckpt, seed, limit } => {
            let (ck, out) = ckpt.load()?;
            let ctx = EvalContext::from_checkpoint(&ck)?;
            let mut eval = ctx.eval_samples()?;
            if let Some(n) = limit {
                eval.truncate(*n);
            }
            let d = diagnostics(&ctx.encoder, &ctx.policy, &eval, *seed)?;
            emit(&d, &out.join("diagnostics.json"))
        }
    }
}

fn plot_cmd(args: &PlotArgs) -> Result<()> {
    for path in crate::plot::render(&args.inputs, &resolve_output(&args.out))? {
        println!("{}", path.display());
    }
    Ok(())
}

fn desk_cmd(args: &DeskArgs) -> Result<()> {
    let plan = DeskPlan {
        out: resolve_output(&args.out),
        seeds: args.seeds.clone(),
        modes: args.modes.clone(),
        epochs: args.epochs,
        jobs: args.jobs.max(1),
        ..DeskPlan::default()
    };
    let summary = desk::reproduce(&plan)?;
    println!("{}", summary.table());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Eval(c) => eval_cmd(c),
        Command::Plot(a) => plot_cmd(a),
        Command::ReproduceDesk(a) => desk_cmd(a),
    }
}

/// Formats an error as one line: `error[<kind>]: <message>`.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', "; ");
    format!("error[{}]: {msg}", e.kind())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            match e {
                Error::Config(_) | Error::UnknownPreset(_) | Error::ConfigMismatch(_) => 2,
                _ => 1,
            }
        }
    }
}
