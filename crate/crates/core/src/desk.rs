//! Desk-scale comparison pipeline: matched pretraining runs per loss mode and
//! seed, each followed by a linear probe and a random-crop test.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetRef;
use crate::encoder::ArchSpec;
use crate::error::{Error, Result};
use crate::evalsuite::{crop_test, probe_checkpoint, write_json, EvalContext, EvalCrop, ProbeConfig, PROBE_FILE};
use crate::objective::LossMode;
use crate::trainer::{pretrain, Checkpoint, QueueConfig, RunConfig};

pub const DESK_EPOCHS: u64 = 30;
pub const DESK_DRAWS: u32 = 3;

/// The matched small-CNN configuration shared by every desk comparison.
pub fn desk_config(mode: LossMode, seed: u64, epochs: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        epochs,
        batch_size: 64,
        key_momentum: 0.99,
        dataset: DatasetRef::default(),
        arch: ArchSpec::small_cnn(16, 64),
        queue: QueueConfig {
            size: 1024,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    cfg.loss.loss_mode = mode;
    cfg
}

pub fn desk_probe(seed: u64) -> ProbeConfig {
    ProbeConfig {
        epochs: 30,
        lr: 1.0,
        batch_size: 128,
        cached_views: 5,
        standardize: true,
        seed,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskRow {
    pub loss_mode: String,
    pub preset: String,
    pub seed: u64,
    pub center_top1: f64,
    pub random_top1: f64,
    pub checkpoint: PathBuf,
    pub config_hash: String,
}

impl DeskRow {
    /// Center-crop minus random-crop accuracy.
    pub fn degradation(&self) -> f64 {
        self.center_top1 - self.random_top1
    }
}

/// Pretrains `cfg`, probes the final checkpoint and runs the random-crop
/// test, writing result files into the run directory.
pub fn run_one(cfg: &RunConfig, probe: &ProbeConfig, draws: u32) -> Result<DeskRow> {
    let run = pretrain(cfg, &[])?;
    let ckpt = Checkpoint::load(&run.checkpoint)?;
    let (center, trained) = probe_checkpoint(&ckpt, probe)?;
    let ctx = EvalContext::from_checkpoint(&ckpt)?;
    let eval = ctx.eval_samples()?;
    let random = crop_test(&ctx.encoder, &trained, &ctx.policy, &eval, EvalCrop::Random, draws, probe.crop_scale, probe.seed)?;
    let dir = &cfg.output_dir;
    trained.save(&dir.join(PROBE_FILE))?;
    write_json(&dir.join("linear.json"), &center)?;
    write_json(&dir.join("crop_random.json"), &random)?;
    Ok(DeskRow {
        loss_mode: cfg.loss.loss_mode.name().to_string(),
        preset: cfg.aug_preset.clone(),
        seed: cfg.seed,
        center_top1: center.top1,
        random_top1: random.top1,
        checkpoint: run.checkpoint,
        config_hash: cfg.hash(),
    })
}

/// One-sided sign-test p-value: chance of at least `wins` successes out of
/// `n` fair coin flips.
pub fn sign_test(wins: usize, n: usize) -> f64 {
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskPlan {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub modes: Vec<LossMode>,
    pub preset: String,
    pub epochs: u64,
    pub draws: u32,
    pub jobs: usize,
}

impl Default for DeskPlan {
    fn default() -> Self {
        Self {
            out: PathBuf::from("desk"),
            seeds: vec![0, 1, 2],
            modes: vec![LossMode::Leoclr, LossMode::MocoBaseline],
            preset: "baseline".into(),
            epochs: DESK_EPOCHS,
            draws: DESK_DRAWS,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeskSummary {
    pub rows: Vec<DeskRow>,
}

impl DeskSummary {
    pub fn rows_for(&self, mode: &str) -> Vec<&DeskRow> {
        self.rows.iter().filter(|r| r.loss_mode == mode).collect()
    }

    pub fn mean_center(&self, mode: &str) -> f64 {
        let rows = self.rows_for(mode);
        rows.iter().map(|r| r.center_top1).sum::<f64>() / rows.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("loss_mode,preset,seed,center_top1,random_top1,degradation,config_hash\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.loss_mode,
                r.preset,
                r.seed,
                r.center_top1,
                r.random_top1,
                r.degradation(),
                r.config_hash
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<22}{:>6}{:>10}{:>10}{:>10}\n", "mode", "seed", "center", "random", "drop");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22}{:>6}{:>10.4}{:>10.4}{:>10.4}",
                r.loss_mode,
                r.seed,
                r.center_top1,
                r.random_top1,
                r.degradation()
            );
        }
        out
    }
}

/// Runs every (mode, seed) pair of the plan with up to `jobs` concurrent
/// runs and writes `summary.json` and `summary.csv` under `plan.out`.
pub fn reproduce(plan: &DeskPlan) -> Result<DeskSummary> {
    let work: Vec<RunConfig> = plan
        .modes
        .iter()
        .flat_map(|&m| plan.seeds.iter().map(move |&s| (m, s)))
        .map(|(mode, seed)| {
            let mut cfg = desk_config(mode, seed, plan.epochs);
            cfg.aug_preset = plan.preset.clone();
            cfg.output_dir = plan.out.join(format!("{}-{}-seed{seed}", mode.name(), plan.preset));
            cfg
        })
        .collect();
    for cfg in &work {
        cfg.validate()?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<DeskRow>>>> = Mutex::new((0..work.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..plan.jobs.clamp(1, work.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = work.get(i) else { break };
                let r = run_one(cfg, &desk_probe(cfg.seed), plan.draws);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    let rows = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let summary = DeskSummary { rows };
    std::fs::create_dir_all(&plan.out).map_err(|e| Error::io(&plan.out, e))?;
    write_json(&plan.out.join("summary.json"), &summary)?;
    let csv = plan.out.join("summary.csv");
    std::fs::write(&csv, summary.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(summary)
}
