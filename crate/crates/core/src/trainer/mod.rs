//! Pretraining loop.
//!
//! Each step builds view triplets, encodes queries and keys, evaluates the
//! mode-selected loss, updates `f_q` by SGD, moves `f_k` by EMA and only then
//! pushes the step's keys into the negative queue.

mod checkpoint;
mod metrics;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_name, resolve_checkpoint, Checkpoint, QueueState, FORMAT_VERSION, LATEST};
pub use metrics::{read_metrics, MetricsRecord, METRICS_FILE, METRICS_SCHEMA};

use crate::config;
use crate::dataset::{materialize, DatasetRef, ImageSample, SplitTag};
use crate::encoder::{embedding_std, ArchSpec, Backbone, EmbeddingBatch, EncoderPair, PairMode};
use crate::error::{Error, Result};
use crate::negatives::{EnqueuePolicy, NegativeQueue};
use crate::nn::Tensor;
use crate::objective::{total_loss_with_grad, ContrastiveConfig, LossInputs, LossMode};
use crate::optim::{LrSchedule, Sgd, SgdConfig};
use crate::seeding::{self, hash_str, tag};
use crate::viewgen::{make_views_with, stack, AnchorCrop, AugmentationPolicy, ViewTriplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    pub size: usize,
    pub enqueue: EnqueuePolicy,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            size: 4096,
            enqueue: EnqueuePolicy::Both,
        }
    }
}

/// Everything that determines a pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: u64,
    pub batch_size: usize,
    /// EMA coefficient of the key encoder.
    pub key_momentum: f64,
    pub output_dir: PathBuf,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub collapse_floor: f64,
    pub collapse_warmup_steps: u64,
    /// Record elapsed seconds in metrics (makes the stream non-reproducible).
    pub log_wall_time: bool,
    /// Named augmentation preset applied on top of `aug`.
    pub aug_preset: String,
    pub dataset: DatasetRef,
    pub arch: ArchSpec,
    pub loss: ContrastiveConfig,
    pub aug: AugmentationPolicy,
    pub optimizer: SgdConfig,
    pub schedule: LrSchedule,
    pub queue: QueueConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 200,
            batch_size: 256,
            key_momentum: 0.999,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            collapse_floor: 0.01,
            collapse_warmup_steps: 100,
            log_wall_time: false,
            aug_preset: "baseline".into(),
            dataset: DatasetRef::default(),
            arch: ArchSpec::default(),
            loss: ContrastiveConfig::default(),
            aug: AugmentationPolicy::default(),
            optimizer: SgdConfig::default(),
            schedule: LrSchedule::default(),
            queue: QueueConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let cfg: Self = config::load_toml(path, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let text = config::to_toml(self)?;
        let cfg: Self = config::parse_with_overrides(&text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fields that cannot change the training trajectory are blanked.
    fn trajectory_view(&self) -> Self {
        Self {
            output_dir: PathBuf::new(),
            checkpoint_every: 0,
            log_wall_time: false,
            ..self.clone()
        }
    }

    pub fn hash(&self) -> String {
        config::config_hash(&self.trajectory_view())
    }

    pub fn diff(&self, other: &Self) -> Vec<String> {
        config::diff_report(&self.trajectory_view(), &other.trajectory_view())
    }

    pub fn pair_mode(&self) -> PairMode {
        if self.loss.loss_mode.is_end_to_end() {
            PairMode::EndToEnd
        } else {
            PairMode::MomentumContrast
        }
    }

    pub fn anchor_crop(&self) -> AnchorCrop {
        match self.loss.loss_mode {
            LossMode::RandomAnchor => AnchorCrop::RandomCrop,
            _ => AnchorCrop::Resize,
        }
    }

    /// The augmentation policy with the preset applied.
    pub fn view_policy(&self) -> Result<AugmentationPolicy> {
        self.aug.clone().with_preset(&self.aug_preset)
    }

    /// Keys pushed into the queue per step.
    pub fn keys_per_step(&self) -> usize {
        match (self.loss.loss_mode, self.queue.enqueue) {
            (LossMode::MocoBaseline, _) | (_, EnqueuePolicy::FirstOnly) => self.batch_size,
            _ => 2 * self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.key_momentum) {
            return fail(format!("key_momentum must lie in [0, 1), got {}", self.key_momentum));
        }
        if !self.loss.loss_mode.is_end_to_end() && self.queue.size < self.keys_per_step() {
            return fail(format!(
                "queue.size {} is smaller than the {} keys enqueued per step",
                self.queue.size,
                self.keys_per_step()
            ));
        }
        if self.loss.loss_mode.is_end_to_end() && self.batch_size < 2 {
            return fail("in-batch negatives need batch_size >= 2".into());
        }
        if self.collapse_floor.is_nan() || self.collapse_floor < 0.0 {
            return fail("collapse_floor must be non-negative".into());
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.arch.validate()?;
        let policy = self.view_policy()?;
        policy.validate()?;
        if let Backbone::TinyMlp { input_dim, .. } = self.arch.backbone {
            let want = 3 * (policy.output_size as usize).pow(2);
            if input_dim != want {
                return fail(format!("tiny_mlp input_dim {input_dim} does not match 3 x {0} x {0}", policy.output_size));
            }
        }
        Ok(())
    }
}

/// Negatives seen by the loss and keys enqueued during the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub negatives: Option<Array2<f64>>,
    pub enqueued: Option<Array2<f64>>,
}

pub struct Trainer {
    config: RunConfig,
    policy: AugmentationPolicy,
    pub pair: EncoderPair,
    pub optimizer: Sgd,
    pub queue: Option<NegativeQueue>,
    step: u64,
    samples: Vec<ImageSample>,
    steps_per_epoch: u64,
    started: Instant,
    last_trace: Option<StepTrace>,
}

impl Trainer {
    pub fn new(config: RunConfig, samples: Vec<ImageSample>) -> Result<Self> {
        config.validate()?;
        if samples.len() < config.batch_size {
            return Err(Error::Config(format!(
                "batch_size {} exceeds dataset size {}",
                config.batch_size,
                samples.len()
            )));
        }
        let pair = EncoderPair::init(&config.arch, config.key_momentum, config.pair_mode(), config.seed)?;
        let queue = if config.loss.loss_mode.is_end_to_end() {
            None
        } else {
            Some(primed_queue(&config)?)
        };
        Ok(Self {
            policy: config.view_policy()?,
            optimizer: Sgd::new(config.optimizer),
            steps_per_epoch: (samples.len() / config.batch_size) as u64,
            config,
            pair,
            queue,
            step: 0,
            samples,
            started: Instant::now(),
            last_trace: None,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, samples: Vec<ImageSample>) -> Result<Self> {
        let mut t = Self::new(ckpt.config.clone(), samples)?;
        t.pair.query.load_state_tensors(&ckpt.query)?;
        t.pair.key.load_state_tensors(&ckpt.key)?;
        t.optimizer.load_state(ckpt.velocity.clone());
        t.queue = match &ckpt.queue {
            Some(q) => Some(NegativeQueue::from_state(q.buffer.clone(), q.write_pointer, q.filled)?),
            None => None,
        };
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        self.config.epochs * self.steps_per_epoch
    }

    pub fn last_trace(&self) -> Option<&StepTrace> {
        self.last_trace.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config: self.config.clone(),
            query: self.pair.query.state_tensors(),
            key: self.pair.key.state_tensors(),
            velocity: self.optimizer.state().to_vec(),
            queue: self.queue.as_ref().map(|q| {
                let (buffer, write_pointer, filled) = q.state();
                QueueState {
                    buffer: buffer.clone(),
                    write_pointer,
                    filled,
                }
            }),
        }
    }

    /// Sample indices of the batch at `step`; each epoch is a seeded permutation.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let epoch = step / self.steps_per_epoch;
        let offset = (step % self.steps_per_epoch) as usize * self.config.batch_size;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut seeding::stream(self.config.seed, &[tag::EPOCH_ORDER, epoch]));
        order[offset..offset + self.config.batch_size].to_vec()
    }

    fn views(&self, batch: &[&ImageSample], epoch: u64) -> Result<Vec<ViewTriplet>> {
        batch
            .iter()
            .map(|s| {
                let mut rng = seeding::stream(self.config.seed, &[tag::VIEWS, epoch, hash_str(&s.sample_id)]);
                make_views_with(s, &self.policy, self.config.anchor_crop(), &mut rng)
            })
            .collect()
    }

    /// Runs the step scheduled at the current position of the data order.
    pub fn train_step(&mut self) -> Result<MetricsRecord> {
        let idx = self.batch_indices(self.step);
        let samples = std::mem::take(&mut self.samples);
        let batch: Vec<&ImageSample> = idx.iter().map(|&i| &samples[i]).collect();
        let out = self.train_step_on(&batch);
        self.samples = samples;
        out
    }

    /// One optimization step on an explicit batch.
    pub fn train_step_on(&mut self, batch: &[&ImageSample]) -> Result<MetricsRecord> {
        let epoch = self.step / self.steps_per_epoch.max(1);
        let lr = self
            .config
            .schedule
            .lr(self.step, self.total_steps(), self.config.optimizer.lr);
        let triplets = self.views(batch, epoch)?;
        let col = |f: fn(&ViewTriplet) -> &crate::viewgen::ViewImage| {
            stack(&triplets.iter().map(f).collect::<Vec<_>>())
        };
        let (anchors, crops1, crops2) = (col(|t| &t.anchor), col(|t| &t.view1), col(|t| &t.view2));
        let b = batch.len();
        let ids = || batch.iter().map(|s| s.sample_id.clone()).collect::<Vec<_>>();
        let mode = self.config.loss.loss_mode;

        self.pair.query.zero_grad();
        // Query-side inputs are stacked into one forward pass so a single
        // backward covers every differentiable embedding.
        let query_parts: Vec<&Tensor> = match mode {
            LossMode::Leoclr | LossMode::RandomAnchor => vec![&anchors],
            LossMode::MocoBaseline => vec![&crops1],
            LossMode::AttractAll => vec![&anchors, &crops1],
            LossMode::EndToEnd => vec![&anchors, &crops1, &crops2],
            LossMode::EndToEndBaseline => vec![&crops1, &crops2],
        };
        let query_in = concat(&query_parts);
        let q = self.pair.encode_query(query_in)?;
        let part = |k: usize| EmbeddingBatch {
            vectors: q.vectors.slice(s![k * b..(k + 1) * b, ..]).to_owned(),
            normalized: true,
        };
        let parts: Vec<EmbeddingBatch> = (0..query_parts.len()).map(part).collect();

        let keys: Vec<EmbeddingBatch> = match mode {
            LossMode::Leoclr | LossMode::RandomAnchor | LossMode::AttractAll => {
                vec![self.pair.encode_key(crops1.clone())?, self.pair.encode_key(crops2.clone())?]
            }
            LossMode::MocoBaseline => vec![self.pair.encode_key(crops2.clone())?],
            _ => Vec::new(),
        };
        if q.vectors.iter().chain(keys.iter().flat_map(|k| k.vectors.iter())).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: self.step,
                batch_ids: ids(),
            });
        }

        let negatives = match &self.queue {
            Some(queue) => Some(queue.negatives_view()?),
            None => None,
        };
        let inputs = match mode {
            LossMode::Leoclr | LossMode::RandomAnchor => LossInputs {
                anchor: &parts[0],
                view1: &keys[0],
                view2: &keys[1],
                view1_query: None,
                negatives: negatives.as_ref(),
            },
            LossMode::AttractAll => LossInputs {
                anchor: &parts[0],
                view1: &keys[0],
                view2: &keys[1],
                view1_query: Some(&parts[1]),
                negatives: negatives.as_ref(),
            },
            LossMode::MocoBaseline => LossInputs {
                anchor: &parts[0],
                view1: &keys[0],
                view2: &keys[0],
                view1_query: None,
                negatives: negatives.as_ref(),
            },
            LossMode::EndToEnd => LossInputs {
                anchor: &parts[0],
                view1: &parts[1],
                view2: &parts[2],
                view1_query: None,
                negatives: None,
            },
            LossMode::EndToEndBaseline => LossInputs {
                anchor: &parts[0],
                view1: &parts[1],
                view2: &parts[1],
                view1_query: None,
                negatives: None,
            },
        };
        let (loss, grads) = match total_loss_with_grad(&inputs, &self.config.loss) {
            Ok(r) => r,
            Err(Error::Contract(_)) => {
                return Err(Error::NonFinite {
                    step: self.step,
                    batch_ids: ids(),
                })
            }
            Err(e) => return Err(e),
        };

        let grad_parts: Vec<Array2<f64>> = match mode {
            LossMode::Leoclr | LossMode::RandomAnchor | LossMode::MocoBaseline => vec![grads.anchor],
            LossMode::AttractAll => vec![grads.anchor, grads.view1_query.expect("attract_all grad")],
            LossMode::EndToEnd => vec![
                grads.anchor,
                grads.view1.expect("end-to-end grad"),
                grads.view2.expect("end-to-end grad"),
            ],
            LossMode::EndToEndBaseline => vec![grads.anchor, grads.view1.expect("end-to-end grad")],
        };
        let views: Vec<_> = grad_parts.iter().map(|g| g.view()).collect();
        let grad = ndarray::concatenate(Axis(0), &views).expect("gradient blocks agree");
        self.pair.backward_query(&grad);

        let query = &mut self.pair.query;
        self.optimizer.step(lr, |f| query.visit_params_mut(f));
        match self.pair.mode {
            PairMode::MomentumContrast => self.pair.momentum_update()?,
            PairMode::EndToEnd => self.pair.sync_key(),
        }

        let mut enqueued = None;
        if let Some(queue) = &mut self.queue {
            let pushed = match (mode, self.config.queue.enqueue) {
                (LossMode::MocoBaseline, _) | (_, EnqueuePolicy::FirstOnly) => keys[0].clone(),
                _ => EmbeddingBatch {
                    vectors: ndarray::concatenate(Axis(0), &[keys[0].vectors.view(), keys[1].vectors.view()])
                        .expect("key widths agree"),
                    normalized: true,
                },
            };
            queue.enqueue(&pushed)?;
            enqueued = Some(pushed.vectors);
        }
        self.last_trace = Some(StepTrace { negatives, enqueued });

        let std = embedding_std(&parts[0].vectors);
        let record = MetricsRecord {
            schema: METRICS_SCHEMA,
            step: self.step,
            epoch,
            lr,
            loss,
            embedding_std: std,
            queue_filled: self.queue.as_ref().map_or(0, |q| q.filled()),
            collapse_warning: self.step >= self.config.collapse_warmup_steps && std < self.config.collapse_floor,
            wall_time: self.config.log_wall_time.then(|| self.started.elapsed().as_secs_f64()),
        };
        self.step += 1;
        Ok(record)
    }
}

fn concat(parts: &[&Tensor]) -> Tensor {
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let views: Vec<_> = parts.iter().map(|t| t.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("view batches agree")
}

/// A queue holding one batch of random unit vectors, so the first step has
/// negatives; they are the oldest rows and are overwritten first.
fn primed_queue(config: &RunConfig) -> Result<NegativeQueue> {
    let dim = config.arch.proj_dim;
    let mut queue = NegativeQueue::new(config.queue.size, dim)?;
    let mut rng = seeding::stream(config.seed, &[tag::INIT, 1]);
    let rows = config.batch_size.min(config.queue.size);
    let noise = Array2::from_shape_fn((rows, dim), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
    queue.enqueue(&EmbeddingBatch::normalize(noise))?;
    Ok(queue)
}

/// Result of a completed (or stopped) pretraining invocation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps_run: u64,
    pub final_step: u64,
    pub collapse_warnings: u64,
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn save_checkpoint(trainer: &Trainer, dir: &Path) -> Result<PathBuf> {
    let name = checkpoint_name(trainer.step());
    let path = dir.join(&name);
    trainer.checkpoint().save(&path)?;
    write_atomic(&dir.join(LATEST), name.as_bytes())?;
    Ok(path)
}

/// Provenance written next to every run.
#[derive(Debug, Serialize)]
struct RunMetadata<'a> {
    code_version: &'a str,
    seed: u64,
    config_hash: String,
    loss_mode: &'a str,
    reduction: crate::objective::Reduction,
    ema_after_optimizer_step: bool,
    steps_per_epoch: u64,
    total_steps: u64,
    overrides: &'a [String],
}

pub fn write_run_files(trainer: &Trainer, dir: &Path, overrides: &[String]) -> Result<()> {
    let cfg = trainer.config();
    write_atomic(&dir.join("config.toml"), config::to_toml(cfg)?.as_bytes())?;
    let meta = RunMetadata {
        code_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        loss_mode: cfg.loss.loss_mode.name(),
        reduction: cfg.loss.reduction,
        ema_after_optimizer_step: true,
        steps_per_epoch: trainer.steps_per_epoch(),
        total_steps: trainer.total_steps(),
        overrides,
    };
    let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
    write_atomic(&dir.join("run.json"), &json)
}

fn train_samples(config: &RunConfig) -> Result<Vec<ImageSample>> {
    materialize(&config.dataset.load(SplitTag::Train)?)
}

/// Trains from scratch and writes checkpoints and metrics under `config.output_dir`.
pub fn pretrain(config: &RunConfig, overrides: &[String]) -> Result<RunOutcome> {
    let trainer = Trainer::new(config.clone(), train_samples(config)?)?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_run_files(&trainer, &dir, overrides)?;
    let metrics = dir.join(METRICS_FILE);
    std::fs::File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
    run(trainer, &dir, None)
}

/// Continues from a checkpoint. A supplied config must match the stored one
/// in every trajectory-relevant field.
pub fn resume(checkpoint: &Path, expected: Option<&RunConfig>, stop_at: Option<u64>) -> Result<RunOutcome> {
    let path = resolve_checkpoint(checkpoint)?;
    let ckpt = Checkpoint::load(&path)?;
    if let Some(cfg) = expected {
        if cfg.hash() != ckpt.config.hash() {
            return Err(Error::ConfigMismatch(ckpt.config.diff(cfg).join("; ")));
        }
    }
    let mut config = ckpt.config.clone();
    if let Some(cfg) = expected {
        config.output_dir = cfg.output_dir.clone();
        config.checkpoint_every = cfg.checkpoint_every;
        config.log_wall_time = cfg.log_wall_time;
    }
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ckpt = Checkpoint { config, ..ckpt };
    let trainer = Trainer::from_checkpoint(&ckpt, train_samples(&ckpt.config)?)?;
    metrics::truncate_before(&dir.join(METRICS_FILE), ckpt.step)?;
    run(trainer, &dir, stop_at)
}

/// Pretrains, stopping after `stop_at` completed steps (a simulated interruption).
pub fn pretrain_until(config: &RunConfig, stop_at: u64) -> Result<RunOutcome> {
    let trainer = Trainer::new(config.clone(), train_samples(config)?)?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_run_files(&trainer, &dir, &[])?;
    let metrics = dir.join(METRICS_FILE);
    std::fs::File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
    run(trainer, &dir, Some(stop_at))
}

fn run(mut trainer: Trainer, dir: &Path, stop_at: Option<u64>) -> Result<RunOutcome> {
    let metrics_path = dir.join(METRICS_FILE);
    let mut sink = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let start = trainer.step();
    let total = trainer.total_steps();
    let end = stop_at.map_or(total, |s| s.min(total));
    let every = trainer.config().checkpoint_every;
    let mut warnings = 0;
    let mut last = None;
    while trainer.step() < end {
        let record = match trainer.train_step() {
            Ok(r) => r,
            Err(Error::NonFinite { step, batch_ids }) => {
                let dump = dir.join(format!("nonfinite_step{step}.json"));
                let body = serde_json::json!({ "step": step, "batch_ids": batch_ids });
                write_atomic(&dump, body.to_string().as_bytes())?;
                return Err(Error::NonFinite { step, batch_ids });
            }
            Err(e) => return Err(e),
        };
        if record.collapse_warning {
            warnings += 1;
            eprintln!(
                "warning: embedding std {:.5} below floor {} at step {}",
                record.embedding_std,
                trainer.config().collapse_floor,
                record.step
            );
        }
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        sink.write_all(&line).map_err(|e| Error::io(&metrics_path, e))?;
        if every > 0 && trainer.step().is_multiple_of(every) && trainer.step() < end {
            last = Some(save_checkpoint(&trainer, dir)?);
        }
    }
    sink.flush().map_err(|e| Error::io(&metrics_path, e))?;
    if last.as_ref().is_none_or(|p| *p != dir.join(checkpoint_name(trainer.step()))) {
        last = Some(save_checkpoint(&trainer, dir)?);
    }
    Ok(RunOutcome {
        output_dir: dir.to_path_buf(),
        checkpoint: last.expect("final checkpoint written"),
        metrics: metrics_path,
        steps_run: trainer.step() - start,
        final_step: trainer.step(),
        collapse_warnings: warnings,
    })
}
