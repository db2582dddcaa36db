//! Directional desk-scale criteria on the synthetic shape corpus. Each
//! (mode, preset, seed) run is trained once and shared across criteria.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use leoclr::dataset::DatasetRef;
use leoclr::desk::{desk_config, desk_probe, run_one, sign_test, DeskRow, DESK_DRAWS};
use leoclr::evalsuite::{finetune_fraction, EvalContext, FinetuneConfig};
use leoclr::objective::LossMode;
use leoclr::trainer::Checkpoint;

use super::Outcome;

pub const SEEDS: [u64; 3] = [0, 1, 2];

pub struct Lab {
    root: PathBuf,
    epochs: u64,
    dataset: Option<DatasetRef>,
    runs: HashMap<(LossMode, String, u64), DeskRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pct(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{:.1}", 100.0 * x)).collect();
    format!("[{}]", v.join(", "))
}

impl Lab {
    pub fn new(root: PathBuf, epochs: u64, dataset: Option<DatasetRef>) -> Self {
        Self {
            root,
            epochs,
            dataset,
            runs: HashMap::new(),
        }
    }

    fn row(&mut self, mode: LossMode, preset: &str, seed: u64) -> DeskRow {
        let key = (mode, preset.to_string(), seed);
        if let Some(r) = self.runs.get(&key) {
            return r.clone();
        }
        let mut cfg = desk_config(mode, seed, self.epochs);
        cfg.aug_preset = preset.to_string();
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        cfg.output_dir = self.root.join(format!("{}-{preset}-seed{seed}", mode.name()));
        let t0 = Instant::now();
        let row = run_one(&cfg, &desk_probe(seed), DESK_DRAWS).expect("desk run");
        eprintln!(
            "  run {:<20} {:<12} seed {seed}: center {:.3} random {:.3} ({:.0}s)",
            mode.name(),
            preset,
            row.center_top1,
            row.random_top1,
            t0.elapsed().as_secs_f64()
        );
        self.runs.insert(key, row.clone());
        row
    }

    fn center(&mut self, mode: LossMode, preset: &str) -> Vec<f64> {
        SEEDS.iter().map(|&s| self.row(mode, preset, s).center_top1).collect()
    }

    fn degradation(&mut self, mode: LossMode) -> Vec<f64> {
        SEEDS.iter().map(|&s| self.row(mode, "baseline", s).degradation()).collect()
    }

    pub fn beats_baseline(&mut self) -> Outcome {
        let a = self.center(LossMode::Leoclr, "baseline");
        let b = self.center(LossMode::MocoBaseline, "baseline");
        let margin = mean(&a) - mean(&b);
        let wins = a.iter().zip(&b).filter(|(x, y)| x > y).count();
        Outcome::new(
            margin >= 0.01,
            format!(
                "leoclr {} vs moco_baseline {} top-1 %, mean margin {:+.2} points (floor +1.00), sign test p={:.3}",
                pct(&a),
                pct(&b),
                100.0 * margin,
                sign_test(wins, SEEDS.len())
            ),
        )
    }

    pub fn crop_robustness(&mut self) -> Outcome {
        let a = self.degradation(LossMode::Leoclr);
        let b = self.degradation(LossMode::MocoBaseline);
        let wins = a.iter().zip(&b).filter(|(x, y)| x < y).count();
        Outcome::new(
            wins >= 2,
            format!(
                "center-minus-random drop leoclr {} vs moco_baseline {} points, leoclr smaller in {wins}/3 seeds",
                pct(&a),
                pct(&b)
            ),
        )
    }

    pub fn attraction_ordering(&mut self) -> Outcome {
        let l = self.center(LossMode::Leoclr, "baseline");
        let r = self.center(LossMode::RandomAnchor, "baseline");
        let t = self.center(LossMode::AttractAll, "baseline");
        let lr = l.iter().zip(&r).filter(|(x, y)| x >= y).count();
        let rt = r.iter().zip(&t).filter(|(x, y)| x >= y).count();
        let means_ordered = mean(&l) > mean(&r) && mean(&r) > mean(&t);
        Outcome::new(
            means_ordered && lr >= 2 && rt >= 2,
            format!(
                "means leoclr {:.1} > random_anchor {:.1} > attract_all {:.1}: {means_ordered}; per-seed gaps >= 0 in {lr}/3 and {rt}/3",
                100.0 * mean(&l),
                100.0 * mean(&r),
                100.0 * mean(&t)
            ),
        )
    }

    pub fn augmentation_ablation(&mut self) -> Outcome {
        let lb = mean(&self.center(LossMode::Leoclr, "baseline"));
        let mb = mean(&self.center(LossMode::MocoBaseline, "baseline"));
        let lc = mean(&self.center(LossMode::Leoclr, "crop_only"));
        let mc = mean(&self.center(LossMode::MocoBaseline, "crop_only"));
        let (ld, md) = (lb - lc, mb - mc);
        Outcome::new(
            ld >= 0.10 && md >= 0.10 && lc > mc,
            format!(
                "crop_only drop leoclr {:.1} and moco_baseline {:.1} points (floor 10); crop_only top-1 leoclr {:.1} vs {:.1}",
                100.0 * ld,
                100.0 * md,
                100.0 * lc,
                100.0 * mc
            ),
        )
    }

    pub fn end_to_end(&mut self) -> Outcome {
        let a = self.center(LossMode::EndToEnd, "baseline");
        let b = self.center(LossMode::EndToEndBaseline, "baseline");
        let wins = a.iter().zip(&b).filter(|(x, y)| x > y).count();
        Outcome::new(
            wins >= 2,
            format!(
                "end_to_end {} vs end_to_end_baseline {} top-1 %, ahead in {wins}/3 seeds",
                pct(&a),
                pct(&b)
            ),
        )
    }

    fn finetuned(&mut self, mode: LossMode) -> Vec<f64> {
        SEEDS
            .iter()
            .map(|&seed| {
                let row = self.row(mode, "baseline", seed);
                let ckpt = Checkpoint::load(&row.checkpoint).expect("checkpoint");
                let ctx = EvalContext::from_checkpoint(&ckpt).expect("eval context");
                let cfg = FinetuneConfig {
                    fraction: 0.1,
                    epochs: 30,
                    batch_size: 32,
                    seed,
                    ..Default::default()
                };
                finetune_fraction(&ctx.encoder, &ctx.policy, &ctx.train_manifest, &ctx.eval_manifest, &cfg)
                    .expect("finetune")
                    .top1
            })
            .collect()
    }

    pub fn semi_supervised(&mut self) -> Outcome {
        let a = self.finetuned(LossMode::Leoclr);
        let b = self.finetuned(LossMode::MocoBaseline);
        Outcome::new(
            mean(&a) > mean(&b),
            format!(
                "10% labels fine-tuned top-1 leoclr {} vs moco_baseline {} %, means {:.1} vs {:.1}",
                pct(&a),
                pct(&b),
                100.0 * mean(&a),
                100.0 * mean(&b)
            ),
        )
    }
}
