use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{probe_checkpoint, ProbeConfig, ProbeResult};
use crate::error::{Error, Result};
use crate::trainer::{pretrain, Checkpoint, RunConfig};
use crate::viewgen::PRESETS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub preset: String,
    pub loss_mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint: PathBuf,
    pub result: ProbeResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub entries: Vec<AblationEntry>,
}

impl AblationGrid {
    pub fn get(&self, preset: &str) -> Option<&AblationEntry> {
        self.entries.iter().find(|e| e.preset == preset)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("preset,loss_mode,seed,top1,top5,config_hash\n");
        for e in &self.entries {
            let top5 = e.result.top5.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.preset, e.loss_mode, e.seed, e.result.top1, top5, e.config_hash
            );
        }
        out
    }
}

/// Pretrains and linearly probes `base` once per preset, changing nothing
/// but the augmentation preset. Runs land in `out_root/<preset>`.
pub fn ablate_augmentations(
    base: &RunConfig,
    presets: &[String],
    probe: &ProbeConfig,
    out_root: &Path,
) -> Result<AblationGrid> {
    if let Some(bad) = presets.iter().find(|p| !PRESETS.contains(&p.as_str())) {
        return Err(Error::UnknownPreset(bad.clone()));
    }
    let mut grid = AblationGrid::default();
    for preset in presets {
        let mut cfg = base.clone();
        cfg.aug_preset = preset.clone();
        cfg.output_dir = out_root.join(preset);
        let run = pretrain(&cfg, &[])?;
        let ckpt = Checkpoint::load(&run.checkpoint)?;
        let (result, trained) = probe_checkpoint(&ckpt, probe)?;
        trained.save(&cfg.output_dir.join(super::PROBE_FILE))?;
        super::write_json(&cfg.output_dir.join("linear.json"), &result)?;
        grid.entries.push(AblationEntry {
            preset: preset.clone(),
            loss_mode: cfg.loss.loss_mode.name().to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            checkpoint: run.checkpoint,
            result,
        });
    }
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    super::write_json(&out_root.join("ablation.json"), &grid)?;
    let csv = out_root.join("ablation.csv");
    std::fs::write(&csv, grid.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(grid)
}
