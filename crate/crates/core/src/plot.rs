//! Static SVG figures rendered from run and evaluation result files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::evalsuite::{AblationGrid, ProbeResult, Protocol};
use crate::trainer::{read_metrics, MetricsRecord};

const SIZE: (u32, u32) = (800, 500);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Result files grouped by kind.
#[derive(Debug, Default)]
pub struct PlotInputs {
    pub runs: Vec<(String, Vec<MetricsRecord>)>,
    pub finetune: Vec<(String, ProbeResult)>,
    pub ablations: Vec<AblationGrid>,
}

/// Series label of a result file: the name of its run directory.
fn label_of(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn draw_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("plot rendering failed: {e}"))
}

/// Reads every input, collecting all parse failures into one error.
pub fn load_inputs(paths: &[PathBuf]) -> Result<PlotInputs> {
    let mut out = PlotInputs::default();
    let mut bad = Vec::new();
    for path in paths {
        if path.extension().is_some_and(|e| e == "jsonl") {
            match read_metrics(path) {
                Ok(recs) => out.runs.push((label_of(path), recs)),
                Err(e) => bad.push(e.to_string()),
            }
            continue;
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => {
                bad.push(format!("{}: line {}: {e}", path.display(), e.line()));
                continue;
            }
        };
        let parsed = if value.get("entries").is_some() {
            serde_json::from_value::<AblationGrid>(value).map(|g| out.ablations.push(g))
        } else {
            serde_json::from_value::<ProbeResult>(value).map(|r| {
                if r.protocol == Protocol::Finetune {
                    out.finetune.push((label_of(path), r));
                }
            })
        };
        if let Err(e) = parsed {
            bad.push(format!("{}: {e}", path.display()));
        }
    }
    if !bad.is_empty() {
        return Err(Error::Format(bad.join("; ")));
    }
    Ok(out)
}

fn loss_curves(runs: &[(String, Vec<MetricsRecord>)], path: &Path) -> Result<()> {
    let max_step = runs.iter().flat_map(|(_, r)| r.last()).map(|r| r.step).max().unwrap_or(0) + 1;
    let losses = runs.iter().flat_map(|(_, r)| r.iter().map(|m| m.loss.total));
    let (lo, hi) = losses.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi.max(lo + 1e-6)) } else { (0.0, 1.0) };

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(0u64..max_step, lo..hi)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("loss")
        .draw()
        .map_err(draw_err)?;
    for (i, (name, recs)) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(recs.iter().map(|r| (r.step, r.loss.total)), color))
            .map_err(draw_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}

fn fraction_curves(results: &[(String, ProbeResult)], path: &Path) -> Result<()> {
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (name, r) in results {
        series.entry(name).or_default().push((r.label_fraction * 100.0, r.top1 * 100.0));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("fine-tuning accuracy vs labeled fraction", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d((0.5f64..100.0).log_scale(), 0f64..100.0)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("labeled fraction (%)")
        .y_desc("top-1 (%)")
        .draw()
        .map_err(draw_err)?;
    for (i, (name, pts)) in series.into_iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(name.to_string())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled())))
            .map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}

fn ablation_bars(grids: &[AblationGrid], path: &Path) -> Result<()> {
    let mut presets: Vec<String> = Vec::new();
    let mut modes: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for e in grids.iter().flat_map(|g| &g.entries) {
        if !presets.contains(&e.preset) {
            presets.push(e.preset.clone());
        }
        if !modes.contains(&e.loss_mode) {
            modes.push(e.loss_mode.clone());
        }
        cells
            .entry((e.preset.clone(), e.loss_mode.clone()))
            .or_default()
            .push(e.result.top1 * 100.0);
    }
    let groups = presets.len().max(1) as f64;
    let width = 0.8 / modes.len().max(1) as f64;

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("augmentation ablation", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(0f64..groups, 0f64..100.0)
        .map_err(draw_err)?;
    let names = presets.clone();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(presets.len() * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - x.floor() - 0.5).abs() < 1e-9 && i < names.len() {
                names[i].clone()
            } else {
                String::new()
            }
        })
        .y_desc("top-1 (%)")
        .draw()
        .map_err(draw_err)?;
    for (m, mode) in modes.iter().enumerate() {
        let color = PALETTE[m % PALETTE.len()];
        let bars: Vec<_> = presets
            .iter()
            .enumerate()
            .filter_map(|(p, preset)| {
                let vals = cells.get(&(preset.clone(), mode.clone()))?;
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let x0 = p as f64 + 0.1 + m as f64 * width;
                Some(Rectangle::new([(x0, 0.0), (x0 + width * 0.95, mean)], color.filled()))
            })
            .collect();
        chart
            .draw_series(bars)
            .map_err(draw_err)?
            .label(mode.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}

/// Renders every figure the inputs support into `out_dir`; returns the files written.
pub fn render(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(paths)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if !inputs.runs.is_empty() {
        let p = out_dir.join("loss_curves.svg");
        loss_curves(&inputs.runs, &p)?;
        written.push(p);
    }
    if !inputs.finetune.is_empty() {
        let p = out_dir.join("fraction_curves.svg");
        fraction_curves(&inputs.finetune, &p)?;
        written.push(p);
    }
    if !inputs.ablations.is_empty() {
        let p = out_dir.join("ablation.svg");
        ablation_bars(&inputs.ablations, &p)?;
        written.push(p);
    }
    if written.is_empty() {
        return Err(Error::Format("no plottable inputs".into()));
    }
    Ok(written)
}
