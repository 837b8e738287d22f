//! Cross-run tables and static plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::synth::read_json;
use crate::trainer::{EpochRecord, Mode};

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub f_map_50: f64,
    pub v_map_20: f64,
    pub v_map_50: f64,
    pub coherence: f64,
    /// `test` when an evaluation report exists, else `validation`.
    pub source: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub name: String,
    pub config: RunConfig,
    pub history: Vec<EpochRecord>,
    /// Per-step total loss in log order.
    pub step_losses: Vec<f64>,
    pub report: Option<EvalReport>,
}

impl RunSummary {
    pub fn metrics(&self) -> Option<RunMetrics> {
        if let Some(r) = &self.report {
            return Some(RunMetrics {
                f_map_50: r.frame_map_at(0.5)?,
                v_map_20: r.video_map_at(0.2)?,
                v_map_50: r.video_map_at(0.5)?,
                coherence: r.coherence.unwrap_or(0.0),
                source: r.split.clone(),
            });
        }
        self.history.last().map(|h| RunMetrics {
            f_map_50: h.val_f_map_50,
            v_map_20: h.val_v_map_20,
            v_map_50: h.val_v_map_50,
            coherence: h.val_coherence,
            source: "validation".into(),
        })
    }
}

/// Reads a run directory written by `train` (and optionally `evaluate`).
pub fn load_run(dir: &Path) -> Result<RunSummary> {
    if !dir.is_dir() {
        return Err(Error::config("--runs", format!("missing run directory {}", dir.display())));
    }
    let cfg_path = dir.join("config.txt");
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = RunConfig::from_text(&text)?;
    let metrics_path = dir.join("metrics.json");
    let history = if metrics_path.exists() { read_json(&metrics_path)? } else { Vec::new() };
    let loss_path = dir.join("losses.csv");
    let step_losses = if loss_path.exists() {
        let text = fs::read_to_string(&loss_path).map_err(|e| Error::io(&loss_path, e))?;
        text.lines()
            .skip(1)
            .filter_map(|l| l.rsplit(',').next())
            .map(|v| v.parse::<f64>().map_err(|_| Error::InvalidInput(format!("{}: bad loss value `{v}`", loss_path.display()))))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let report_path = dir.join("report.json");
    let report = if report_path.exists() { Some(read_json(&report_path)?) } else { None };
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    Ok(RunSummary { dir: dir.to_path_buf(), name, config, history, step_losses, report })
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{}: plotting failed: {e}", path.display()))
}

fn upper(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.fold(0.0f64, f64::max);
    if m > 0.0 { m * 1.05 } else { 1.0 }
}

fn loss_plot(run: &RunSummary, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let n = run.step_losses.len().max(2);
    let ymax = upper(run.step_losses.iter().copied());
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{}: training loss", run.name), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..(n - 1) as f64, 0f64..ymax)
        .map_err(|e| plot_err(path, e))?;
    chart.configure_mesh().x_desc("step").y_desc("total loss").draw().map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(LineSeries::new(run.step_losses.iter().enumerate().map(|(i, &v)| (i as f64, v)), &BLUE))
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

fn per_class_plot(run: &RunSummary, report: &EvalReport, path: &Path) -> Result<()> {
    let Some(col) = report.thresholds.iter().position(|t| (t - 0.5).abs() < 1e-9) else {
        return Ok(());
    };
    let values: Vec<(String, f64)> = report
        .classes
        .iter()
        .map(|c| (c.name.clone(), report.frame_map.per_class[c.id][col].unwrap_or(0.0)))
        .collect();
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let k = values.len();
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{}: per-class f-mAP@0.5", run.name), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(48)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..k as f64, 0f64..1.0)
        .map_err(|e| plot_err(path, e))?;
    let names: Vec<String> = values.iter().map(|(n, _)| n.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(k)
        .x_label_formatter(&|x| names.get(x.floor() as usize).cloned().unwrap_or_default())
        .y_desc("AP")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, (_, v))| {
            Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, *v)], BLUE.mix(0.7).filled())
        }))
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// `(mode, percent) -> per-seed metrics`
type Grouped = BTreeMap<(usize, String), Vec<RunMetrics>>;

fn mode_rank(m: Mode) -> usize {
    Mode::ALL.iter().position(|x| *x == m).unwrap_or(0)
}

fn percent_key(p: f64) -> String {
    format!("{p}")
}

fn group(runs: &[RunSummary]) -> Grouped {
    let mut g: Grouped = BTreeMap::new();
    for r in runs {
        if let Some(m) = r.metrics() {
            g.entry((mode_rank(r.config.train.mode), percent_key(r.config.split.percent_labeled))).or_default().push(m);
        }
    }
    g
}

fn mean(v: &[RunMetrics], f: impl Fn(&RunMetrics) -> f64) -> f64 {
    v.iter().map(f).sum::<f64>() / v.len().max(1) as f64
}

fn map_vs_labeled_plot(grouped: &Grouped, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("f-mAP@0.5 vs labeled percentage", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..100.0, 0f64..1.0)
        .map_err(|e| plot_err(path, e))?;
    chart.configure_mesh().x_desc("labeled %").y_desc("f-mAP@0.5").draw().map_err(|e| plot_err(path, e))?;
    for (i, mode) in Mode::ALL.iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = grouped
            .iter()
            .filter(|((m, _), _)| *m == i)
            .filter_map(|((_, p), v)| p.parse::<f64>().ok().map(|p| (p, mean(v, |r| r.f_map_50))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(mode.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(|e| plot_err(path, e))?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// Mode rows grouped by labeled percentage, means over seeds.
pub fn ablation_table(runs: &[RunSummary]) -> String {
    let grouped = group(runs);
    let mut out = String::from("labeled_percent,mode,runs,f_map_50,v_map_20,v_map_50,coherence\n");
    for ((m, p), v) in &grouped {
        let _ = writeln!(
            out,
            "{p},{},{},{:.4},{:.4},{:.4},{:.6}",
            Mode::ALL[*m],
            v.len(),
            mean(v, |r| r.f_map_50),
            mean(v, |r| r.v_map_20),
            mean(v, |r| r.v_map_50),
            mean(v, |r| r.coherence)
        );
    }
    out
}

/// The ablation table as Markdown, one block per labeled percentage.
pub fn ablation_markdown(runs: &[RunSummary]) -> String {
    let grouped = group(runs);
    let mut out = String::new();
    let mut current: Option<&String> = None;
    for ((m, p), v) in &grouped {
        if current != Some(p) {
            if current.is_some() {
                out.push('\n');
            }
            let _ = writeln!(out, "### {p}% labeled\n");
            out.push_str("| mode | runs | f-mAP@0.5 | v-mAP@0.2 | v-mAP@0.5 | coherence |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|\n");
            current = Some(p);
        }
        let _ = writeln!(
            out,
            "| {} | {} | {:.1} | {:.1} | {:.1} | {:.4} |",
            Mode::ALL[*m],
            v.len(),
            100.0 * mean(v, |r| r.f_map_50),
            100.0 * mean(v, |r| r.v_map_20),
            100.0 * mean(v, |r| r.v_map_50),
            mean(v, |r| r.coherence)
        );
    }
    out
}

/// One row per run.
pub fn summary_table(runs: &[RunSummary]) -> String {
    let mut out = String::from("run,mode,labeled_percent,seed,epochs,source,f_map_50,v_map_20,v_map_50,coherence\n");
    for r in runs {
        if let Some(m) = r.metrics() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.6}",
                r.name,
                r.config.train.mode,
                r.config.split.percent_labeled,
                r.config.train.seed,
                r.history.last().map_or(0, |h| h.epoch + 1),
                m.source,
                m.f_map_50,
                m.v_map_20,
                m.v_map_50,
                m.coherence
            );
        }
    }
    out
}

/// Writes tables and plots for `runs` into `out`; returns the files written.
pub fn write_report(runs: &[RunSummary], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    put("summary.csv", summary_table(runs))?;
    put("ablation.csv", ablation_table(runs))?;
    put("ablation.md", ablation_markdown(runs))?;
    for r in runs {
        if !r.step_losses.is_empty() {
            let p = out.join(format!("loss_{}.svg", r.name));
            loss_plot(r, &p)?;
            written.push(p);
        }
        if let Some(rep) = &r.report {
            let p = out.join(format!("per_class_{}.svg", r.name));
            per_class_plot(r, rep, &p)?;
            written.push(p);
        }
    }
    let p = out.join("map_vs_labeled.svg");
    map_vs_labeled_plot(&group(runs), &p)?;
    written.push(p);
    Ok(written)
}
