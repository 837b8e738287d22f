use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use stable_teacher::checkpoint;
use stable_teacher::config::{parse_override, split_samples, RunConfig};
use stable_teacher::metrics::{evaluate, extract_tube, ground_truth_tube, read_tubes, write_tubes, DetectionTube};
use stable_teacher::report::{load_run, write_report};
use stable_teacher::synth::write_dataset;
use stable_teacher::trainer::{eval_view, evaluate_outputs, predict, train, Mode, RunPaths, TrainData, Trainer};
use stable_teacher::Error;

#[derive(Parser)]
#[command(name = "stable-teacher", version, about = "Semi-supervised video action detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset and its labeled/unlabeled split.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train one ablation mode.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// supervised, mean-teacher, +eor, +dop or full.
        #[arg(long, allow_hyphen_values = true)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Continue from the run's last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint (or a detections file) on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run configuration; defaults to `config.txt` next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Score the ground truth against itself.
        #[arg(long)]
        replay_ground_truth: bool,
        /// Score tubes read from a JSONL file instead of running a model.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Also write the predicted tubes as JSONL.
        #[arg(long)]
        write_detections: Option<PathBuf>,
    },
    /// Tables and plots across run directories.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    Ok(set.iter().map(|s| parse_override(s)).collect::<stable_teacher::Result<_>>()?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(config: Option<PathBuf>, out: PathBuf, set: Vec<String>) -> Result<()> {
    let cfg = RunConfig::load(config.as_deref(), &overrides(&set)?)?;
    let ds = stable_teacher::synth::generate_dataset(&cfg.data)?;
    let splits = cfg.splits(&ds.manifest)?;
    write_dataset(&ds, &out)?;
    splits.write(&out.join("splits.json"))?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    println!(
        "wrote {} clips ({} labeled, {} unlabeled, {} validation, {} test) to {}",
        ds.clips.len(),
        splits.labeled.len(),
        splits.unlabeled.len(),
        splits.validation.len(),
        splits.test.len(),
        out.display()
    );
    Ok(())
}

fn run_train(config: Option<PathBuf>, mode: Option<String>, out: PathBuf, set: Vec<String>, resume: bool) -> Result<()> {
    let mut ov = overrides(&set)?;
    if let Some(m) = mode {
        ov.push(("train.mode".into(), m.parse::<Mode>()?.to_string()));
    }
    let cfg = RunConfig::load(config.as_deref(), &ov)?;
    let text = cfg.to_text();
    print!("{text}");
    let paths = RunPaths::new(&out);
    let mut trainer = if resume {
        Trainer::resume(cfg.train.clone(), &paths.checkpoint())?
    } else {
        Trainer::new(cfg.train.clone())?
    };
    let ds = cfg.dataset()?;
    let splits = cfg.splits(&ds.manifest)?;
    write(&out.join("config.txt"), &text)?;
    splits.write(&out.join("splits.json"))?;
    let data = TrainData::from_dataset(&ds, &splits)?;
    let history = train(&mut trainer, &data, &paths)?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: validation f-mAP@0.5 {:.4}, v-mAP@0.5 {:.4}",
            last.epoch, last.val_f_map_50, last.val_v_map_50
        );
    }
    Ok(())
}

struct EvalArgs {
    checkpoint: Option<PathBuf>,
    config: Option<PathBuf>,
    split: Option<String>,
    out: PathBuf,
    set: Vec<String>,
    replay_ground_truth: bool,
    detections: Option<PathBuf>,
    write_detections: Option<PathBuf>,
}

fn run_evaluate(a: EvalArgs) -> Result<()> {
    let config = a.config.clone().or_else(|| {
        a.checkpoint.as_ref().and_then(|c| c.parent()).map(|d| d.join("config.txt")).filter(|p| p.exists())
    });
    let mut cfg = RunConfig::load(config.as_deref(), &overrides(&a.set)?)?;
    if let Some(s) = &a.split {
        cfg.set("eval.split", s)?;
        cfg.validate()?;
    }
    if a.checkpoint.is_none() && !a.replay_ground_truth && a.detections.is_none() {
        return Err(Error::config("--checkpoint", "one of --checkpoint, --detections or --replay-ground-truth is required").into());
    }
    if a.split_manifest_next_to_checkpoint(&mut cfg) {
        log::info!("using split manifest {}", cfg.split_manifest.as_ref().map_or(String::new(), |p| p.display().to_string()));
    }
    let ds = cfg.dataset()?;
    let splits = cfg.splits(&ds.manifest)?;
    let classes: Vec<_> = ds.manifest.classes.iter().map(|c| c.info()).collect();
    let samples = split_samples(&ds, &splits, &cfg.eval_split)?;
    let t = &cfg.train;
    let views = samples.iter().map(|s| eval_view(s, t.detector.clip_len)).collect::<stable_teacher::Result<Vec<_>>>()?;
    let (report, tubes) = if let Some(path) = &a.detections {
        let preds = read_tubes(path)?;
        let gts = views.iter().map(ground_truth_tube).collect::<stable_teacher::Result<Vec<_>>>()?;
        (evaluate(&cfg.eval_split, &preds, &gts, &classes, t.iou_mode, None)?, preds)
    } else if a.replay_ground_truth {
        let gts = views.iter().map(ground_truth_tube).collect::<stable_teacher::Result<Vec<_>>>()?;
        (evaluate(&cfg.eval_split, &gts, &gts, &classes, t.iou_mode, None)?, gts)
    } else {
        let ckpt = a.checkpoint.as_ref().expect("checked above");
        let (stored, _) = checkpoint::load(ckpt)?;
        let trainer = Trainer::resume(stored, ckpt)?;
        let tc = trainer.config();
        let outputs = predict(trainer.detector(), trainer.eval_params(), &views)?;
        let report = evaluate_outputs(&cfg.eval_split, &views, &outputs, &classes, tc.binarize_thresh, tc.iou_mode)?;
        let tubes = views
            .iter()
            .zip(&outputs)
            .map(|(s, o)| extract_tube(&s.sample_id, o, tc.binarize_thresh))
            .collect::<stable_teacher::Result<Vec<DetectionTube>>>()?;
        (report, tubes)
    };
    write(&a.out, &report.to_json())?;
    write(&a.out.with_extension("csv"), &report.to_csv())?;
    if let Some(p) = &a.write_detections {
        write_tubes(p, &tubes, cfg.data.height, cfg.data.width)?;
    }
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} videos on {}: f-mAP@0.5 {}, v-mAP@0.2 {}, v-mAP@0.5 {}",
        report.num_videos,
        report.split,
        cell(report.frame_map_at(0.5)),
        cell(report.video_map_at(0.2)),
        cell(report.video_map_at(0.5))
    );
    Ok(())
}

impl EvalArgs {
    /// Prefers the run's own `splits.json` when the configuration names none.
    fn split_manifest_next_to_checkpoint(&self, cfg: &mut RunConfig) -> bool {
        if cfg.split_manifest.is_some() {
            return false;
        }
        let found = self.checkpoint.as_ref().and_then(|c| c.parent()).map(|d| d.join("splits.json")).filter(|p| p.exists());
        let hit = found.is_some();
        cfg.split_manifest = found;
        hit
    }
}

fn run_report(runs: Vec<PathBuf>, out: PathBuf) -> Result<()> {
    let missing: Vec<String> = runs.iter().filter(|r| !r.is_dir()).map(|r| r.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::config("--runs", format!("missing run directory: {}", missing.join(", "))).into());
    }
    let loaded = runs.iter().map(|r| load_run(r)).collect::<stable_teacher::Result<Vec<_>>>()?;
    for p in write_report(&loaded, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, set } => gen_data(config, out, set),
        Command::Train { config, mode, out, set, resume } => run_train(config, mode, out, set, resume),
        Command::Evaluate { checkpoint, config, split, out, set, replay_ground_truth, detections, write_detections } => {
            run_evaluate(EvalArgs { checkpoint, config, split, out, set, replay_ground_truth, detections, write_detections })
        }
        Command::Report { runs, out } => run_report(runs, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<Error>(), Some(Error::Config { .. })) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
