use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.txt")
}

fn run(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stable-teacher"))
        .args(args)
        .env("STABLE_TEACHER_CACHE", cache)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_reproducible_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(tmp.path(), &["gen-data", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["dataset.json", "splits.json", "config.txt", "clips/train-c00-0000/frames.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }

    let o = run(tmp.path(), &["gen-data", "--config", s(&cfg), "--out", s(&a), "--set", "split.percent_labeled=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("split.percent_labeled"), "{}", stderr(&o));

    let o = run(tmp.path(), &["gen-data", "--out", s(&a), "--set", "data.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.bogus"));
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = run(tmp.path(), &["train", "--config", s(&smoke()), "--mode", "semi", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.mode"));
    let o = run(tmp.path(), &["train", "--config", "/nonexistent/cfg.txt", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/cfg.txt"));
    let o = run(tmp.path(), &["train", "--config", s(&smoke()), "--out", s(&out), "--set", "train.beta"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn every_mode_trains_on_the_smoke_config() {
    let tmp = tempfile::tempdir().unwrap();
    for mode in ["supervised", "mean-teacher", "+eor", "+dop", "full"] {
        let out = tmp.path().join(mode);
        let t = Instant::now();
        let o = run(tmp.path(), &["train", "--config", s(&smoke()), "--mode", mode, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{mode}: {}", stderr(&o));
        assert!(t.elapsed() < Duration::from_secs(120), "{mode} took {:?}", t.elapsed());
        for f in ["config.txt", "splits.json", "losses.csv", "metrics.json", "last.ckpt", "train.log"] {
            assert!(out.join(f).exists(), "{mode}: missing {f}");
        }
        let echo = stdout(&o);
        assert!(echo.contains(&format!("train.mode = {mode}\n")));
        assert!(echo.contains("train.beta = 0.99\n") && echo.contains("train.lambda_max = 0.1\n"));

        let csv = fs::read_to_string(out.join("losses.csv")).unwrap();
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        let rows: Vec<Vec<f64>> =
            csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        assert!(!rows.is_empty());
        let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
        let zero = |name: &str| rows.iter().all(|r| r[col(name)] == 0.0);
        let consistency = ["base_cls_cons", "base_loc_cons", "eor_cons", "dop_u", "dop_eor"];
        if mode == "supervised" {
            assert!(consistency.iter().all(|c| zero(c)));
            assert!(zero("sup_eor"));
        }
        if mode == "mean-teacher" {
            assert!(zero("sup_eor") && zero("eor_cons") && zero("dop_u") && zero("dop_eor"));
        }
    }
    // The cache now holds one dataset shared by all five runs.
    let cached: Vec<_> = fs::read_dir(tmp.path()).unwrap().flatten().filter(|e| e.file_name().to_string_lossy().starts_with("dataset-")).collect();
    assert_eq!(cached.len(), 1);
}

#[test]
fn evaluate_is_deterministic_and_replay_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let o = run(tmp.path(), &["train", "--config", s(&smoke()), "--mode", "mean-teacher", "--out", s(&run_dir), "--set", "train.epochs=1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = run_dir.join("last.ckpt");
    let (r1, r2) = (tmp.path().join("r1.json"), tmp.path().join("r2.json"));
    let dets = tmp.path().join("dets.jsonl");
    for r in [&r1, &r2] {
        let o = run(tmp.path(), &["evaluate", "--checkpoint", s(&ckpt), "--split", "test", "--out", s(r), "--write-detections", s(&dets)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    assert_eq!(fs::read(r1.with_extension("csv")).unwrap(), fs::read(r2.with_extension("csv")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&r1).unwrap()).unwrap();
    assert_eq!(report["split"], "test");
    assert_eq!(report["thresholds"], serde_json::json!([0.2, 0.3, 0.4, 0.5, 0.6]));
    assert!(report["video_map"]["mean"].as_array().unwrap().len() == 5);

    let from_file = tmp.path().join("r3.json");
    let o = run(tmp.path(), &["evaluate", "--checkpoint", s(&ckpt), "--split", "test", "--detections", s(&dets), "--out", s(&from_file)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let again: serde_json::Value = serde_json::from_slice(&fs::read(&from_file).unwrap()).unwrap();
    assert_eq!(again["frame_map"], report["frame_map"]);
    assert_eq!(again["video_map"], report["video_map"]);

    let gt = tmp.path().join("gt.json");
    let o = run(tmp.path(), &["evaluate", "--config", s(&run_dir.join("config.txt")), "--replay-ground-truth", "--out", s(&gt)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(gt.with_extension("csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert!(cells[3..].iter().all(|c| *c == "1.0000" || *c == "-"), "{line}");
    }
    assert!(csv.contains("v-mAP,mean,all,1.0000"));
}

#[test]
fn resume_continues_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = smoke();
    let base = ["train", "--config", s(&cfg), "--mode", "+dop", "--out", s(&out)];
    let o = run(tmp.path(), &[&base[..], &["--set", "train.epochs=1"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(tmp.path(), &[&base[..], &["--set", "train.epochs=2", "--resume"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let history: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 2);

    let fresh = tmp.path().join("fresh");
    let o = run(tmp.path(), &["train", "--config", s(&smoke()), "--mode", "+dop", "--out", s(&fresh)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(out.join("losses.csv")).unwrap(), fs::read(fresh.join("losses.csv")).unwrap());
    assert_eq!(fs::read(out.join("last.ckpt")).unwrap(), fs::read(fresh.join("last.ckpt")).unwrap());

    let o = run(tmp.path(), &[&base[..], &["--set", "train.beta=0.9", "--resume"]].concat());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("config hash"), "{}", stderr(&o));
}

#[test]
fn report_writes_tables_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for mode in ["supervised", "full"] {
        let out = tmp.path().join(mode);
        let o = run(tmp.path(), &["train", "--config", s(&smoke()), "--mode", mode, "--out", s(&out), "--set", "train.epochs=1"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        runs.push(out);
    }
    let rep = tmp.path().join("report");
    let mut args = vec!["report", "--out", s(&rep), "--runs"];
    args.extend(runs.iter().map(|r| s(r)));
    let o = run(tmp.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["summary.csv", "ablation.csv", "ablation.md", "loss_supervised.svg", "loss_full.svg", "map_vs_labeled.svg"] {
        assert!(rep.join(f).exists(), "missing {f}");
    }
    let ablation = fs::read_to_string(rep.join("ablation.csv")).unwrap();
    assert_eq!(ablation.lines().count(), 3);
    assert!(fs::read_to_string(rep.join("loss_full.svg")).unwrap().starts_with("<svg"));

    let missing = tmp.path().join("nope");
    let o = run(tmp.path(), &["report", "--out", s(&rep), "--runs", s(&runs[0]), s(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)));
}
