//! End-to-end runs of the `rangeview` binary on tiny datasets.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rangeview::labels::{read_labels, write_detections, Detection};
use rangeview::simgen::load_dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rangeview"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn rangeview");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, frames: usize, seed: u64) {
    let out = run(&[
        "generate",
        "--frames",
        &frames.to_string(),
        "--width",
        "64",
        "--seed",
        &seed.to_string(),
        "--out",
        p(dir),
    ]);
    assert!(out.status.success());
}

/// Overall value of `metric` for `class` in `geometry` from report.csv.
fn report_value(dir: &Path, geometry: &str, class: &str, metric: &str) -> String {
    let csv = fs::read_to_string(dir.join("report.csv")).unwrap();
    csv.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|c| c[0] == geometry && c[1] == class && c[2] == "all" && c[3] == metric)
        .map(|c| c[4].to_string())
        .unwrap_or_else(|| panic!("no {geometry}/{class}/{metric} row in\n{csv}"))
}

#[test]
fn generate_is_reproducible_and_honors_width() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    generate(&a, 2, 7);
    generate(&b, 2, 7);
    generate(&c, 2, 8);
    for name in ["frame_000000.rimg", "frame_000001.rimg", "frame_000001.jsonl", "dataset.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.join("frame_000000.rimg")).unwrap(), fs::read(c.join("frame_000000.rimg")).unwrap());
    let data = load_dataset(&a).unwrap();
    assert_eq!(data.len(), 2);
    assert!(data.iter().all(|(img, _)| img.width() == 64 && img.height() == 64));
}

#[test]
fn bad_config_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nno_such_field = 1\n").unwrap();
    let out = run(&["--config", p(&cfg), "--out", p(tmp.path()), "bench"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&cfg, "[train]\nlr = -1.0\n").unwrap();
    let out = run(&["--config", p(&cfg), "--out", p(tmp.path()), "bench"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["--out", p(tmp.path()), "train"]);
    assert_eq!(out.status.code(), Some(2), "train without data");
}

#[test]
fn eval_scores_ground_truth_and_warns_on_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 3, 1);
    let mut buf = Vec::new();
    let mut dets = Vec::new();
    for f in 0..3u64 {
        let labels = read_labels(data.join(format!("frame_{f:06}.jsonl"))).unwrap();
        for l in labels {
            dets.push((f, Detection { class: l.class, bbox: l.bbox, score: 0.9 }));
        }
    }
    assert!(!dets.is_empty());
    write_detections(&mut buf, dets.iter().map(|(f, d)| (*f, d))).unwrap();
    let gt = tmp.path().join("gt.jsonl");
    fs::write(&gt, buf).unwrap();

    let out_gt = tmp.path().join("eval_gt");
    let out = run(&["eval", "--data", p(&data), "--detections", p(&gt), "--out", p(&out_gt)]);
    assert!(out.status.success());
    for geometry in ["3d", "bev"] {
        assert_eq!(report_value(&out_gt, geometry, "pedestrian", "ap").parse::<f64>().unwrap(), 1.0);
        assert_eq!(report_value(&out_gt, geometry, "pedestrian", "aph").parse::<f64>().unwrap(), 1.0);
    }
    assert!(out_gt.join("report.json").exists());

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out_empty = tmp.path().join("eval_empty");
    let out = run(&["eval", "--data", p(&data), "--detections", p(&empty), "--out", p(&out_empty)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(report_value(&out_empty, "bev", "pedestrian", "ap").parse::<f64>().unwrap(), 0.0);
}

#[test]
fn train_resume_continues_the_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    generate(&data, 2, 3);
    let common = ["train", "--data", p(&data), "--out", p(&run_dir), "--batch", "1", "--multiplier", "0.25"];
    let out = run(&[&common[..], &["--epochs", "1"]].concat());
    assert!(out.status.success());
    let out = run(&[&common[..], &["--epochs", "2", "--resume"]].concat());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("resuming at epoch 1 step 2"));

    let csv = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(csv.lines().next().unwrap(), "epoch,step,lr,loss,cls,reg,seconds");
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][1]), ("1", "2"));
    assert_eq!((rows[1][0], rows[1][1]), ("2", "4"));
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap().is_finite()));

    // the trained run evaluates end to end
    let eval_dir = tmp.path().join("eval");
    let out = run(&["eval", "--data", p(&data), "--run", p(&run_dir), "--out", p(&eval_dir)]);
    assert!(out.status.success());
    assert!(eval_dir.join("detections.jsonl").exists());
    assert!(eval_dir.join("report.csv").exists());
}

#[test]
fn bench_table_counts_rq_as_k_convolutions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["bench", "--width", "265", "--out", p(tmp.path())]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("bench.csv")).unwrap();
    assert_eq!(csv, String::from_utf8(out.stdout).unwrap());
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2 * 5 * 4);
    let find = |preset: &str, kernel: &str, m: &str| {
        rows.iter()
            .find(|r| r[0] == preset && r[1] == kernel && r[2] == m)
            .unwrap_or_else(|| panic!("{preset} {kernel} {m}"))
    };
    for preset in ["pedestrian", "vehicle"] {
        for m in ["0.25", "0.5", "1", "2"] {
            let conv = find(preset, "conv2d", m);
            let rq = find(preset, "rqconv2d", m);
            let k: u64 = rq[5].parse().unwrap();
            assert_eq!(rq[8].parse::<u64>().unwrap(), k * conv[8].parse::<u64>().unwrap());
        }
        for kernel in ["conv2d", "rqconv2d", "selfattention", "pointnet", "edgeconv"] {
            let col = |i: usize| -> Vec<u64> {
                ["0.25", "0.5", "1", "2"].iter().map(|m| find(preset, kernel, m)[i].parse().unwrap()).collect()
            };
            for i in [6, 7] {
                let v = col(i);
                assert!(v.windows(2).all(|w| w[0] < w[1]), "{preset} {kernel} column {i}: {v:?}");
            }
        }
    }
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("ablate.toml");
    fs::write(
        &cfg,
        "[sim.sensor]\nwidth = 32\nbeams = 16\n\n[train]\nepochs = 1\nbatch_size = 1\n\n\
         [ablate]\nstudies = [\"encoding\", \"sampling\"]\ntrain_frames = 1\neval_frames = 1\n",
    )
    .unwrap();
    let out = run(&["--config", p(&cfg), "--out", p(tmp.path()), "ablate"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("ablate.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "study,variant,seed,ap,aph,delta_aph");
    let variants: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(variants, ["polar", "cartesian", "smart_sampling", "fixed_sampling"]);
    for l in &lines[1..] {
        let c: Vec<&str> = l.split(',').collect();
        let (ap, aph): (f64, f64) = (c[3].parse().unwrap(), c[4].parse().unwrap());
        assert!((0.0..=1.0).contains(&ap) && aph <= ap + 1e-12);
    }
}
