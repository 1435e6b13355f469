use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rangeview::backbone::{Network, NetworkSpec};
use rangeview::detector::Model;
use rangeview::kernels::KernelKind;
use rangeview::labels::{read_detections, write_detections, Detection, Label};
use rangeview::metrics::{full_report, FullReport};
use rangeview::rangeimage::{RangeImage, SamplingMode};
use rangeview::geometry::Encoding;
use rangeview::simgen::{generate_dataset, generate_frames, load_dataset};
use rangeview::train::{detect_all, evaluate_model, load_checkpoint, train, RunFiles, TrainState};
use rangeview::{Error, Result};

use crate::config::{Preset, RunConfig, Study};

pub const CONFIG_FILE: &str = "config.toml";

type Frames = Vec<(RangeImage, Vec<Label>)>;

fn write_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

fn model_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn build_model(cfg: &RunConfig, seed: u64) -> Result<Model> {
    Model::build(&cfg.model.network_spec()?, cfg.detector_config(), &mut model_rng(seed))
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let m = generate_dataset(out, cfg.data.frames, &cfg.sim, cfg.seed)?;
    write_config(cfg, out)?;
    eprintln!("wrote {} frames of {}x{} to {}", m.frames, cfg.sim.sensor.beams, cfg.sim.sensor.width, out.display());
    Ok(())
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("no {what} dataset given (set data.{what} or pass --data)")))
}

/// Trains into `out`, continuing from `out/checkpoint.bin` when `resume` is
/// set and the file exists.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: bool) -> Result<TrainState> {
    let data = load_dataset(require(&cfg.data.train, "train")?)?;
    let mut model = build_model(cfg, cfg.seed)?;
    write_config(cfg, out)?;
    let files = RunFiles { dir: Some(out.to_path_buf()) };
    let ckpt = files.checkpoint().expect("directory set");
    let mut state = if resume && ckpt.exists() {
        let s = load_checkpoint(&mut model, &ckpt)?;
        eprintln!("resuming at epoch {} step {}", s.epoch, s.step());
        s
    } else {
        TrainState::fresh(&model)
    };
    eprintln!(
        "training {} ({} kernel, {} parameters) on {} frames",
        model.network.spec.name,
        cfg.model.kernel,
        model.param_count(),
        data.len()
    );
    train(&mut model, &data, &cfg.train, cfg.seed, &mut state, &files, |l| {
        eprintln!("epoch {:4} step {:6} loss {:.5} (cls {:.5}, reg {:.5}) {:.1}s", l.epoch, l.step, l.loss, l.cls, l.reg, l.seconds)
    })?;
    Ok(state)
}

/// Model of a finished training run directory.
pub fn load_run(run: &Path) -> Result<(RunConfig, Model)> {
    let cfg = RunConfig::load(&run.join(CONFIG_FILE))?;
    let mut model = build_model(&cfg, cfg.seed)?;
    load_checkpoint(&mut model, run.join("checkpoint.bin"))?;
    Ok((cfg, model))
}

fn group_by_frame(dets: Vec<(u64, Detection)>, frames: usize) -> Result<Vec<Vec<Detection>>> {
    let mut out = vec![Vec::new(); frames];
    for (f, d) in dets {
        let slot = out
            .get_mut(f as usize)
            .ok_or_else(|| Error::Format(format!("detection for frame {f}, but the dataset has {frames} frames")))?;
        slot.push(d);
    }
    Ok(out)
}

/// Where `eval` gets detections from.
pub enum DetectionSource {
    File(PathBuf),
    Run(PathBuf),
}

/// Scores detections against the labels of the eval dataset and writes
/// `report.json` and `report.csv` (plus `detections.jsonl` for a run).
pub fn cmd_eval(cfg: &RunConfig, source: &DetectionSource, out: &Path) -> Result<FullReport> {
    let data = load_dataset(require(&cfg.data.eval, "eval")?)?;
    std::fs::create_dir_all(out)?;
    let dets = match source {
        DetectionSource::File(p) => {
            let f = File::open(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            group_by_frame(read_detections(BufReader::new(f))?, data.len())?
        }
        DetectionSource::Run(run) => {
            let (_, mut model) = load_run(run)?;
            model.config.score_threshold = cfg.detector.score_threshold;
            model.config.nms_iou = cfg.detector.nms_iou;
            let images: Vec<&RangeImage> = data.iter().map(|(i, _)| i).collect();
            let dets = detect_all(&model, &images)?;
            let mut w = BufWriter::new(File::create(out.join("detections.jsonl"))?);
            write_detections(&mut w, dets.iter().enumerate().flat_map(|(f, d)| d.iter().map(move |d| (f as u64, d))))?;
            w.flush()?;
            dets
        }
    };
    if dets.iter().all(Vec::is_empty) {
        eprintln!("warning: no detections; every AP is 0");
    }
    let gts: Vec<Vec<Label>> = data.iter().map(|(_, l)| l.clone()).collect();
    let report = full_report(&dets, &gts, &cfg.eval);
    std::fs::write(out.join("report.json"), report.to_json())?;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    write_config(cfg, out)?;
    Ok(report)
}

pub const BENCH_HEADER: &str = "\
# flops: one multiply-accumulate = 2 FLOPs, one exp = 4 FLOPs, comparisons and relu free
# kernel_flops: aggregation kernels only; flops adds the 1x1 shortcut projections
# rq uses K range buckets and costs exactly K conv2d kernels
preset,kernel,multiplier,height,width,rq_buckets,params,flops,kernel_flops";

/// Parameter and FLOP counts of every preset, kernel and multiplier.
pub fn bench_csv(cfg: &RunConfig) -> Result<String> {
    let b = &cfg.bench;
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for &preset in &b.presets {
        for &kind in &b.kernels {
            for &m in &b.multipliers {
                let mut mc = cfg.model.clone();
                mc.preset = preset;
                mc.kernel = kind;
                mc.multiplier = m;
                mc.block_kernels.clear();
                mc.spec = None;
                let spec: NetworkSpec = mc.network_spec()?;
                let net = Network::build(&spec, &mut model_rng(0))?;
                let c = net.cost(b.height, b.width);
                let name = match preset {
                    Preset::Pedestrian => "pedestrian",
                    Preset::Vehicle => "vehicle",
                };
                out.push_str(&format!(
                    "{name},{},{m},{},{},{},{},{},{}\n",
                    kind.name(),
                    b.height,
                    b.width,
                    spec.kernel_options.rq_buckets,
                    c.total_params,
                    c.total_flops,
                    c.total_kernel_flops
                ));
            }
        }
    }
    Ok(out)
}

pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<String> {
    let csv = bench_csv(cfg)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("bench.csv"), &csv)?;
    write_config(cfg, out)?;
    Ok(csv)
}

fn dataset(cfg: &RunConfig, path: &Option<PathBuf>, frames: usize, seed: u64) -> Result<Frames> {
    match path {
        Some(p) => load_dataset(p),
        None => generate_frames(&cfg.sim, frames, seed),
    }
}

/// Trains a fresh model under `cfg` and scores it; returns (AP, APH) of the
/// first detector class.
pub fn train_and_score(cfg: &RunConfig, train_data: &Frames, eval_data: &Frames, seed: u64) -> Result<(f64, f64)> {
    let mut model = build_model(cfg, seed)?;
    let mut state = TrainState::fresh(&model);
    train(&mut model, train_data, &cfg.train, seed, &mut state, &RunFiles::default(), |_| {})?;
    let report = evaluate_model(&model, eval_data, &cfg.eval)?;
    let class = &model.config.classes[0].name;
    Ok((
        report.ap(cfg.eval.mode, class).unwrap_or(0.0),
        report.aph(cfg.eval.mode, class).unwrap_or(0.0),
    ))
}

pub const ABLATE_HEADER: &str = "study,variant,seed,ap,aph,delta_aph";

/// Paired runs: every variant of a study shares the seed and data of its
/// baseline, and `delta_aph` is variant minus baseline.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let a = &cfg.ablate;
    let mut csv = format!("{ABLATE_HEADER}\n");
    for &seed in &a.seeds {
        let train_data = dataset(cfg, &cfg.data.train, a.train_frames, seed)?;
        let eval_data = dataset(cfg, &cfg.data.eval, a.eval_frames, seed ^ 0xe7a1_0000)?;
        for &study in &a.studies {
            let mut variants: Vec<(String, RunConfig)> = Vec::new();
            let mut base = cfg.clone();
            match study {
                Study::Encoding => {
                    base.model.encoding = Encoding::Polar;
                    let mut v = base.clone();
                    v.model.encoding = Encoding::Cartesian;
                    variants.push(("cartesian".into(), v));
                }
                Study::Sampling => {
                    base.model.sampling = SamplingMode::Smart;
                    let mut v = base.clone();
                    v.model.sampling = SamplingMode::Fixed;
                    variants.push(("fixed_sampling".into(), v));
                }
                Study::Blocks => {
                    base.model.block_kernels.clear();
                    for block in base.model.network_spec()?.blocks.iter().map(|b| b.name.clone()) {
                        let mut v = base.clone();
                        v.model.block_kernels.insert(block.clone(), a.block_kernel);
                        variants.push((format!("{block}={}", a.block_kernel.name()), v));
                    }
                }
            }
            let study_name = format!("{study:?}").to_lowercase();
            let (bap, baph) = train_and_score(&base, &train_data, &eval_data, seed)?;
            let baseline = match study {
                Study::Encoding => "polar".to_string(),
                Study::Sampling => "smart_sampling".to_string(),
                Study::Blocks => format!("all={}", base.model.kernel.name()),
            };
            let row = format!("{study_name},{baseline},{seed},{bap:.6},{baph:.6},0.000000\n");
            eprint!("{row}");
            csv.push_str(&row);
            for (name, v) in variants {
                let (ap, aph) = train_and_score(&v, &train_data, &eval_data, seed)?;
                let row = format!("{study_name},{name},{seed},{ap:.6},{aph:.6},{:.6}\n", aph - baph);
                eprint!("{row}");
                csv.push_str(&row);
            }
        }
    }
    std::fs::write(out.join("ablate.csv"), &csv)?;
    Ok(csv)
}

/// Parses a kernel name for the command line.
pub fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    s.parse::<KernelKind>().map_err(|e| e.to_string())
}
