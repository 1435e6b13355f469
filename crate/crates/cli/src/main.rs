use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rangeview::geometry::Encoding;
use rangeview::kernels::KernelKind;
use rangeview::Error;
use rangeview_cli::commands::{self, parse_kernel, DetectionSource};
use rangeview_cli::config::{Preset, RunConfig};

#[derive(Parser)]
#[command(name = "rangeview", version, about = "Range-image 3D detection: simulate, train, evaluate, count, ablate")]
struct Cli {
    /// TOML run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate {
        #[arg(long)]
        frames: Option<usize>,
        /// Azimuth steps per scan.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        beams: Option<usize>,
    },
    /// Train a detector on a dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_kernel)]
        kernel: Option<KernelKind>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        multiplier: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// polar or cartesian.
        #[arg(long)]
        encoding: Option<Encoding>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score detections against a dataset's labels.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Line-delimited detections to score.
        #[arg(long, conflicts_with = "run")]
        detections: Option<PathBuf>,
        /// Training run directory whose model produces the detections.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        score_threshold: Option<f64>,
        #[arg(long)]
        nms_iou: Option<f64>,
    },
    /// Parameter and FLOP table across kernels and depth multipliers.
    Bench {
        #[arg(long)]
        width: Option<usize>,
    },
    /// Paired training runs isolating one design choice at a time.
    Ablate {
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> rangeview::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Generate { frames, width, beams } => {
            cfg.data.frames = frames.unwrap_or(cfg.data.frames);
            cfg.sim.sensor.width = width.unwrap_or(cfg.sim.sensor.width);
            cfg.sim.sensor.beams = beams.unwrap_or(cfg.sim.sensor.beams);
        }
        Command::Train {
            data,
            kernel,
            preset,
            multiplier,
            epochs,
            batch,
            lr,
            encoding,
            ..
        } => {
            if data.is_some() {
                cfg.data.train = data.clone();
            }
            cfg.model.kernel = kernel.unwrap_or(cfg.model.kernel);
            cfg.model.preset = preset.unwrap_or(cfg.model.preset);
            cfg.model.multiplier = multiplier.unwrap_or(cfg.model.multiplier);
            cfg.model.encoding = encoding.unwrap_or(cfg.model.encoding);
            cfg.train.epochs = epochs.or(cfg.train.epochs);
            cfg.train.batch_size = batch.or(cfg.train.batch_size);
            cfg.train.lr = lr.unwrap_or(cfg.train.lr);
        }
        Command::Eval {
            data,
            score_threshold,
            nms_iou,
            ..
        } => {
            if data.is_some() {
                cfg.data.eval = data.clone();
            }
            cfg.detector.score_threshold = score_threshold.unwrap_or(cfg.detector.score_threshold);
            cfg.detector.nms_iou = nms_iou.unwrap_or(cfg.detector.nms_iou);
        }
        Command::Bench { width } => cfg.bench.width = width.unwrap_or(cfg.bench.width),
        Command::Ablate { epochs } => cfg.train.epochs = epochs.or(cfg.train.epochs),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> rangeview::Result<()> {
    let out = &cli.out;
    match &cli.command {
        Command::Generate { .. } => commands::cmd_generate(cfg, out),
        Command::Train { resume, .. } => commands::cmd_train(cfg, out, *resume).map(|_| ()),
        Command::Eval { detections, run, .. } => {
            let source = match (detections, run) {
                (Some(d), _) => DetectionSource::File(d.clone()),
                (None, Some(r)) => DetectionSource::Run(r.clone()),
                (None, None) => return Err(Error::Config("eval needs --detections or --run".into())),
            };
            let report = commands::cmd_eval(cfg, &source, out)?;
            for section in &report.sections {
                for c in &section.classes {
                    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                    println!(
                        "{:>3} {:<12} AP {} APH {} (IoU {}, {} gt, {} det)",
                        section.mode.name(),
                        c.class,
                        f(c.overall.ap),
                        f(c.overall.aph),
                        c.iou_threshold,
                        c.overall.num_gt,
                        c.overall.num_det
                    );
                }
            }
            Ok(())
        }
        Command::Bench { .. } => commands::cmd_bench(cfg, out).map(|csv| print!("{csv}")),
        Command::Ablate { .. } => commands::cmd_ablate(cfg, out).map(|csv| print!("{csv}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
