//! Mini-batch Adam training of a [`Model`] with checkpoints and a loss log.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::detector::{Model, PreparedFrame};
use crate::error::{Error, Result};
use crate::kernels::RqBuckets;
use crate::labels::{Detection, Label};
use crate::metrics::{full_report, EvalConfig, FullReport};
use crate::rangeimage::RangeImage;
use crate::simgen::frame_rng;
use crate::tensorcore::checkpoint::Checkpoint;
use crate::tensorcore::{Adam, AdamConfig, LrSchedule, OptimizerState, Tape, Tensor, Var};

/// Datasets smaller than this train with the small-data defaults.
pub const SMALL_DATASET: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `None` picks 8 for small datasets and 256 otherwise.
    pub batch_size: Option<usize>,
    /// `None` picks 200 for small datasets and 300 otherwise.
    pub epochs: Option<usize>,
    pub lr: f64,
    /// The learning rate decays exponentially to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub adam: AdamConfig,
    pub shuffle: bool,
    /// Fit RQ bucket boundaries to the training data before the first step.
    pub calibrate_buckets: bool,
    /// Save a checkpoint every this many epochs (the last epoch always saves).
    pub checkpoint_every: usize,
    /// Frame plans and targets are kept in memory up to this many frames.
    pub cache_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: None,
            epochs: None,
            lr: 1e-3,
            final_lr_fraction: 0.01,
            adam: AdamConfig::default(),
            shuffle: true,
            calibrate_buckets: true,
            checkpoint_every: 10,
            cache_limit: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == Some(0) || self.epochs == Some(0) {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("lr must be positive and final_lr_fraction in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn resolved_batch(&self, frames: usize) -> usize {
        self.batch_size.unwrap_or(if frames < SMALL_DATASET { 8 } else { 256 })
    }

    pub fn resolved_epochs(&self, frames: usize) -> usize {
        self.epochs.unwrap_or(if frames < SMALL_DATASET { 200 } else { 300 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub cls: f64,
    pub reg: f64,
    pub seconds: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,lr,loss,cls,reg,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6e},{:.9},{:.9},{:.9},{:.3}",
            self.epoch, self.step, self.lr, self.loss, self.cls, self.reg, self.seconds
        )
    }
}

/// Mutable training progress that a checkpoint restores.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn fresh(model: &Model) -> Self {
        let params: Vec<Tensor> = model.named_params().map(|(_, t)| t.clone()).collect();
        Self {
            epoch: 0,
            optimizer: OptimizerState::new(&params),
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }
}

const META_EPOCH: &str = "meta.epoch";
const META_BUCKETS: &str = "meta.buckets.";

/// Model weights, RQ boundaries, epoch counter and Adam moments.
pub fn to_checkpoint(model: &Model, state: &TrainState) -> Checkpoint {
    let mut tensors: Vec<(String, Tensor)> = model.named_params().cloned().collect();
    let mut m = state.optimizer.m.clone();
    let mut v = state.optimizer.v.clone();
    let mut meta = vec![(META_EPOCH.to_string(), Tensor::scalar(state.epoch as f64))];
    for (i, b) in model.network.buckets().iter().enumerate() {
        let cuts = b.cuts().to_vec();
        meta.push((format!("{META_BUCKETS}{i}"), Tensor::new(&[cuts.len()], cuts).expect("1-d")));
    }
    for (name, t) in meta {
        m.push(Tensor::zeros(t.shape()));
        v.push(Tensor::zeros(t.shape()));
        tensors.push((name, t));
    }
    Checkpoint {
        tensors,
        optimizer: Some(OptimizerState {
            step: state.optimizer.step,
            m,
            v,
        }),
    }
}

/// Loads weights and buckets into `model`, whose architecture must match the
/// one that wrote the checkpoint, and returns the saved progress.
pub fn restore_checkpoint(model: &mut Model, ckpt: &Checkpoint) -> Result<TrainState> {
    let levels = model.network.buckets().len();
    let mut buckets = Vec::with_capacity(levels);
    for i in 0..levels {
        let t = ckpt
            .get(&format!("{META_BUCKETS}{i}"))
            .ok_or_else(|| Error::Format(format!("checkpoint lacks buckets of level {i}")))?;
        buckets.push(RqBuckets::from_cuts(t.data().to_vec())?);
    }
    model.network.set_buckets(buckets)?;
    let mut m = Vec::new();
    let mut v = Vec::new();
    let opt = ckpt.optimizer.as_ref();
    for (name, t) in model.named_params_mut() {
        let idx = ckpt
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
        let saved = &ckpt.tensors[idx].1;
        if saved.shape() != t.shape() {
            return Err(Error::shape("checkpoint parameter", t.shape(), saved.shape()));
        }
        *t = saved.clone();
        match opt {
            Some(o) => {
                m.push(o.m[idx].clone());
                v.push(o.v[idx].clone());
            }
            None => {
                m.push(Tensor::zeros(t.shape()));
                v.push(Tensor::zeros(t.shape()));
            }
        }
    }
    let epoch = ckpt.get(META_EPOCH).map_or(Ok(0.0), |t| t.item())? as usize;
    Ok(TrainState {
        epoch,
        optimizer: OptimizerState {
            step: opt.map_or(0, |o| o.step),
            m,
            v,
        },
    })
}

/// Where a run writes its artifacts; `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct RunFiles {
    pub dir: Option<PathBuf>,
}

impl RunFiles {
    pub fn checkpoint(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("checkpoint.bin"))
    }

    pub fn loss_csv(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("loss.csv"))
    }

    pub fn nan_dump(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("nan_dump.json"))
    }
}

#[derive(Serialize)]
struct NanDump<'a> {
    epoch: usize,
    step: u64,
    frames: &'a [usize],
    losses: Vec<[f64; 3]>,
    param_norms: Vec<(String, f64)>,
    labels: Vec<Vec<[f64; 7]>>,
}

enum Frames<'a> {
    Cached(Vec<PreparedFrame>),
    Lazy(&'a [(RangeImage, Vec<Label>)]),
}

impl Frames<'_> {
    fn get(&self, model: &Model, i: usize) -> Result<std::borrow::Cow<'_, PreparedFrame>> {
        match self {
            Frames::Cached(v) => Ok(std::borrow::Cow::Borrowed(&v[i])),
            Frames::Lazy(d) => Ok(std::borrow::Cow::Owned(model.prepare(&d[i].0, &d[i].1)?)),
        }
    }
}

/// Loss parts of one frame and the gradient of its total, in
/// [`Model::named_params`] order.
pub fn frame_gradient(model: &Model, frame: &PreparedFrame) -> Result<([f64; 3], Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = model.named_params().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = model.loss_tape(&mut tape, &vars, frame)?;
    let parts = [loss.total, loss.cls, loss.reg].map(|v| tape.value(v).data()[0]);
    let grads = tape.backward(loss.total)?;
    let g = vars.iter().map(|&v| grads.get_or_zeros(v, tape.value(v).shape())).collect();
    Ok((parts, g))
}

/// Mean loss parts over `data` without updating anything.
pub fn dataset_loss(model: &Model, data: &[(RangeImage, Vec<Label>)]) -> Result<[f64; 3]> {
    let mut acc = [0.0; 3];
    for (img, labels) in data {
        let frame = model.prepare(img, labels)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = model.named_params().map(|(_, t)| tape.constant(t.clone())).collect();
        let loss = model.loss_tape(&mut tape, &vars, &frame)?;
        for (a, v) in acc.iter_mut().zip([loss.total, loss.cls, loss.reg]) {
            *a += tape.value(v).data()[0] / data.len() as f64;
        }
    }
    Ok(acc)
}

/// Trains `model` in place from `state` until the configured epoch count,
/// reporting each finished epoch to `on_epoch`. Checkpoints and the loss log
/// go to `files` when it names a directory.
pub fn train(
    model: &mut Model,
    data: &[(RangeImage, Vec<Label>)],
    cfg: &TrainConfig,
    seed: u64,
    state: &mut TrainState,
    files: &RunFiles,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training needs at least one frame".into()));
    }
    let n = data.len();
    let batch = cfg.resolved_batch(n).min(n);
    let epochs = cfg.resolved_epochs(n);
    if cfg.calibrate_buckets && state.step() == 0 {
        model.network.calibrate_buckets(data.iter().map(|(img, _)| img))?;
    }
    let frames = if n <= cfg.cache_limit {
        Frames::Cached(data.iter().map(|(img, l)| model.prepare(img, l)).collect::<Result<_>>()?)
    } else {
        Frames::Lazy(data)
    };
    let schedule = LrSchedule {
        initial: cfg.lr,
        final_fraction: cfg.final_lr_fraction,
        total_epochs: epochs,
    };
    let adam = Adam::new(cfg.adam);
    let steps_per_epoch = n.div_ceil(batch);
    let mut csv = match files.loss_csv() {
        Some(p) => {
            let fresh = state.epoch == 0 || !p.exists();
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&p)?;
            if fresh {
                f.set_len(0)?;
                writeln!(f, "{LOSS_CSV_HEADER}")?;
            }
            Some(f)
        }
        None => None,
    };
    let mut logs = Vec::new();
    while state.epoch < epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle {
            // one stream per epoch keeps resumed runs on the same sequence
            order.shuffle(&mut frame_rng(seed ^ 0x5eed_0f_ba7c, state.epoch));
        }
        let mut sums = [0.0; 3];
        let mut lr = 0.0;
        for (s, idx) in order.chunks(batch).enumerate() {
            lr = schedule.at(state.epoch as f64 + s as f64 / steps_per_epoch as f64);
            let mut grad: Option<Vec<Tensor>> = None;
            let mut parts = Vec::with_capacity(idx.len());
            for &i in idx {
                let frame = frames.get(model, i)?;
                let (p, g) = frame_gradient(model, &frame)?;
                parts.push(p);
                match &mut grad {
                    None => grad = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b)?;
                        }
                    }
                }
            }
            let mut grad = grad.expect("non-empty batch");
            for g in &mut grad {
                *g = g.scale(1.0 / idx.len() as f64);
            }
            let finite = parts.iter().all(|p| p.iter().all(|v| v.is_finite())) && grad.iter().all(Tensor::all_finite);
            if !finite {
                let path = files.nan_dump();
                if let Some(p) = &path {
                    let dump = NanDump {
                        epoch: state.epoch,
                        step: state.step(),
                        frames: idx,
                        losses: parts.clone(),
                        param_norms: model
                            .named_params()
                            .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v * v).sum::<f64>().sqrt()))
                            .collect(),
                        labels: idx
                            .iter()
                            .map(|&i| {
                                data[i]
                                    .1
                                    .iter()
                                    .map(|l| {
                                        let b = &l.bbox;
                                        [b.center.x, b.center.y, b.center.z, b.length, b.width, b.height, b.yaw]
                                    })
                                    .collect()
                            })
                            .collect(),
                    };
                    std::fs::write(p, serde_json::to_string_pretty(&dump).unwrap_or_default())?;
                }
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient at epoch {} step {} (frames {idx:?}){}",
                    state.epoch,
                    state.step(),
                    path.map_or(String::new(), |p| format!(", batch dumped to {}", p.display()))
                )));
            }
            for p in &parts {
                for (s, v) in sums.iter_mut().zip(p) {
                    *s += v;
                }
            }
            let mut params: Vec<Tensor> = model.named_params().map(|(_, t)| t.clone()).collect();
            let res = adam.step(&mut params, &grad, &mut state.optimizer, lr);
            for ((_, t), p) in model.named_params_mut().zip(params) {
                *t = p;
            }
            res?;
        }
        state.epoch += 1;
        let log = EpochLog {
            epoch: state.epoch,
            step: state.step(),
            lr,
            loss: sums[0] / n as f64,
            cls: sums[1] / n as f64,
            reg: sums[2] / n as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(f) = &mut csv {
            writeln!(f, "{}", log.csv_row())?;
        }
        let save = state.epoch == epochs || (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0);
        if let (true, Some(p)) = (save, files.checkpoint()) {
            to_checkpoint(model, state).save(p)?;
        }
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Detections of every frame.
pub fn detect_all(model: &Model, images: &[&RangeImage]) -> Result<Vec<Vec<Detection>>> {
    images.iter().map(|img| model.detect(img)).collect()
}

/// Runs the detector over `data` and scores it against the labels.
pub fn evaluate_model(model: &Model, data: &[(RangeImage, Vec<Label>)], cfg: &EvalConfig) -> Result<FullReport> {
    let images: Vec<&RangeImage> = data.iter().map(|(i, _)| i).collect();
    let dets = detect_all(model, &images)?;
    let gts: Vec<Vec<Label>> = data.iter().map(|(_, l)| l.clone()).collect();
    Ok(full_report(&dets, &gts, cfg))
}

/// Loads a checkpoint file into `model`.
pub fn load_checkpoint(model: &mut Model, path: impl AsRef<Path>) -> Result<TrainState> {
    restore_checkpoint(model, &Checkpoint::load(path)?)
}
