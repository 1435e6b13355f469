use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rangeview::backbone::NetworkSpec;
use rangeview::detector::{ClassSpec, DetectorConfig};
use rangeview::geometry::Encoding;
use rangeview::kernels::{KernelKind, KernelOptions};
use rangeview::metrics::EvalConfig;
use rangeview::rangeimage::SamplingMode;
use rangeview::simgen::SimConfig;
use rangeview::train::TrainConfig;
use rangeview::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Pedestrian,
    Vehicle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    /// TOML network description replacing the preset.
    pub spec: Option<PathBuf>,
    pub kernel: KernelKind,
    /// Per-block kernel overrides.
    pub block_kernels: BTreeMap<String, KernelKind>,
    pub encoding: Encoding,
    pub sampling: SamplingMode,
    pub multiplier: f64,
    pub kernel_options: KernelOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Pedestrian,
            spec: None,
            kernel: KernelKind::EdgeConv,
            block_kernels: BTreeMap::new(),
            encoding: Encoding::Polar,
            sampling: SamplingMode::Smart,
            multiplier: 0.25,
            kernel_options: KernelOptions::default(),
        }
    }
}

impl ModelConfig {
    /// Network description with every override applied.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(Error::Config(format!("multiplier must be positive, got {}", self.multiplier)));
        }
        let mut spec = match &self.spec {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let mut s = NetworkSpec::from_toml(&text)?;
                s.kernel = self.kernel;
                s.multiplier = self.multiplier;
                s
            }
            None => match self.preset {
                Preset::Pedestrian => NetworkSpec::pedestrian(self.kernel, self.multiplier),
                Preset::Vehicle => NetworkSpec::vehicle(self.kernel, self.multiplier),
            },
        };
        spec.encoding = self.encoding;
        spec.sampling = self.sampling;
        spec.kernel_options = self.kernel_options.clone();
        for (block, kind) in &self.block_kernels {
            spec = spec.with_block_kernel(block, *kind)?;
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory used for training.
    pub train: Option<PathBuf>,
    /// Dataset directory used for evaluation.
    pub eval: Option<PathBuf>,
    /// Frames written by `generate`.
    pub frames: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            eval: None,
            frames: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub multipliers: Vec<f64>,
    pub kernels: Vec<KernelKind>,
    pub presets: Vec<Preset>,
    pub height: usize,
    pub width: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            multipliers: vec![0.25, 0.5, 1.0, 2.0],
            kernels: KernelKind::ALL.to_vec(),
            presets: vec![Preset::Pedestrian, Preset::Vehicle],
            height: 64,
            width: 2650,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    /// Polar encoding against Cartesian displacement.
    Encoding,
    /// Smart against fixed down-sampling.
    Sampling,
    /// One block at a time switched to `ablate.block_kernel`.
    Blocks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub studies: Vec<Study>,
    pub train_frames: usize,
    pub eval_frames: usize,
    /// Seeds of the paired runs; every variant uses each of them.
    pub seeds: Vec<u64>,
    /// Kernel swapped into one block at a time by the block study, on top of
    /// `model.kernel` everywhere else.
    pub block_kernel: KernelKind,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            studies: vec![Study::Encoding, Study::Sampling, Study::Blocks],
            train_frames: 10,
            eval_frames: 20,
            seeds: vec![0],
            block_kernel: KernelKind::EdgeConv,
        }
    }
}

/// Every setting of a run. Each section and field has a default, and the
/// resolved value is written into each run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            sim: SimConfig::default(),
            model: ModelConfig::default(),
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.sensor.validate()?;
        self.sim.scene.validate()?;
        self.detector.validate()?;
        self.train.validate()?;
        for (c, &t) in &self.eval.iou_thresholds {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("IoU threshold of {c} must lie in (0, 1)")));
            }
        }
        if self.eval.bucket_edges.windows(2).any(|w| w[0] >= w[1]) || self.eval.bucket_edges.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("distance bucket edges must be positive and ascending".into()));
        }
        self.model.network_spec()?;
        Ok(())
    }

    /// Detector classes matching the preset when left at the default.
    pub fn detector_config(&self) -> DetectorConfig {
        let mut d = self.detector.clone();
        if self.model.preset == Preset::Vehicle && d.classes == DetectorConfig::default().classes {
            d.classes = vec![ClassSpec::vehicle()];
        }
        d
    }
}
