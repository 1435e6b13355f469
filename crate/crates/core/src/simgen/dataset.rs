use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::SceneConfig;
use super::sensor::{raycast, SensorModel};
use crate::error::{Error, Result};
use crate::labels::{read_labels, write_labels, Label};
use crate::rangeimage::{read_rimg, write_rimg, RangeImage};

pub const MANIFEST: &str = "dataset.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sensor: SensorModel,
    pub scene: SceneConfig,
}

/// Written next to the frames so a dataset documents how it was made.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: usize,
    pub seed: u64,
    pub config: SimConfig,
}

/// Independent random stream of one frame.
pub fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64);
    rng
}

/// Samples and renders frame `index` of the dataset defined by `seed`.
pub fn generate_frame(cfg: &SimConfig, seed: u64, index: usize) -> Result<(RangeImage, Vec<Label>)> {
    let mut rng = frame_rng(seed, index);
    let scene = cfg.scene.sample(&mut rng, seed)?;
    raycast(&scene, &cfg.sensor, &mut rng)
}

/// Frames `[0, n)` in memory.
pub fn generate_frames(cfg: &SimConfig, n: usize, seed: u64) -> Result<Vec<(RangeImage, Vec<Label>)>> {
    cfg.sensor.validate()?;
    cfg.scene.validate()?;
    crate::par::map(n, |i| generate_frame(cfg, seed, i)).into_iter().collect()
}

pub fn frame_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("frame_{index:06}.rimg")), dir.join(format!("frame_{index:06}.jsonl")))
}

/// Writes `n` frames plus a manifest into `dir`.
pub fn generate_dataset(dir: impl AsRef<Path>, n: usize, cfg: &SimConfig, seed: u64) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Config("at least one frame is required".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, (img, labels)) in generate_frames(cfg, n, seed)?.into_iter().enumerate() {
        let (rimg, lab) = frame_paths(dir, i);
        write_rimg(rimg, &img)?;
        write_labels(lab, &labels)?;
    }
    let manifest = Manifest {
        frames: n,
        seed,
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

/// Every frame of a dataset directory, in index order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(RangeImage, Vec<Label>)>> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Config(format!("{}: not a dataset directory ({e})", dir.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{MANIFEST}: {e}")))?;
    (0..manifest.frames)
        .map(|i| {
            let (rimg, lab) = frame_paths(dir, i);
            Ok((read_rimg(rimg)?, read_labels(lab)?))
        })
        .collect()
}
