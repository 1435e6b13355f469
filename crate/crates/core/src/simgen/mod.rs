//! Synthetic spinning-LiDAR scans of box-shaped actors on a ground plane.

mod dataset;
mod scene;
mod sensor;

pub use dataset::{frame_paths, frame_rng, generate_dataset, generate_frame, generate_frames, load_dataset, Manifest, SimConfig, MANIFEST};
pub use scene::{Actor, ActorDistribution, Scene, SceneConfig};
pub use sensor::{ray_box, ray_direction, raycast, SensorModel, CHANNELS};
