use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box7DoF, CartesianVec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub class: String,
    pub bbox: Box7DoF,
    /// Reflectivity reported as intensity.
    pub albedo: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub actors: Vec<Actor>,
    /// Height of the ground plane; `None` disables it.
    pub ground_z: Option<f64>,
    pub ground_albedo: f64,
    pub seed: u64,
}

impl Scene {
    pub fn empty() -> Self {
        Self {
            actors: Vec::new(),
            ground_z: None,
            ground_albedo: 0.2,
            seed: 0,
        }
    }
}

/// How many actors of one class to place, and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorDistribution {
    pub class: String,
    /// Inclusive bounds on the actor count.
    pub count: [usize; 2],
    /// Nominal length, width, height.
    pub size: [f64; 3],
    /// Each extent is scaled by a factor drawn from `1 ± size_jitter`.
    pub size_jitter: f64,
    /// Horizontal distance of the center from the sensor.
    pub range: [f64; 2],
    pub albedo: [f64; 2],
}

impl ActorDistribution {
    pub fn pedestrians() -> Self {
        Self {
            class: "pedestrian".into(),
            count: [3, 8],
            size: [0.9, 0.9, 1.8],
            size_jitter: 0.1,
            range: [4.0, 30.0],
            albedo: [0.3, 0.9],
        }
    }

    pub fn vehicles() -> Self {
        Self {
            class: "vehicle".into(),
            count: [0, 2],
            size: [4.5, 2.0, 1.6],
            size_jitter: 0.1,
            range: [8.0, 40.0],
            albedo: [0.2, 0.8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub actors: Vec<ActorDistribution>,
    pub ground: bool,
    /// Sensor height above the ground plane.
    pub sensor_height: f64,
    pub ground_albedo: f64,
    /// Minimum top-down gap between the bounding circles of two actors.
    pub min_gap: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            actors: vec![ActorDistribution::pedestrians(), ActorDistribution::vehicles()],
            ground: true,
            sensor_height: 1.7,
            ground_albedo: 0.2,
            min_gap: 0.3,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        for a in &self.actors {
            let bad = |m: &str| Err(Error::Config(format!("actors of class {}: {m}", a.class)));
            if a.count[0] > a.count[1] {
                return bad("count bounds are reversed");
            }
            if a.size.iter().any(|&s| !(s > 0.0)) || !(0.0..1.0).contains(&a.size_jitter) {
                return bad("sizes must be positive and size_jitter in [0, 1)");
            }
            if !(a.range[0] > 0.0 && a.range[0] <= a.range[1]) {
                return bad("range must be a positive ascending pair");
            }
            if !(a.albedo[0] <= a.albedo[1]) {
                return bad("albedo bounds are reversed");
            }
        }
        if !(self.sensor_height > 0.0) || !(self.min_gap >= 0.0) {
            return Err(Error::Config("sensor_height must be positive and min_gap non-negative".into()));
        }
        Ok(())
    }

    /// Draws a scene. Actors stand on the ground plane; placements that would
    /// crowd an existing actor are redrawn a bounded number of times and then
    /// skipped.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, seed: u64) -> Result<Scene> {
        self.validate()?;
        let ground_z = -self.sensor_height;
        let mut actors: Vec<Actor> = Vec::new();
        for dist in &self.actors {
            let n = rng.random_range(dist.count[0]..=dist.count[1]);
            for _ in 0..n {
                let j = dist.size_jitter;
                let mut size = dist.size;
                for s in &mut size {
                    *s *= 1.0 + rng.random_range(-j..=j);
                }
                let radius = 0.5 * size[0].hypot(size[1]);
                for _attempt in 0..100 {
                    let r = rng.random_range(dist.range[0]..=dist.range[1]);
                    let az = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let albedo = rng.random_range(dist.albedo[0]..=dist.albedo[1]);
                    let center = CartesianVec3::new(r * az.cos(), r * az.sin(), ground_z + 0.5 * size[2]);
                    let crowded = actors.iter().any(|a| {
                        let d = (a.bbox.center.x - center.x).hypot(a.bbox.center.y - center.y);
                        d < radius + 0.5 * a.bbox.length.hypot(a.bbox.width) + self.min_gap
                    });
                    if !crowded {
                        actors.push(Actor {
                            class: dist.class.clone(),
                            bbox: Box7DoF::new(center, size[0], size[1], size[2], yaw)?,
                            albedo,
                        });
                        break;
                    }
                }
            }
        }
        Ok(Scene {
            actors,
            ground_z: self.ground.then_some(ground_z),
            ground_albedo: self.ground_albedo,
            seed,
        })
    }
}
