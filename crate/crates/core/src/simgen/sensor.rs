use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geometry::{Box7DoF, CartesianVec3, SphericalCoord};
use crate::labels::Label;
use crate::rangeimage::RangeImage;

/// Feature channels written per pixel: range, intensity, elongation.
pub const CHANNELS: usize = 3;

/// Spinning LiDAR at the origin. Row 0 is the highest beam; column `j` looks
/// along `φ = π − 2π (j + ½) / width`, so the image sweeps clockwise seen from
/// above starting behind the sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub beams: usize,
    pub width: usize,
    /// Lowest and highest beam angle in radians.
    pub inclination: [f64; 2],
    pub max_range: f64,
    pub dropout: f64,
    pub noise_sigma: f64,
    /// Drops every `stripe_period`-th column when set, imitating a regular
    /// pattern of missing returns.
    pub stripe_period: Option<usize>,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            beams: 64,
            width: 265,
            inclination: [(-17.6f64).to_radians(), 2.4f64.to_radians()],
            max_range: 100.0,
            dropout: 0.0,
            noise_sigma: 0.02,
            stripe_period: None,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sensor: {m}")));
        if self.beams == 0 || self.width == 0 {
            return bad("beams and width must be positive");
        }
        if !(self.inclination[0] <= self.inclination[1]) || self.inclination.iter().any(|a| a.abs() >= std::f64::consts::FRAC_PI_2) {
            return bad("inclination must be an ascending pair inside (-π/2, π/2)");
        }
        if !(self.max_range > 0.0) {
            return bad("max_range must be positive");
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if self.stripe_period == Some(0) {
            return bad("stripe_period must be positive");
        }
        Ok(())
    }

    pub fn beam_angle(&self, row: usize) -> f64 {
        let [lo, hi] = self.inclination;
        if self.beams == 1 {
            return 0.5 * (lo + hi);
        }
        hi - (hi - lo) * row as f64 / (self.beams - 1) as f64
    }

    pub fn azimuth(&self, col: usize) -> f64 {
        std::f64::consts::PI - 2.0 * std::f64::consts::PI * (col as f64 + 0.5) / self.width as f64
    }
}

/// Unit direction of the ray at the given angles.
pub fn ray_direction(theta: f64, phi: f64) -> CartesianVec3 {
    CartesianVec3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin())
}

/// Slab intersection of a ray from the origin with a yaw-rotated box. Returns
/// the entry distance and the cosine between the ray and the face normal; rays
/// starting inside the box report no hit.
pub fn ray_box(dir: CartesianVec3, b: &Box7DoF) -> Option<(f64, f64)> {
    let o = b.to_local(CartesianVec3::new(0.0, 0.0, 0.0));
    let (s, c) = b.yaw.sin_cos();
    let d = [c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z];
    let o = [o.x, o.y, o.z];
    let half = [0.5 * b.length, 0.5 * b.width, 0.5 * b.height];
    let (mut near, mut far, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let t1 = (-half[k] - o[k]) / d[k];
        let t2 = (half[k] - o[k]) / d[k];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > near {
            near = lo;
            axis = k;
        }
        far = far.min(hi);
    }
    (near <= far && near > 0.0).then(|| (near, d[axis].abs()))
}

struct Hit {
    range: f64,
    albedo: f64,
    cosine: f64,
    actor: Option<usize>,
}

fn cast(scene: &Scene, dir: CartesianVec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, a) in scene.actors.iter().enumerate() {
        if let Some((t, cosine)) = ray_box(dir, &a.bbox) {
            if best.as_ref().is_none_or(|h| t < h.range) {
                best = Some(Hit {
                    range: t,
                    albedo: a.albedo,
                    cosine,
                    actor: Some(i),
                });
            }
        }
    }
    if let Some(z) = scene.ground_z {
        if dir.z < 0.0 && z < 0.0 {
            let t = z / dir.z;
            if best.as_ref().is_none_or(|h| t < h.range) {
                best = Some(Hit {
                    range: t,
                    albedo: scene.ground_albedo,
                    cosine: dir.z.abs(),
                    actor: None,
                });
            }
        }
    }
    best
}

/// Renders `scene` and returns the image together with the labels of every
/// actor that has at least one returned point inside its box.
pub fn raycast<R: Rng + ?Sized>(scene: &Scene, sensor: &SensorModel, rng: &mut R) -> Result<(RangeImage, Vec<Label>)> {
    sensor.validate()?;
    let (h, w) = (sensor.beams, sensor.width);
    let noise = (sensor.noise_sigma > 0.0).then(|| Normal::new(0.0, sensor.noise_sigma).expect("valid sigma"));
    let mut coords = Vec::with_capacity(h * w);
    let mut features = vec![0.0; h * w * CHANNELS];
    let mut mask = vec![false; h * w];
    let mut seen = vec![false; scene.actors.len()];
    for row in 0..h {
        let theta = sensor.beam_angle(row);
        for col in 0..w {
            let phi = sensor.azimuth(col);
            let i = row * w + col;
            // draw noise and dropout for every pixel so the stream position
            // does not depend on the geometry
            let eps = noise.map_or(0.0, |n| n.sample(rng));
            let drop = rng.random::<f64>() < sensor.dropout;
            let striped = sensor.stripe_period.is_some_and(|p| col % p == p - 1);
            let hit = cast(scene, ray_direction(theta, phi)).filter(|h| h.range <= sensor.max_range);
            match hit {
                Some(hit) if !drop && !striped => {
                    let r = (hit.range + eps).max(1e-3);
                    coords.push(SphericalCoord::new(theta, phi, r));
                    features[i * CHANNELS..(i + 1) * CHANNELS].copy_from_slice(&[r, hit.albedo, 1.0 - hit.cosine]);
                    mask[i] = true;
                    if let Some(a) = hit.actor {
                        let p = crate::geometry::spherical_to_cartesian(coords[i]);
                        if scene.actors[a].bbox.contains(p) {
                            seen[a] = true;
                        }
                    }
                }
                _ => coords.push(SphericalCoord::new(theta, phi, 0.0)),
            }
        }
    }
    let labels = scene
        .actors
        .iter()
        .zip(&seen)
        .filter(|(_, &s)| s)
        .map(|(a, _)| Label {
            class: a.class.clone(),
            bbox: a.bbox,
        })
        .collect();
    Ok((RangeImage::new(h, w, CHANNELS, coords, features, mask)?, labels))
}
