use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Box7DoF, CartesianVec3};

/// Frame of the regressed center offset and heading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionFrame {
    /// Rotated about the vertical axis by the pixel's azimuth, so the targets
    /// do not change when the whole scene spins around the sensor.
    #[default]
    Azimuth,
    /// Sensor axes.
    World,
}

impl RegressionFrame {
    /// Rotation angle applied at a pixel located at `p`.
    pub fn angle(self, p: CartesianVec3) -> f64 {
        match self {
            Self::Azimuth => p.y.atan2(p.x),
            Self::World => 0.0,
        }
    }

    /// World offset and yaw to the regressed form at `p`.
    pub fn encode(self, p: CartesianVec3, d: CartesianVec3, yaw: f64) -> (CartesianVec3, f64) {
        let a = self.angle(p);
        if a == 0.0 {
            return (d, yaw);
        }
        let (s, c) = a.sin_cos();
        (CartesianVec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z), wrap_angle(yaw - a))
    }

    /// Inverse of [`RegressionFrame::encode`].
    pub fn decode(self, p: CartesianVec3, d: CartesianVec3, yaw: f64) -> (CartesianVec3, f64) {
        let a = self.angle(p);
        if a == 0.0 {
            return (d, yaw);
        }
        let (s, c) = a.sin_cos();
        (CartesianVec3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z), wrap_angle(yaw + a))
    }
}

/// Ground-truth box with its class index (0-based, background excluded).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetBox {
    pub class: usize,
    pub bbox: Box7DoF,
}

/// Dense supervision for one output grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMap {
    pub num_classes: usize,
    /// `[pixels * num_classes]` heatmap in `[0, 1]`.
    pub cls: Vec<f64>,
    /// `[pixels * 8]`: offset to center, absolute size, sin and cos of yaw.
    pub reg: Vec<f64>,
    pub reg_valid: Vec<bool>,
}

fn gaussian(p: CartesianVec3, b: &Box7DoF, sigma: f64) -> f64 {
    let d = p - b.center;
    (-(d.x * d.x + d.y * d.y + d.z * d.z) / (2.0 * sigma * sigma)).exp()
}

/// Heatmap targets. Each box's Gaussian is divided by its largest value over
/// the valid pixels inside the box, so that pixel scores exactly 1. Boxes
/// with no valid pixel inside contribute nothing; values above 1 (a pixel
/// outside the box but nearer its center) are clipped to 1.
pub fn make_cls_targets(points: &[CartesianVec3], mask: &[bool], boxes: &[TargetBox], sigma: &[f64], num_classes: usize) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![0.0f64; n * num_classes];
    for b in boxes {
        let s = sigma[b.class];
        let peak = (0..n)
            .filter(|&i| mask[i] && b.bbox.contains(points[i]))
            .map(|i| gaussian(points[i], &b.bbox, s))
            .fold(0.0, f64::max);
        if peak <= 0.0 {
            continue;
        }
        for i in (0..n).filter(|&i| mask[i]) {
            let v = (gaussian(points[i], &b.bbox, s) / peak).min(1.0);
            let slot = &mut out[i * num_classes + b.class];
            *slot = slot.max(v);
        }
    }
    out
}

/// Regression targets for valid pixels inside a box. A pixel inside several
/// boxes follows the one with the higher Gaussian score, the lower index on
/// ties.
pub fn make_reg_targets(
    points: &[CartesianVec3],
    mask: &[bool],
    boxes: &[TargetBox],
    sigma: &[f64],
    frame: RegressionFrame,
) -> (Vec<f64>, Vec<bool>) {
    let n = points.len();
    let mut reg = vec![0.0; n * 8];
    let mut valid = vec![false; n];
    for i in (0..n).filter(|&i| mask[i]) {
        let p = points[i];
        let mut best: Option<(f64, &Box7DoF)> = None;
        for b in boxes.iter().filter(|b| b.bbox.contains(p)) {
            let s = gaussian(p, &b.bbox, sigma[b.class]);
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, &b.bbox));
            }
        }
        if let Some((_, b)) = best {
            let (d, yaw) = frame.encode(p, b.center - p, b.yaw);
            let (sin, cos) = yaw.sin_cos();
            reg[i * 8..i * 8 + 8].copy_from_slice(&[d.x, d.y, d.z, b.length, b.width, b.height, sin, cos]);
            valid[i] = true;
        }
    }
    (reg, valid)
}

pub fn make_targets(
    points: &[CartesianVec3],
    mask: &[bool],
    boxes: &[TargetBox],
    sigma: &[f64],
    num_classes: usize,
    frame: RegressionFrame,
) -> TargetMap {
    let cls = make_cls_targets(points, mask, boxes, sigma, num_classes);
    let (reg, reg_valid) = make_reg_targets(points, mask, boxes, sigma, frame);
    TargetMap {
        num_classes,
        cls,
        reg,
        reg_valid,
    }
}
