use super::model::{HeadOutput, REG_DIM};
use super::targets::RegressionFrame;
use crate::error::{Error, Result};
use crate::geometry::{spherical_to_cartesian, Box7DoF, CartesianVec3};
use crate::labels::Detection;
use crate::metrics::iou_bev;

/// Smallest box extent a decoded box may have.
pub const MIN_EXTENT: f64 = 1e-3;

/// Box encoded by a regression row at a pixel's 3D position.
pub fn decode_box(point: CartesianVec3, reg: &[f64], frame: RegressionFrame) -> Box7DoF {
    let (d, yaw) = frame.decode(point, CartesianVec3::new(reg[0], reg[1], reg[2]), reg[6].atan2(reg[7]));
    let center = point + d;
    let ext = |v: f64| if v.is_finite() { v.max(MIN_EXTENT) } else { MIN_EXTENT };
    Box7DoF::new(center, ext(reg[3]), ext(reg[4]), ext(reg[5]), if yaw.is_finite() { yaw } else { 0.0 })
        .expect("extents clamped positive")
}

/// One detection per valid pixel and class whose probability reaches
/// `threshold`.
pub fn decode(out: &HeadOutput, classes: &[String], threshold: f64, frame: RegressionFrame) -> Result<Vec<Detection>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("score threshold must lie in (0, 1), got {threshold}")));
    }
    let k = classes.len() + 1;
    let geo = &out.geometry;
    let n = geo.height * geo.width;
    if out.logits.len() != n * k || out.reg.len() != n * REG_DIM {
        return Err(Error::shape("decode", &[geo.height, geo.width, k], out.logits.shape()));
    }
    let probs = out.probabilities();
    let mut dets = Vec::new();
    for i in (0..n).filter(|&i| geo.mask[i]) {
        let row = &probs.data()[i * k..(i + 1) * k];
        for (c, name) in classes.iter().enumerate() {
            let score = row[c + 1];
            if score >= threshold {
                let point = spherical_to_cartesian(geo.coords[i]);
                dets.push(Detection {
                    class: name.clone(),
                    bbox: decode_box(point, &out.reg.data()[i * REG_DIM..(i + 1) * REG_DIM], frame),
                    score,
                });
            }
        }
    }
    Ok(dets)
}

/// Greedy suppression by descending score: a detection is dropped when its
/// top-down IoU with an already kept detection of the same class exceeds
/// `threshold`.
pub fn nms_bev(mut dets: Vec<Detection>, threshold: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.iter().all(|k| k.class != d.class || iou_bev(&k.bbox, &d.bbox) <= threshold) {
            kept.push(d);
        }
    }
    kept
}
