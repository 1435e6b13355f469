use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{cartesian_to_spherical, Box7DoF, CartesianVec3, Encoding};
use crate::kernels::{LevelGeometry, Neighborhood};
use crate::labels::Detection;
use crate::tensorcore::gradcheck::max_rel_err;
use crate::tensorcore::{Tape, Tensor};

fn cube(x: f64, y: f64, z: f64, s: f64, yaw: f64) -> Box7DoF {
    Box7DoF::new(CartesianVec3::new(x, y, z), s, s, s, yaw).unwrap()
}

fn tb(class: usize, bbox: Box7DoF) -> TargetBox {
    TargetBox { class, bbox }
}

#[test]
fn pixel_at_center_scores_one() {
    let b = cube(5.0, 0.0, 0.0, 1.0, 0.0);
    let pts = [CartesianVec3::new(5.0, 0.0, 0.0), CartesianVec3::new(5.3, 0.0, 0.0), CartesianVec3::new(9.0, 0.0, 0.0)];
    let y = make_cls_targets(&pts, &[true; 3], &[tb(0, b)], &[0.25], 1);
    assert_eq!(y[0], 1.0);
    assert!((y[1] - (-0.09f64 / (2.0 * 0.0625)).exp()).abs() < 1e-15);
    assert!(y[2] < 1e-50);
}

#[test]
fn sparse_far_box_still_has_a_peak() {
    // the only point inside lies 1 m from the center of a large box
    let b = Box7DoF::new(CartesianVec3::new(40.0, 0.0, 0.0), 4.5, 2.0, 1.6, 0.0).unwrap();
    let pts = [CartesianVec3::new(39.0, 0.0, 0.0), CartesianVec3::new(38.0, 0.0, 0.0)];
    let y = make_cls_targets(&pts, &[true, true], &[tb(0, b)], &[0.5], 1);
    assert_eq!(y[0], 1.0);
    assert!(y[1] < 1.0 && y[1] > 0.0);
}

#[test]
fn invalid_pixels_and_empty_boxes() {
    let b = cube(5.0, 0.0, 0.0, 1.0, 0.0);
    let pts = [CartesianVec3::new(5.0, 0.0, 0.0), CartesianVec3::new(5.1, 0.0, 0.0)];
    let y = make_cls_targets(&pts, &[false, true], &[tb(0, b)], &[0.25], 1);
    assert_eq!(y, vec![0.0, 1.0]);
    let y = make_cls_targets(&pts, &[false, false], &[tb(0, b)], &[0.25], 1);
    assert_eq!(y, vec![0.0, 0.0]);
}

#[test]
fn classes_use_their_own_channel() {
    let pts = [CartesianVec3::new(5.0, 0.0, 0.0), CartesianVec3::new(-5.0, 0.0, 0.0)];
    let boxes = [tb(0, cube(5.0, 0.0, 0.0, 1.0, 0.0)), tb(1, cube(-5.0, 0.0, 0.0, 1.0, 0.0))];
    let y = make_cls_targets(&pts, &[true; 2], &boxes, &[0.25, 0.5], 2);
    assert_eq!((y[0], y[2], y[3]), (1.0, 0.0, 1.0));
    assert!(y[1] < 1e-80);
}

#[test]
fn regression_targets() {
    let pts = [CartesianVec3::new(0.0, 0.0, 0.0), CartesianVec3::new(3.0, 0.0, 0.0)];
    let (reg, valid) = make_reg_targets(&pts, &[true; 2], &[tb(0, cube(0.0, 0.0, 0.0, 1.0, 0.0))], &[0.25], RegressionFrame::Azimuth);
    assert_eq!(&reg[..8], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
    assert_eq!(valid, vec![true, false]);
    assert_eq!(&reg[8..], &[0.0; 8]);

    let (reg, _) = make_reg_targets(&pts[..1], &[true], &[tb(0, cube(0.0, 0.0, 0.0, 1.0, FRAC_PI_2))], &[0.25], RegressionFrame::Azimuth);
    assert!((reg[6] - 1.0).abs() < 1e-15 && reg[7].abs() < 1e-15);
}

#[test]
fn overlaps_follow_higher_score_then_lower_index() {
    let p = [CartesianVec3::new(0.1, 0.0, 0.0)];
    let near = cube(0.0, 0.0, 0.0, 2.0, 0.0);
    let far = cube(0.5, 0.0, 0.0, 2.0, 0.0);
    let (reg, _) = make_reg_targets(&p, &[true], &[tb(0, far), tb(0, near)], &[0.25], RegressionFrame::Azimuth);
    assert!((reg[0] + 0.1).abs() < 1e-15);
    // mirrored centers give equal scores; the first box wins
    let a = cube(0.0, 0.0, 0.0, 2.0, 0.0);
    let b = cube(0.2, 0.0, 0.0, 2.0, 0.3);
    let (reg, _) = make_reg_targets(&p, &[true], &[tb(0, a), tb(0, b)], &[0.25], RegressionFrame::Azimuth);
    assert_eq!(reg[7], 1.0);
    let (reg, _) = make_reg_targets(&p, &[true], &[tb(0, b), tb(0, a)], &[0.25], RegressionFrame::Azimuth);
    assert!((reg[7] - 0.3f64.cos()).abs() < 1e-15);
}

/// Focal loss straight from its definition on two-class softmax rows.
fn focal_oracle(logits: &[f64], targets: &[f64], valid: &[bool]) -> f64 {
    let (mut sum, mut n) = (0.0, 0);
    for (i, &v) in valid.iter().enumerate() {
        if !v {
            continue;
        }
        n += 1;
        let p = 1.0 / (1.0 + (logits[2 * i] - logits[2 * i + 1]).exp());
        let y = targets[i];
        sum += if y == 1.0 {
            -(1.0 - p).powi(2) * p.ln()
        } else {
            -(1.0 - y).powi(4) * p.powi(2) * (1.0 - p).ln()
        };
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn focal_value(logits: &Tensor, targets: &[f64], valid: &[bool]) -> f64 {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let l = tape.focal_loss(x, targets, valid, FocalParams::default()).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn focal_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40;
    let logits = Tensor::from_fn(&[n, 2], |_| rng.random_range(-3.0..3.0));
    let targets: Vec<f64> = (0..n).map(|i| if i % 7 == 0 { 1.0 } else { rng.random_range(0.0..1.0) }).collect();
    let valid: Vec<bool> = (0..n).map(|i| i % 5 != 3).collect();
    let got = focal_value(&logits, &targets, &valid);
    assert!((got - focal_oracle(logits.data(), &targets, &valid)).abs() < 1e-12);
}

#[test]
fn focal_examples() {
    // y = 0.5, p = 0.5 on a single valid pixel
    let x = Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap();
    let want = -(0.5f64.powi(4) * 0.5f64.powi(2) * 0.5f64.ln());
    assert!((focal_value(&x, &[0.5], &[true]) - want).abs() < 1e-15);
    // confident and correct at a peak
    let x = Tensor::new(&[1, 2], vec![-30.0, 30.0]).unwrap();
    assert!(focal_value(&x, &[1.0], &[true]) < 1e-40);
    // far off still finite thanks to the log floor
    let x = Tensor::new(&[1, 2], vec![1e5, -1e5]).unwrap();
    let v = focal_value(&x, &[1.0], &[true]);
    assert!(v.is_finite() && (v - 1e-12f64.ln().abs()).abs() < 1e-6);
    assert_eq!(focal_value(&x, &[1.0], &[false]), 0.0);
}

#[test]
fn focal_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, k) = (24, 3);
    let logits = Tensor::from_fn(&[n, k], |_| rng.random_range(-2.0..2.0));
    let targets: Vec<f64> = (0..n * 2).map(|i| if i % 5 == 0 { 1.0 } else { rng.random_range(0.0..0.99) }).collect();
    let valid: Vec<bool> = (0..n).map(|i| i % 4 != 1).collect();
    let mut tape = Tape::new();
    let x = tape.param(logits.clone());
    let l = tape.focal_loss(x, &targets, &valid, FocalParams::default()).unwrap();
    let g = tape.backward(l).unwrap().get(x).unwrap().clone();
    let f = |t: &Tensor| {
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        let l = tape.focal_loss(x, &targets, &valid, FocalParams::default()).unwrap();
        tape.value(l).item().unwrap()
    };
    let all: Vec<usize> = (0..n * k).collect();
    assert!(max_rel_err(f, &logits, &g, &all, 1e-5) < 1e-4);
}

fn l1_value(pred: &Tensor, target: &[f64], valid: &[bool]) -> f64 {
    let mut tape = Tape::new();
    let x = tape.constant(pred.clone());
    let l = tape.l1_loss(x, target, valid).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn l1_examples() {
    let t = vec![0.5; 16];
    let mut p = Tensor::new(&[2, 8], t.clone()).unwrap();
    assert_eq!(l1_value(&p, &t, &[true, true]), 0.0);
    p.data_mut()[3] += 1.0;
    assert!((l1_value(&p, &t, &[true, false]) - 0.125).abs() < 1e-15);
    // invalid rows do not count
    p.data_mut()[12] = 1e6;
    assert!((l1_value(&p, &t, &[true, false]) - 0.125).abs() < 1e-15);
    assert_eq!(l1_value(&p, &t, &[false, false]), 0.0);
}

#[test]
fn l1_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred = Tensor::from_fn(&[6, 8], |_| rng.random_range(-1.0..1.0));
    let target: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
    let valid = [true, false, true, true, false, true];
    let mut tape = Tape::new();
    let x = tape.param(pred.clone());
    let l = tape.l1_loss(x, &target, &valid).unwrap();
    let g = tape.backward(l).unwrap().get(x).unwrap().clone();
    let f = |t: &Tensor| l1_value(t, &target, &valid);
    let all: Vec<usize> = (0..48).collect();
    assert!(max_rel_err(f, &pred, &g, &all, 1e-6) < 1e-4);
}

/// Output grid holding the given points, padded with invalid pixels.
fn grid(points: &[CartesianVec3], h: usize, w: usize) -> Arc<LevelGeometry> {
    let mut coords = vec![Default::default(); h * w];
    let mut mask = vec![false; h * w];
    for (i, p) in points.iter().enumerate() {
        coords[i] = cartesian_to_spherical(*p);
        mask[i] = true;
    }
    Arc::new(LevelGeometry::new(coords, mask, h, w, Neighborhood::default(), Encoding::Polar).unwrap())
}

fn classes() -> Vec<String> {
    vec!["pedestrian".into()]
}

#[test]
fn encode_decode_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let boxes: Vec<Box7DoF> = (0..5)
        .map(|i| {
            let c = CartesianVec3::new(8.0 + 6.0 * i as f64, rng.random_range(-10.0..10.0), rng.random_range(-1.0..1.0));
            Box7DoF::new(c, 0.9, 0.7, 1.8, rng.random_range(-PI..PI)).unwrap()
        })
        .collect();
    let mut pts = Vec::new();
    for b in &boxes {
        for _ in 0..6 {
            let (s, c) = b.yaw.sin_cos();
            let (u, v, z) = (rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3), rng.random_range(-0.8..0.8));
            pts.push(b.center + CartesianVec3::new(c * u - s * v, s * u + c * v, z));
        }
    }
    let geo = grid(&pts, 4, 10);
    let tbs: Vec<TargetBox> = boxes.iter().map(|&b| tb(0, b)).collect();
    let points: Vec<_> = geo.coords.iter().map(|&c| crate::geometry::spherical_to_cartesian(c)).collect();
    let t = make_targets(&points, &geo.mask, &tbs, &[0.25], 1, RegressionFrame::Azimuth);
    for b in &tbs {
        let inside: Vec<usize> = (0..40).filter(|&i| geo.mask[i] && b.bbox.contains(points[i])).collect();
        assert!(inside.iter().any(|&i| t.cls[i] == 1.0));
    }
    let logits: Vec<f64> = (0..40).flat_map(|i| if t.cls[i] == 1.0 { [0.0, 20.0] } else { [0.0, -20.0] }).collect();
    let out = HeadOutput {
        logits: Tensor::new(&[4, 10, 2], logits).unwrap(),
        reg: Tensor::new(&[4, 10, 8], t.reg.clone()).unwrap(),
        geometry: geo,
    };
    let dets = decode(&out, &classes(), 0.1, RegressionFrame::Azimuth).unwrap();
    assert_eq!(dets.len(), 5);
    for b in &boxes {
        let d = dets.iter().find(|d| (d.bbox.center - b.center).norm() <= 1e-9).expect("box reconstructed");
        assert!((d.bbox.length - b.length).abs() < 1e-12);
        assert!(crate::geometry::wrap_angle(d.bbox.yaw - b.yaw).abs() < 1e-12);
        assert!(d.bbox.yaw > -PI && d.bbox.yaw <= PI);
    }
}

#[test]
fn low_logits_decode_to_nothing() {
    let geo = grid(&[CartesianVec3::new(5.0, 0.0, 0.0)], 2, 2);
    let out = HeadOutput {
        logits: Tensor::from_fn(&[2, 2, 2], |i| if i % 2 == 0 { 0.0 } else { -5.0 }),
        reg: Tensor::zeros(&[2, 2, 8]),
        geometry: geo,
    };
    assert!(decode(&out, &classes(), 0.1, RegressionFrame::Azimuth).unwrap().is_empty());
    assert!(decode(&out, &classes(), 1.0, RegressionFrame::Azimuth).is_err());
    // an empty scene with every pixel invalid
    let geo = grid(&[], 2, 2);
    let out = HeadOutput {
        logits: Tensor::from_fn(&[2, 2, 2], |i| if i % 2 == 0 { 0.0 } else { 5.0 }),
        reg: Tensor::zeros(&[2, 2, 8]),
        geometry: geo,
    };
    assert!(decode(&out, &classes(), 0.1, RegressionFrame::Azimuth).unwrap().is_empty());
}

#[test]
fn decode_box_yaw_and_extents() {
    let b = decode_box(CartesianVec3::new(1.0, 2.0, 3.0), &[0.5, 0.0, -1.0, 1.0, -2.0, 1.0, 0.0, -1.0], RegressionFrame::World);
    assert_eq!(b.center, CartesianVec3::new(1.5, 2.0, 2.0));
    assert_eq!(b.width, MIN_EXTENT);
    assert_eq!(b.yaw, PI);
}

fn det(x: f64, score: f64) -> Detection {
    Detection {
        class: "pedestrian".into(),
        bbox: Box7DoF::new(CartesianVec3::new(x, 0.0, 0.0), 2.0, 1.0, 1.0, 0.0).unwrap(),
        score,
    }
}

#[test]
fn nms_cases() {
    assert_eq!(nms_bev(vec![det(0.0, 0.5), det(0.0, 0.9)], 0.5), vec![det(0.0, 0.9)]);
    assert_eq!(nms_bev(vec![det(0.0, 0.5), det(5.0, 0.9)], 0.5).len(), 2);
    // IoU(0, 0.5) = IoU(0.5, 1.0) = 0.6 while IoU(0, 1.0) = 1/3: the middle box
    // goes first and removes both neighbours
    let kept = nms_bev(vec![det(0.0, 0.8), det(0.5, 0.9), det(1.0, 0.7)], 0.5);
    assert_eq!(kept, vec![det(0.5, 0.9)]);
    // with the left box first, it suppresses the middle and the right survives
    let kept = nms_bev(vec![det(0.0, 0.9), det(0.5, 0.8), det(1.0, 0.7)], 0.5);
    assert_eq!(kept, vec![det(0.0, 0.9), det(1.0, 0.7)]);
    let mut other = det(0.0, 0.4);
    other.class = "vehicle".into();
    assert_eq!(nms_bev(vec![det(0.0, 0.9), other], 0.5).len(), 2);
}

#[test]
fn config_validation() {
    assert!(DetectorConfig::default().validate().is_ok());
    let mut c = DetectorConfig::default();
    c.score_threshold = 0.0;
    assert!(c.validate().is_err());
    let mut c = DetectorConfig::default();
    c.classes[0].sigma = -1.0;
    assert!(c.validate().is_err());
}

#[test]
fn azimuth_frame_is_rotation_invariant() {
    let b = Box7DoF::new(CartesianVec3::new(8.0, 1.0, -0.5), 0.9, 0.7, 1.8, 0.4).unwrap();
    let p = CartesianVec3::new(7.7, 0.9, -0.2);
    let spin = |v: CartesianVec3, a: f64| {
        let (s, c) = a.sin_cos();
        CartesianVec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    };
    let (reg, _) = make_reg_targets(&[p], &[true], &[tb(0, b)], &[0.25], RegressionFrame::Azimuth);
    for a in [0.7, 2.5, -2.0] {
        let rb = Box7DoF::new(spin(b.center, a), b.length, b.width, b.height, b.yaw + a).unwrap();
        let (r2, _) = make_reg_targets(&[spin(p, a)], &[true], &[tb(0, rb)], &[0.25], RegressionFrame::Azimuth);
        for (x, y) in reg.iter().zip(&r2) {
            assert!((x - y).abs() < 1e-12);
        }
        let back = decode_box(spin(p, a), &r2, RegressionFrame::Azimuth);
        assert!((back.center - rb.center).norm() < 1e-12);
        assert!(crate::geometry::wrap_angle(back.yaw - rb.yaw).abs() < 1e-12);
    }
    // the world frame keeps raw offsets
    let (w, _) = make_reg_targets(&[p], &[true], &[tb(0, b)], &[0.25], RegressionFrame::World);
    assert!((w[0] - 0.3).abs() < 1e-12 && (w[6] - 0.4f64.sin()).abs() < 1e-12);
}
