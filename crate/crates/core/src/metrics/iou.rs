use crate::geometry::{box_corners_bev, Box7DoF};

type Pt = [f64; 2];

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon (positive when counter-clockwise).
pub fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
        * 0.5
}

/// Intersection of two convex counter-clockwise polygons (Sutherland-Hodgman,
/// clipping `subject` by each edge of `clip`).
pub fn clip_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (cross(a, b, p), cross(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Top-down overlap area of two boxes.
pub fn bev_intersection(a: &Box7DoF, b: &Box7DoF) -> f64 {
    let poly = clip_convex(&box_corners_bev(a), &box_corners_bev(b));
    if poly.len() < 3 {
        0.0
    } else {
        polygon_area(&poly).max(0.0)
    }
}

fn ratio(inter: f64, union: f64) -> f64 {
    if union <= 0.0 || !union.is_finite() {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of the rotated top-down footprints.
pub fn iou_bev(a: &Box7DoF, b: &Box7DoF) -> f64 {
    let inter = bev_intersection(a, b);
    ratio(inter, a.bev_area() + b.bev_area() - inter)
}

/// IoU of the yaw-rotated 3D boxes.
pub fn iou_3d(a: &Box7DoF, b: &Box7DoF) -> f64 {
    let dz = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
    let inter = bev_intersection(a, b) * dz;
    ratio(inter, a.volume() + b.volume() - inter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CartesianVec3;
    use std::f64::consts::FRAC_PI_4;

    fn bx(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> Box7DoF {
        Box7DoF::new(CartesianVec3::new(x, y, z), l, w, h, yaw).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = bx(1.0, 2.0, 0.0, 2.0, 1.0, 1.5, 0.3);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let b = bx(10.0, 2.0, 0.0, 2.0, 1.0, 1.5, 0.3);
        assert_eq!(iou_bev(&a, &b), 0.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn half_offset_unit_squares() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let c = bx(0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 0.0);
        assert!((iou_3d(&a, &c) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_inside_larger_square() {
        // a unit square rotated by 45 degrees fits inside a 2x2 square
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, FRAC_PI_4);
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        assert!((iou_bev(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn symmetric() {
        let a = bx(0.2, -0.1, 0.1, 2.0, 1.0, 1.5, 0.7);
        let b = bx(0.6, 0.3, -0.2, 1.7, 1.2, 1.1, -0.4);
        assert!((iou_bev(&a, &b) - iou_bev(&b, &a)).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - iou_3d(&b, &a)).abs() < 1e-12);
    }
}
