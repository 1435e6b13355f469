//! Rotated-box overlap and AP/APH evaluation with distance buckets.

mod ap;
mod iou;
mod report;

pub use ap::{evaluate, heading_weight, interpolated_ap, pr_curves, ClassReport, EvalConfig, EvalReport, IouMode, PrCurve, Score};
pub use iou::{bev_intersection, clip_convex, iou_3d, iou_bev, polygon_area};
pub use report::{full_report, FullReport};
