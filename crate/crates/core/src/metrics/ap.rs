use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::iou::{iou_3d, iou_bev};
use crate::geometry::{wrap_angle, Box7DoF};
use crate::labels::{Detection, Label};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IouMode {
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "bev")]
    Bev,
}

impl IouMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::ThreeD => "3d",
            Self::Bev => "bev",
        }
    }

    pub fn iou(self, a: &Box7DoF, b: &Box7DoF) -> f64 {
        match self {
            Self::ThreeD => iou_3d(a, b),
            Self::Bev => iou_bev(a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// IoU needed for a match, per class name.
    pub iou_thresholds: BTreeMap<String, f64>,
    /// Used for classes missing from `iou_thresholds`.
    pub default_iou: f64,
    pub mode: IouMode,
    /// Interior edges (meters) of the distance buckets, ascending.
    pub bucket_edges: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: BTreeMap::from([("pedestrian".into(), 0.7), ("vehicle".into(), 0.5)]),
            default_iou: 0.5,
            mode: IouMode::ThreeD,
            bucket_edges: vec![30.0, 50.0],
        }
    }
}

impl EvalConfig {
    pub fn threshold(&self, class: &str) -> f64 {
        self.iou_thresholds.get(class).copied().unwrap_or(self.default_iou)
    }

    /// Bucket labels such as `<30`, `30-50`, `>50`.
    pub fn bucket_names(&self) -> Vec<String> {
        let e = &self.bucket_edges;
        if e.is_empty() {
            return vec!["all".into()];
        }
        let mut names = vec![format!("<{}", e[0])];
        names.extend(e.windows(2).map(|w| format!("{}-{}", w[0], w[1])));
        names.push(format!(">{}", e[e.len() - 1]));
        names
    }

    pub fn bucket_of(&self, b: &Box7DoF) -> usize {
        let r = b.center.norm();
        self.bucket_edges.partition_point(|&e| e <= r)
    }
}

/// Precision/recall samples in descending-score order and the interpolated
/// area under them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
}

/// 101-point interpolated average precision.
pub fn interpolated_ap(recall: &[f64], precision: &[f64]) -> f64 {
    // running max of precision from the right
    let mut best = vec![0.0; precision.len()];
    let mut m: f64 = 0.0;
    for i in (0..precision.len()).rev() {
        m = m.max(precision[i]);
        best[i] = m;
    }
    let mut sum = 0.0;
    for t in 0..=100 {
        let r = t as f64 / 100.0;
        let i = recall.partition_point(|&x| x < r - 1e-12);
        if i < best.len() {
            sum += best[i];
        }
    }
    sum / 101.0
}

/// Detection outcome: score, true-positive flag and heading weight.
#[derive(Clone, Copy, Debug)]
struct Scored {
    score: f64,
    tp: bool,
    heading: f64,
}

pub fn heading_weight(a: f64, b: f64) -> f64 {
    (1.0 - wrap_angle(a - b).abs() / std::f64::consts::PI).max(0.0)
}

/// Greedy matching within one frame: detections by descending score each take
/// the unmatched ground truth of highest IoU at or above `threshold`.
fn match_frame(dets: &[&Detection], gts: &[&Label], threshold: f64, mode: IouMode) -> Vec<Scored> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut used = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let d = dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let iou = mode.iou(&d.bbox, &g.bbox);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    used[j] = true;
                    Scored {
                        score: d.score,
                        tp: true,
                        heading: heading_weight(d.bbox.yaw, gts[j].bbox.yaw),
                    }
                }
                None => Scored {
                    score: d.score,
                    tp: false,
                    heading: 0.0,
                },
            }
        })
        .collect()
}

/// AP and APH over all frames, `None` when there is no ground truth.
fn ap_aph(mut scored: Vec<Scored>, num_gt: usize) -> Option<(PrCurve, PrCurve)> {
    if num_gt == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (mut tp, mut tph) = (0.0, 0.0);
    let mut r = Vec::with_capacity(scored.len());
    let mut p = Vec::with_capacity(scored.len());
    let mut rh = Vec::with_capacity(scored.len());
    let mut ph = Vec::with_capacity(scored.len());
    for (i, s) in scored.iter().enumerate() {
        if s.tp {
            tp += 1.0;
            tph += s.heading;
        }
        let n = (i + 1) as f64;
        r.push(tp / num_gt as f64);
        p.push(tp / n);
        rh.push(tph / num_gt as f64);
        ph.push(tph / n);
    }
    // heading-weighted recall can decrease nowhere, but keep the curve sorted
    let ap = interpolated_ap(&r, &p);
    let aph = interpolated_ap(&rh, &ph);
    Some((
        PrCurve { recall: r, precision: p, ap },
        PrCurve {
            recall: rh,
            precision: ph,
            ap: aph,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Score {
    pub ap: Option<f64>,
    pub aph: Option<f64>,
    pub num_gt: usize,
    pub num_det: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: String,
    pub iou_threshold: f64,
    pub overall: Score,
    /// Same order as [`EvalConfig::bucket_names`].
    pub buckets: Vec<(String, Score)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: IouMode,
    pub classes: Vec<ClassReport>,
}

fn score(dets: &[Vec<&Detection>], gts: &[Vec<&Label>], threshold: f64, mode: IouMode) -> Score {
    let num_gt = gts.iter().map(Vec::len).sum();
    let num_det = dets.iter().map(Vec::len).sum();
    let scored: Vec<Scored> = dets
        .iter()
        .zip(gts)
        .flat_map(|(d, g)| match_frame(d, g, threshold, mode))
        .collect();
    let res = ap_aph(scored, num_gt);
    Score {
        ap: res.as_ref().map(|r| r.0.ap),
        aph: res.as_ref().map(|r| r.1.ap),
        num_gt,
        num_det,
    }
}

/// Per-class AP/APH overall and per distance bucket. `dets[f]` and `gts[f]`
/// belong to frame `f`. Ground truth and detections are bucketed by their own
/// center range.
pub fn evaluate(dets: &[Vec<Detection>], gts: &[Vec<Label>], cfg: &EvalConfig) -> EvalReport {
    let mut classes: Vec<String> = gts.iter().flatten().map(|g| g.class.clone()).collect();
    classes.extend(dets.iter().flatten().map(|d| d.class.clone()));
    classes.sort();
    classes.dedup();
    let frames = dets.len().max(gts.len());
    let empty_d: Vec<Detection> = Vec::new();
    let empty_g: Vec<Label> = Vec::new();
    let frame_d = |f: usize| dets.get(f).unwrap_or(&empty_d);
    let frame_g = |f: usize| gts.get(f).unwrap_or(&empty_g);
    let names = cfg.bucket_names();
    let reports = classes
        .into_iter()
        .map(|class| {
            let thr = cfg.threshold(&class);
            let select_d = |bucket: Option<usize>| -> Vec<Vec<&Detection>> {
                (0..frames)
                    .map(|f| {
                        frame_d(f)
                            .iter()
                            .filter(|d| d.class == class && bucket.is_none_or(|b| cfg.bucket_of(&d.bbox) == b))
                            .collect()
                    })
                    .collect()
            };
            let select_g = |bucket: Option<usize>| -> Vec<Vec<&Label>> {
                (0..frames)
                    .map(|f| {
                        frame_g(f)
                            .iter()
                            .filter(|g| g.class == class && bucket.is_none_or(|b| cfg.bucket_of(&g.bbox) == b))
                            .collect()
                    })
                    .collect()
            };
            let overall = score(&select_d(None), &select_g(None), thr, cfg.mode);
            let buckets = names
                .iter()
                .enumerate()
                .map(|(b, name)| (name.clone(), score(&select_d(Some(b)), &select_g(Some(b)), thr, cfg.mode)))
                .collect();
            ClassReport {
                class,
                iou_threshold: thr,
                overall,
                buckets,
            }
        })
        .collect();
    EvalReport {
        mode: cfg.mode,
        classes: reports,
    }
}

/// PR curves of one class over all frames, AP then APH.
pub fn pr_curves(dets: &[Vec<Detection>], gts: &[Vec<Label>], class: &str, threshold: f64, mode: IouMode) -> Option<(PrCurve, PrCurve)> {
    let frames = dets.len().max(gts.len());
    let mut scored = Vec::new();
    let mut num_gt = 0;
    for f in 0..frames {
        let d: Vec<&Detection> = dets.get(f).into_iter().flatten().filter(|d| d.class == class).collect();
        let g: Vec<&Label> = gts.get(f).into_iter().flatten().filter(|g| g.class == class).collect();
        num_gt += g.len();
        scored.extend(match_frame(&d, &g, threshold, mode));
    }
    ap_aph(scored, num_gt)
}
