use serde::Serialize;

use super::ap::{evaluate, EvalConfig, EvalReport, IouMode, Score};
use crate::labels::{Detection, Label};

/// 3D and BEV sections side by side.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FullReport {
    pub sections: Vec<EvalReport>,
}

pub fn full_report(dets: &[Vec<Detection>], gts: &[Vec<Label>], cfg: &EvalConfig) -> FullReport {
    let sections = [IouMode::ThreeD, IouMode::Bev]
        .into_iter()
        .map(|mode| evaluate(dets, gts, &EvalConfig { mode, ..cfg.clone() }))
        .collect();
    FullReport { sections }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl FullReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per geometry, class, bucket and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("geometry,class,bucket,metric,value,num_gt,num_det\n");
        for s in &self.sections {
            for c in &s.classes {
                let rows = std::iter::once(("all", &c.overall)).chain(c.buckets.iter().map(|(n, sc)| (n.as_str(), sc)));
                for (bucket, sc) in rows {
                    let Score { ap, aph, num_gt, num_det } = sc;
                    for (metric, v) in [("ap", ap), ("aph", aph)] {
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{}\n",
                            s.mode.name(),
                            c.class,
                            bucket,
                            metric,
                            cell(*v),
                            num_gt,
                            num_det
                        ));
                    }
                }
            }
        }
        out
    }

    /// Overall AP of a class in one geometry mode.
    pub fn ap(&self, mode: IouMode, class: &str) -> Option<f64> {
        self.find(mode, class).and_then(|s| s.ap)
    }

    pub fn aph(&self, mode: IouMode, class: &str) -> Option<f64> {
        self.find(mode, class).and_then(|s| s.aph)
    }

    fn find(&self, mode: IouMode, class: &str) -> Option<&Score> {
        self.sections
            .iter()
            .find(|s| s.mode == mode)?
            .classes
            .iter()
            .find(|c| c.class == class)
            .map(|c| &c.overall)
    }
}
