use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{softmax_rows, FocalParams};
use super::targets::{make_targets, RegressionFrame, TargetBox, TargetMap};
use super::{decode, nms_bev};
use crate::backbone::{FramePlan, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::geometry::spherical_to_cartesian;
use crate::kernels::LevelGeometry;
use crate::labels::{Detection, Label};
use crate::rangeimage::RangeImage;
use crate::tensorcore::{Tape, Tensor, Var};

/// Size of the regression vector: center offset, size, sin and cos of yaw.
pub const REG_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// Width of the heatmap Gaussian in meters.
    pub sigma: f64,
    /// Typical length, width and height; seeds the regression bias.
    pub size: [f64; 3],
}

impl ClassSpec {
    pub fn pedestrian() -> Self {
        Self {
            name: "pedestrian".into(),
            sigma: 0.25,
            size: [0.9, 0.9, 1.8],
        }
    }

    pub fn vehicle() -> Self {
        Self {
            name: "vehicle".into(),
            sigma: 0.5,
            size: [4.5, 2.0, 1.6],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub classes: Vec<ClassSpec>,
    pub focal_alpha: f64,
    pub focal_beta: f64,
    pub reg_weight: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Initial foreground probability of the classifier.
    pub prior: f64,
    pub regression_frame: RegressionFrame,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            classes: vec![ClassSpec::pedestrian()],
            focal_alpha: 2.0,
            focal_beta: 4.0,
            reg_weight: 0.1,
            score_threshold: 0.1,
            nms_iou: 0.5,
            prior: 0.1,
            regression_frame: RegressionFrame::Azimuth,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes.is_empty() {
            return bad("at least one class is required".into());
        }
        for c in &self.classes {
            if !(c.sigma > 0.0) || c.size.iter().any(|&s| !(s > 0.0)) {
                return bad(format!("class {}: sigma and sizes must be positive", c.name));
            }
        }
        for (name, v) in [("score_threshold", self.score_threshold), ("nms_iou", self.nms_iou), ("prior", self.prior)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.focal_alpha >= 0.0 && self.focal_beta >= 0.0 && self.reg_weight >= 0.0) {
            return bad("focal exponents and reg_weight must be non-negative".into());
        }
        Ok(())
    }

    pub fn focal(&self) -> FocalParams {
        FocalParams {
            alpha: self.focal_alpha,
            beta: self.focal_beta,
        }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.sigma).collect()
    }
}

/// Dense head predictions on the output grid.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// `[H, W, C + 1]`, background first.
    pub logits: Tensor,
    /// `[H, W, 8]`.
    pub reg: Tensor,
    pub geometry: Arc<LevelGeometry>,
}

impl HeadOutput {
    /// `[H * W, C + 1]` class probabilities.
    pub fn probabilities(&self) -> Tensor {
        let s = self.logits.shape();
        softmax_rows(&self.logits.reshape(&[s[0] * s[1], s[2]]).expect("same size"))
    }
}

/// Everything a training step needs for one frame, computed once.
#[derive(Clone, Debug)]
pub struct PreparedFrame {
    pub plan: FramePlan,
    pub input: Tensor,
    pub targets: TargetMap,
}

/// Scalar loss handles recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub cls: Var,
    pub reg: Var,
}

/// Backbone plus a 1x1 classification head (`C + 1` logits) and a shared 1x1
/// regression head.
#[derive(Clone, Debug)]
pub struct Model {
    pub network: Network,
    pub head: Vec<(String, Tensor)>,
    pub config: DetectorConfig,
}

impl Model {
    pub fn build<R: Rng + ?Sized>(spec: &NetworkSpec, config: DetectorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let network = Network::build(spec, rng)?;
        let d = network.output_channels();
        let k = config.classes.len() + 1;
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        let mut draw = |n: usize| (0..n).map(|_| normal.sample(rng)).collect::<Vec<_>>();
        let fg = (config.prior / (1.0 - config.prior)).ln();
        let mut cls_b = vec![fg; k];
        cls_b[0] = 0.0;
        let n = config.classes.len() as f64;
        let mut size = [0.0; 3];
        for c in &config.classes {
            for (s, v) in size.iter_mut().zip(c.size) {
                *s += v / n;
            }
        }
        let reg_b = vec![0.0, 0.0, 0.0, size[0], size[1], size[2], 0.0, 1.0];
        let head = vec![
            ("head.cls.w".to_string(), Tensor::new(&[d, k], draw(d * k))?),
            ("head.cls.b".to_string(), Tensor::new(&[k], cls_b)?),
            ("head.reg.w".to_string(), Tensor::new(&[d, REG_DIM], draw(d * REG_DIM))?),
            ("head.reg.b".to_string(), Tensor::new(&[REG_DIM], reg_b)?),
        ];
        Ok(Self { network, head, config })
    }

    pub fn num_classes(&self) -> usize {
        self.config.classes.len()
    }

    /// Backbone parameters followed by the head.
    pub fn named_params(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.network.params().iter().chain(&self.head)
    }

    pub fn named_params_mut(&mut self) -> impl Iterator<Item = &mut (String, Tensor)> {
        self.network.params_mut().iter_mut().chain(&mut self.head)
    }

    pub fn param_count(&self) -> usize {
        self.named_params().map(|(_, t)| t.len()).sum()
    }

    /// Records the head on `tape`; `vars` follow [`Model::named_params`].
    /// Returns `[P, C + 1]` logits and `[P, 8]` regression rows.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], plan: &FramePlan, input: Var) -> Result<(Var, Var)> {
        let nb = self.network.params().len();
        if vars.len() != nb + self.head.len() {
            return Err(Error::Contract(format!("expected {} parameter vars, got {}", nb + self.head.len(), vars.len())));
        }
        let feat = self.network.forward_tape(tape, &vars[..nb], plan, input)?;
        let s = tape.value(feat).shape().to_vec();
        let flat = tape.reshape(feat, &[s[0] * s[1], s[2]])?;
        let h = &vars[nb..];
        let logits = tape.matmul(flat, h[0])?;
        let logits = tape.add_bias(logits, h[1])?;
        let reg = tape.matmul(flat, h[2])?;
        let reg = tape.add_bias(reg, h[3])?;
        Ok((logits, reg))
    }

    /// Input tensor, geometry pyramid and targets on the output grid.
    pub fn prepare(&self, img: &RangeImage, labels: &[Label]) -> Result<PreparedFrame> {
        let plan = self.network.plan(img)?;
        let input = self.network.input_tensor(img, None)?;
        let geo = &plan.levels[self.network.output_level()];
        let targets = self.targets_for(geo, labels)?;
        Ok(PreparedFrame { plan, input, targets })
    }

    /// Targets for labels of known classes; others are ignored.
    pub fn targets_for(&self, geo: &LevelGeometry, labels: &[Label]) -> Result<TargetMap> {
        let points: Vec<_> = geo.coords.iter().map(|&c| spherical_to_cartesian(c)).collect();
        let boxes: Vec<TargetBox> = labels
            .iter()
            .filter_map(|l| {
                self.config.class_index(&l.class).map(|class| TargetBox { class, bbox: l.bbox })
            })
            .collect();
        Ok(make_targets(
            &points,
            &geo.mask,
            &boxes,
            &self.config.sigmas(),
            self.num_classes(),
            self.config.regression_frame,
        ))
    }

    /// Classification, regression and weighted total loss of one frame.
    pub fn loss_tape(&self, tape: &mut Tape, vars: &[Var], frame: &PreparedFrame) -> Result<LossVars> {
        let input = tape.constant(frame.input.clone());
        let (logits, reg) = self.forward_tape(tape, vars, &frame.plan, input)?;
        let mask = &frame.plan.levels[self.network.output_level()].mask;
        let t = &frame.targets;
        let cls = tape.focal_loss(logits, &t.cls, mask, self.config.focal())?;
        let reg = tape.l1_loss(reg, &t.reg, &t.reg_valid)?;
        let weighted = tape.scale(reg, self.config.reg_weight);
        let total = tape.add(cls, weighted)?;
        Ok(LossVars { total, cls, reg })
    }

    pub fn predict(&self, img: &RangeImage) -> Result<HeadOutput> {
        let plan = self.network.plan(img)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.named_params().map(|(_, t)| tape.constant(t.clone())).collect();
        let input = tape.constant(self.network.input_tensor(img, None)?);
        let (logits, reg) = self.forward_tape(&mut tape, &vars, &plan, input)?;
        let geo = Arc::clone(&plan.levels[self.network.output_level()]);
        let (h, w) = (geo.height, geo.width);
        Ok(HeadOutput {
            logits: tape.value(logits).reshape(&[h, w, self.num_classes() + 1])?,
            reg: tape.value(reg).reshape(&[h, w, REG_DIM])?,
            geometry: geo,
        })
    }

    /// Decoded and suppressed detections at the configured thresholds.
    pub fn detect(&self, img: &RangeImage) -> Result<Vec<Detection>> {
        let out = self.predict(img)?;
        let names: Vec<String> = self.config.classes.iter().map(|c| c.name.clone()).collect();
        let dets = decode(&out, &names, self.config.score_threshold, self.config.regression_frame)?;
        Ok(nms_bev(dets, self.config.nms_iou))
    }
}
