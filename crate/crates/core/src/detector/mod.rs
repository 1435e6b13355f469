//! Center-heatmap detection head: dense targets, losses, decoding and
//! duplicate suppression.
//!
//! The classifier emits `C + 1` logits per pixel with the background in column
//! 0; class probabilities come from a softmax over them. One regression branch
//! of 8 values is shared by all classes. Center offsets and headings are
//! regressed relative to each pixel's azimuth by default (see
//! [`RegressionFrame`]).

mod decode;
mod loss;
mod model;
mod targets;

pub use decode::{decode, decode_box, nms_bev, MIN_EXTENT};
pub use loss::{softmax_rows, FocalParams, LOG_EPS};
pub use model::{ClassSpec, DetectorConfig, HeadOutput, LossVars, Model, PreparedFrame, REG_DIM};
pub use targets::{make_cls_targets, make_reg_targets, make_targets, RegressionFrame, TargetBox, TargetMap};

#[cfg(test)]
mod tests;
