//! U-shaped backbones built from feature-extractor (FE) and feature-aggregator
//! (FA) blocks whose layers may use any aggregation kernel.
//!
//! FE blocks optionally down-sample at entry and then run residual pairs of
//! kernel layers; a 1x1 projection bridges width changes on the shortcut. FA
//! blocks scatter a lower-resolution map back through the recorded samplings,
//! aggregate it with one kernel layer, concatenate the skip source and run
//! their own residual layers.

mod cost;
mod network;
mod spec;

pub use cost::{BlockCost, CostReport};
pub use network::{default_buckets, BackboneOutput, FramePlan, Network};
pub use spec::{BlockKind, BlockSpec, NetworkSpec, INPUT};

#[cfg(test)]
mod tests;
