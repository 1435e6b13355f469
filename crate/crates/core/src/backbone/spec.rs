use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Encoding;
use crate::kernels::{KernelKind, KernelOptions, Neighborhood};
use crate::rangeimage::SamplingMode;

/// Name under which blocks refer to the network input.
pub const INPUT: &str = "input";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// Feature extractor: optional entry down-sampling, then residual layers.
    Fe,
    /// Feature aggregator: up-samples a lower-resolution source, merges a
    /// higher-resolution skip, then residual layers.
    Fa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub name: String,
    pub kind: BlockKind,
    /// Source block, or `"input"`. For an FA block the lower-resolution source.
    pub input: String,
    /// FA only: the higher-resolution source merged after up-sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<String>,
    /// Entry stride `[rows, cols]` of an FE block.
    #[serde(default = "unit_stride")]
    pub stride: [usize; 2],
    /// Channel width before the depth multiplier.
    pub channels: usize,
    /// Number of kernel layers after the entry (FE) or merge (FA).
    pub layers: usize,
    /// Overrides the network-wide kernel for this block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelKind>,
}

fn unit_stride() -> [usize; 2] {
    [1, 1]
}

fn default_input_scale() -> Vec<f64> {
    vec![0.05, 1.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-pixel channels of the range image (range, intensity, elongation).
    pub input_channels: usize,
    /// Per-pixel scale applied to the image channels before the first layer.
    #[serde(default = "default_input_scale")]
    pub input_scale: Vec<f64>,
    /// Width of externally supplied per-pixel features concatenated to the
    /// input; zero disables the hook.
    #[serde(default)]
    pub external_channels: usize,
    pub multiplier: f64,
    pub kernel: KernelKind,
    #[serde(default)]
    pub kernel_options: KernelOptions,
    #[serde(default)]
    pub encoding: Encoding,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub neighborhood: Neighborhood,
    /// Block whose output feeds the detector head.
    pub output: String,
    pub blocks: Vec<BlockSpec>,
}

fn fe(name: &str, input: &str, stride: [usize; 2], channels: usize, layers: usize) -> BlockSpec {
    BlockSpec {
        name: name.into(),
        kind: BlockKind::Fe,
        input: input.into(),
        skip: None,
        stride,
        channels,
        layers,
        kernel: None,
    }
}

fn fa(name: &str, low: &str, skip: &str, channels: usize) -> BlockSpec {
    BlockSpec {
        name: name.into(),
        kind: BlockKind::Fa,
        input: low.into(),
        skip: Some(skip.into()),
        stride: [1, 1],
        channels,
        layers: 4,
        kernel: None,
    }
}

impl NetworkSpec {
    /// 4 FE + 1 FA blocks, predicting at half the input resolution.
    pub fn pedestrian(kernel: KernelKind, multiplier: f64) -> Self {
        Self {
            name: "pedestrian".into(),
            input_channels: 3,
            input_scale: default_input_scale(),
            external_channels: 0,
            multiplier,
            kernel,
            kernel_options: KernelOptions::default(),
            encoding: Encoding::Polar,
            sampling: SamplingMode::Smart,
            neighborhood: Neighborhood::default(),
            output: "fe4".into(),
            blocks: vec![
                fe("fe1", INPUT, [2, 2], 32, 10),
                fe("fe2", "fe1", [2, 2], 64, 10),
                fe("fe3", "fe2", [1, 1], 128, 10),
                fa("fa1", "fe3", "fe1", 64),
                fe("fe4", "fa1", [1, 1], 128, 10),
            ],
        }
    }

    /// 8 FE + 5 FA blocks. The extra extractors shrink only the width, since
    /// vehicles span many columns, and carry 4 layers each.
    pub fn vehicle(kernel: KernelKind, multiplier: f64) -> Self {
        let mut s = Self::pedestrian(kernel, multiplier);
        s.name = "vehicle".into();
        s.output = "fe8".into();
        s.blocks = vec![
            fe("fe1", INPUT, [2, 2], 32, 10),
            fe("fe2", "fe1", [2, 2], 64, 10),
            fe("fe3", "fe2", [1, 2], 64, 4),
            fe("fe4", "fe3", [1, 2], 128, 4),
            fe("fe5", "fe4", [1, 2], 128, 4),
            fe("fe6", "fe5", [1, 2], 128, 4),
            fa("fa1", "fe6", "fe5", 128),
            fa("fa2", "fa1", "fe4", 128),
            fa("fa3", "fa2", "fe3", 64),
            fa("fa4", "fa3", "fe2", 64),
            fa("fa5", "fa4", "fe1", 64),
            fe("fe7", "fa5", [1, 1], 128, 10),
            fe("fe8", "fe7", [1, 1], 128, 10),
        ];
        s
    }

    /// Uses `kernel` for the named blocks and the network default elsewhere.
    pub fn with_block_kernel(mut self, block: &str, kernel: KernelKind) -> Result<Self> {
        let b = self
            .blocks
            .iter_mut()
            .find(|b| b.name == block)
            .ok_or_else(|| Error::Config(format!("no block named {block:?}")))?;
        b.kernel = Some(kernel);
        Ok(self)
    }

    pub fn block_kernel(&self, b: &BlockSpec) -> KernelKind {
        b.kernel.unwrap_or(self.kernel)
    }

    /// Channel width after the depth multiplier: rounded up, at least 1.
    pub fn width(&self, channels: usize) -> usize {
        ((channels as f64 * self.multiplier).ceil() as usize).max(1)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("network spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("network spec serializes")
    }
}
