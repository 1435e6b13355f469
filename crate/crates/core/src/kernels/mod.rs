//! Point-set aggregation kernels. Each maps the features, coordinates and
//! validity of a pixel neighborhood to one output feature per pixel.
//!
//! Feature maps are `[H, W, D]` tensors. Parameter tensors, in order:
//!
//! | kernel          | tensors                                                   |
//! |-----------------|-----------------------------------------------------------|
//! | Conv2D          | `w [kh, kw, D, D']`                                       |
//! | RQ-Conv2D       | `w [K, kh, kw, D, D']`                                    |
//! | self-attention  | `wq [D, Dk]`, `wk [D, Dk]`, `wv [D, D']`, `wr [3, Dk]`    |
//! | PointNet        | `w1 [D + 3, Hd]`, `b1 [Hd]`, `w2 [Hd, D']`, `b2 [D']`     |
//! | EdgeConv        | `w1 [2D + 3, Hd]`, `b1 [Hd]`, `w2 [Hd, D']`, `b2 [D']`    |
//!
//! MLP input rows are ordered neighbor feature, center feature (EdgeConv only),
//! then the 3-wide pairwise encoding.

mod attention;
mod conv;
mod cost;
mod linalg;
mod mlp;
mod neighborhood;
mod op;

pub use attention::AttentionMode;
pub use conv::RqBuckets;
pub use cost::{kernel_flops, kernel_params, projection_flops};
pub use neighborhood::{LevelGeometry, Neighborhood};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Conv2d,
    #[serde(alias = "rq")]
    RqConv2d,
    #[serde(alias = "attention", alias = "sa")]
    SelfAttention,
    PointNet,
    EdgeConv,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        Self::Conv2d,
        Self::RqConv2d,
        Self::SelfAttention,
        Self::PointNet,
        Self::EdgeConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Conv2d => "conv2d",
            Self::RqConv2d => "rqconv2d",
            Self::SelfAttention => "selfattention",
            Self::PointNet => "pointnet",
            Self::EdgeConv => "edgeconv",
        }
    }

    /// Whether the kernel reads the pairwise encoding.
    pub fn uses_encoding(self) -> bool {
        matches!(self, Self::SelfAttention | Self::PointNet | Self::EdgeConv)
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "conv2d" | "conv" => Ok(Self::Conv2d),
            "rqconv2d" | "rq" => Ok(Self::RqConv2d),
            "selfattention" | "attention" | "sa" => Ok(Self::SelfAttention),
            "pointnet" | "pn" => Ok(Self::PointNet),
            "edgeconv" | "ec" => Ok(Self::EdgeConv),
            _ => Err(Error::Config(format!("unknown kernel {s:?}"))),
        }
    }
}

/// Knobs shared by every layer of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelOptions {
    /// Multiply Conv2D terms by the validity product as the other kernels do.
    pub conv_gated: bool,
    pub attention: AttentionMode,
    /// Number of range buckets of RQ-Conv2D.
    pub rq_buckets: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            conv_gated: false,
            attention: AttentionMode::Masked,
            rq_buckets: 4,
        }
    }
}

/// Non-trainable configuration of one kernel layer.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelConfig {
    Conv2d { gated: bool },
    RqConv2d { buckets: RqBuckets },
    SelfAttention { mode: AttentionMode },
    PointNet,
    EdgeConv,
}

impl KernelConfig {
    pub fn kind(&self) -> KernelKind {
        match self {
            Self::Conv2d { .. } => KernelKind::Conv2d,
            Self::RqConv2d { .. } => KernelKind::RqConv2d,
            Self::SelfAttention { .. } => KernelKind::SelfAttention,
            Self::PointNet => KernelKind::PointNet,
            Self::EdgeConv => KernelKind::EdgeConv,
        }
    }
}

/// Trainable weights of one kernel layer plus its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub config: KernelConfig,
    pub tensors: Vec<Tensor>,
}

impl KernelParams {
    pub fn conv2d(weight: Tensor, gated: bool) -> Result<Self> {
        Self::checked(KernelConfig::Conv2d { gated }, vec![weight])
    }

    pub fn rq_conv2d(weight: Tensor, buckets: RqBuckets) -> Result<Self> {
        Self::checked(KernelConfig::RqConv2d { buckets }, vec![weight])
    }

    pub fn self_attention(wq: Tensor, wk: Tensor, wv: Tensor, wr: Tensor, mode: AttentionMode) -> Result<Self> {
        Self::checked(KernelConfig::SelfAttention { mode }, vec![wq, wk, wv, wr])
    }

    pub fn pointnet(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        Self::checked(KernelConfig::PointNet, vec![w1, b1, w2, b2])
    }

    pub fn edgeconv(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        Self::checked(KernelConfig::EdgeConv, vec![w1, b1, w2, b2])
    }

    fn checked(config: KernelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let refs: Vec<&Tensor> = tensors.iter().collect();
        op::param_dims(&config, &refs)?;
        Ok(Self { config, tensors })
    }

    pub fn kind(&self) -> KernelKind {
        self.config.kind()
    }

    /// `(input channels, output channels)`.
    pub fn dims(&self) -> (usize, usize) {
        let refs: Vec<&Tensor> = self.tensors.iter().collect();
        let d = op::param_dims(&self.config, &refs).expect("validated at construction");
        (d.di, d.dout)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Tensor names in storage order.
    pub fn tensor_names(&self) -> &'static [&'static str] {
        match self.config {
            KernelConfig::Conv2d { .. } | KernelConfig::RqConv2d { .. } => &["w"],
            KernelConfig::SelfAttention { .. } => &["wq", "wk", "wv", "wr"],
            KernelConfig::PointNet | KernelConfig::EdgeConv => &["w1", "b1", "w2", "b2"],
        }
    }

    /// He-style random initialization. `gain` scales every weight; biases start
    /// at zero. RQ-Conv2D needs `buckets`, otherwise a single bucket is used.
    pub fn init<R: Rng + ?Sized>(
        kind: KernelKind,
        di: usize,
        dout: usize,
        nbhd: Neighborhood,
        opts: &KernelOptions,
        buckets: Option<RqBuckets>,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let k = nbhd.size();
        let mut normal = |shape: &[usize], fan_in: usize| {
            let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape, |_| dist.sample(rng))
        };
        let (config, tensors) = match kind {
            KernelKind::Conv2d => (
                KernelConfig::Conv2d { gated: opts.conv_gated },
                vec![normal(&[nbhd.kh, nbhd.kw, di, dout], k * di)],
            ),
            KernelKind::RqConv2d => {
                let buckets = buckets.unwrap_or_else(RqBuckets::single);
                let w = normal(&[buckets.len(), nbhd.kh, nbhd.kw, di, dout], k * di);
                (KernelConfig::RqConv2d { buckets }, vec![w])
            }
            KernelKind::SelfAttention => {
                let dk = dout;
                let wq = normal(&[di, dk], 2 * di);
                let wk = normal(&[di, dk], 2 * di);
                let wv = normal(&[di, dout], di);
                let wr = normal(&[3, dk], 6);
                (KernelConfig::SelfAttention { mode: opts.attention }, vec![wq, wk, wv, wr])
            }
            KernelKind::PointNet | KernelKind::EdgeConv => {
                let edge = kind == KernelKind::EdgeConv;
                let rows = if edge { 2 * di + 3 } else { di + 3 };
                let hd = dout;
                let tensors = vec![
                    normal(&[rows, hd], rows),
                    Tensor::zeros(&[hd]),
                    normal(&[hd, dout], hd),
                    Tensor::zeros(&[dout]),
                ];
                let config = if edge { KernelConfig::EdgeConv } else { KernelConfig::PointNet };
                (config, tensors)
            }
        };
        Self { config, tensors }
    }
}

/// Evaluates any kernel on a `[H, W, D]` feature map.
pub fn apply_kernel(geo: &LevelGeometry, x: &Tensor, params: &KernelParams) -> Result<Tensor> {
    let mut inputs = vec![x];
    inputs.extend(params.tensors.iter());
    op::eval(&params.config, geo, &inputs)
}

fn apply_expecting(kind: KernelKind, geo: &LevelGeometry, x: &Tensor, params: &KernelParams) -> Result<Tensor> {
    if params.kind() != kind {
        return Err(Error::Contract(format!("expected {kind} parameters, got {}", params.kind())));
    }
    apply_kernel(geo, x, params)
}

/// Inner product over the window. Ungated unless the parameters say so, so an
/// invalid center still receives its neighbors' contributions.
pub fn apply_conv2d(geo: &LevelGeometry, x: &Tensor, params: &KernelParams) -> Result<Tensor> {
    apply_expecting(KernelKind::Conv2d, geo, x, params)
}

/// Convolution whose weight set is chosen per neighbor by the bucket of its
/// range difference to the center.
pub fn apply_rq_conv2d(geo: &LevelGeometry, x: &Tensor, params: &KernelParams) -> Result<Tensor> {
    apply_expecting(KernelKind::RqConv2d, geo, x, params)
}

pub fn apply_self_attention(geo: &LevelGeometry, x: &Tensor, params: &KernelParams) -> Result<Tensor> {
    apply_expecting(KernelKind::SelfAttention, geo, x, params)
}

pub fn apply_pointnet(geo: &LevelGeometry, x: &Tensor, params: &KernelParams) -> Result<Tensor> {
    apply_expecting(KernelKind::PointNet, geo, x, params)
}

pub fn apply_edgeconv(geo: &LevelGeometry, x: &Tensor, params: &KernelParams) -> Result<Tensor> {
    apply_expecting(KernelKind::EdgeConv, geo, x, params)
}

/// Softmax weights of one center pixel as `(neighbor index, weight)` pairs.
pub fn attention_weights(geo: &LevelGeometry, x: &Tensor, params: &KernelParams, pixel: usize) -> Result<Vec<(usize, f64)>> {
    let KernelConfig::SelfAttention { mode } = params.config else {
        return Err(Error::Contract(format!("expected attention parameters, got {}", params.kind())));
    };
    let mut inputs = vec![x];
    inputs.extend(params.tensors.iter());
    let d = op::check(&params.config, geo, &inputs)?;
    let t = &params.tensors;
    let w = attention::AttnWeights {
        wq: t[0].data(),
        wk: t[1].data(),
        wv: t[2].data(),
        wr: t[3].data(),
        di: d.di,
        dk: d.hidden,
        dout: d.dout,
    };
    Ok(attention::weights(geo, x.data(), &w, mode, pixel))
}
