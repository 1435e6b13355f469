//! Shape checking, evaluation and the tape rule shared by all kernels.

use std::sync::Arc;

use super::attention::{self, AttnWeights};
use super::conv::{self, Plain, Selector};
use super::mlp::{self, MlpWeights};
use super::{KernelConfig, LevelGeometry};
use crate::error::{Error, Result};
use crate::tensorcore::{Backward, Tape, Tensor, Var};

pub(crate) struct Dims {
    pub di: usize,
    pub dout: usize,
    /// Key width (attention) or MLP hidden width.
    pub hidden: usize,
}

fn rank(t: &Tensor, n: usize, what: &'static str) -> Result<()> {
    if t.rank() != n {
        return Err(Error::Contract(format!("{what} must have rank {n}, got shape {:?}", t.shape())));
    }
    Ok(())
}

fn expect(op: &'static str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(op, shape, t.shape()));
    }
    Ok(())
}

/// Channel widths implied by the parameter tensors (without the input map).
pub(crate) fn param_dims(config: &KernelConfig, t: &[&Tensor]) -> Result<Dims> {
    let want = match config {
        KernelConfig::Conv2d { .. } | KernelConfig::RqConv2d { .. } => 1,
        KernelConfig::SelfAttention { .. } => 4,
        KernelConfig::PointNet | KernelConfig::EdgeConv => 4,
    };
    if t.len() != want {
        return Err(Error::Contract(format!("{} expects {want} parameter tensors, got {}", config.kind(), t.len())));
    }
    match config {
        KernelConfig::Conv2d { .. } => {
            rank(t[0], 4, "conv2d weight")?;
            let s = t[0].shape();
            Ok(Dims { di: s[2], dout: s[3], hidden: 0 })
        }
        KernelConfig::RqConv2d { buckets } => {
            rank(t[0], 5, "rq-conv2d weight")?;
            let s = t[0].shape();
            if s[0] != buckets.len() {
                return Err(Error::shape("rq-conv2d weight sets", &[buckets.len()], &[s[0]]));
            }
            Ok(Dims { di: s[3], dout: s[4], hidden: 0 })
        }
        KernelConfig::SelfAttention { .. } => {
            rank(t[0], 2, "wq")?;
            let (di, dk) = (t[0].shape()[0], t[0].shape()[1]);
            rank(t[2], 2, "wv")?;
            let dout = t[2].shape()[1];
            expect("attention wk", t[1], &[di, dk])?;
            expect("attention wv", t[2], &[di, dout])?;
            expect("attention wr", t[3], &[3, dk])?;
            Ok(Dims { di, dout, hidden: dk })
        }
        KernelConfig::PointNet | KernelConfig::EdgeConv => {
            rank(t[0], 2, "w1")?;
            rank(t[2], 2, "w2")?;
            let (rows, hd) = (t[0].shape()[0], t[0].shape()[1]);
            let dout = t[2].shape()[1];
            let edge = matches!(config, KernelConfig::EdgeConv);
            let div = if edge { 2 } else { 1 };
            if rows < 3 || (rows - 3) % div != 0 {
                return Err(Error::Contract(format!("{} first layer has {rows} input rows", config.kind())));
            }
            expect("mlp b1", t[1], &[hd])?;
            expect("mlp w2", t[2], &[hd, dout])?;
            expect("mlp b2", t[3], &[dout])?;
            Ok(Dims { di: (rows - 3) / div, dout, hidden: hd })
        }
    }
}

/// Validates `inputs = [x, params...]` against the geometry.
pub(crate) fn check(config: &KernelConfig, geo: &LevelGeometry, inputs: &[&Tensor]) -> Result<Dims> {
    let d = param_dims(config, &inputs[1..])?;
    let x = inputs[0];
    let expected = [geo.height, geo.width, d.di];
    if x.shape() != expected {
        return Err(Error::shape(config.kind().name(), &expected, x.shape()));
    }
    if let KernelConfig::Conv2d { .. } = config {
        let s = inputs[1].shape();
        if (s[0], s[1]) != (geo.nbhd.kh, geo.nbhd.kw) {
            return Err(Error::shape("conv2d window", &[geo.nbhd.kh, geo.nbhd.kw], &s[..2]));
        }
    }
    if let KernelConfig::RqConv2d { .. } = config {
        let s = inputs[1].shape();
        if (s[1], s[2]) != (geo.nbhd.kh, geo.nbhd.kw) {
            return Err(Error::shape("rq-conv2d window", &[geo.nbhd.kh, geo.nbhd.kw], &s[1..3]));
        }
    }
    Ok(d)
}

fn attn<'a>(t: &[&'a Tensor], d: &Dims) -> AttnWeights<'a> {
    AttnWeights {
        wq: t[1].data(),
        wk: t[2].data(),
        wv: t[3].data(),
        wr: t[4].data(),
        di: d.di,
        dk: d.hidden,
        dout: d.dout,
    }
}

fn mlp_weights<'a>(t: &[&'a Tensor], d: &Dims, edge: bool) -> MlpWeights<'a> {
    MlpWeights {
        w1: t[1].data(),
        b1: t[2].data(),
        w2: t[3].data(),
        b2: t[4].data(),
        di: d.di,
        hidden: d.hidden,
        dout: d.dout,
        edge,
    }
}

fn selector(config: &KernelConfig) -> Box<dyn Selector + '_> {
    match config {
        KernelConfig::Conv2d { gated } => Box::new(Plain { gated: *gated }),
        KernelConfig::RqConv2d { buckets } => Box::new(buckets.clone()),
        _ => unreachable!("only inner-product kernels select weight sets"),
    }
}

pub(crate) fn eval(config: &KernelConfig, geo: &LevelGeometry, inputs: &[&Tensor]) -> Result<Tensor> {
    let d = check(config, geo, inputs)?;
    let x = inputs[0].data();
    let out = match config {
        KernelConfig::Conv2d { .. } | KernelConfig::RqConv2d { .. } => {
            conv::forward(geo, x, d.di, inputs[1].data(), d.dout, selector(config).as_ref())
        }
        KernelConfig::SelfAttention { mode } => attention::forward(geo, x, &attn(inputs, &d), *mode),
        KernelConfig::PointNet => mlp::forward(geo, x, &mlp_weights(inputs, &d, false)),
        KernelConfig::EdgeConv => mlp::forward(geo, x, &mlp_weights(inputs, &d, true)),
    };
    Tensor::new(&[geo.height, geo.width, d.dout], out)
}

struct KernelOp {
    config: KernelConfig,
    geo: Arc<LevelGeometry>,
}

impl Backward for KernelOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let geo = &self.geo;
        let d = check(&self.config, geo, inputs).expect("validated in forward");
        let x = inputs[0].data();
        let g = grad.data();
        let shaped = |t: &Tensor, v: Vec<f64>| Some(Tensor::new(t.shape(), v).expect("gradient shape"));
        match &self.config {
            KernelConfig::Conv2d { .. } | KernelConfig::RqConv2d { .. } => {
                let sel = selector(&self.config);
                let (gx, gw) = conv::backward(geo, x, d.di, inputs[1].data(), d.dout, sel.as_ref(), g, needs[0]);
                vec![gx.and_then(|v| shaped(inputs[0], v)), shaped(inputs[1], gw)]
            }
            KernelConfig::SelfAttention { mode } => {
                let gr = attention::backward(geo, x, &attn(inputs, &d), *mode, g, needs[0]);
                vec![
                    gr.x.and_then(|v| shaped(inputs[0], v)),
                    shaped(inputs[1], gr.wq),
                    shaped(inputs[2], gr.wk),
                    shaped(inputs[3], gr.wv),
                    shaped(inputs[4], gr.wr),
                ]
            }
            KernelConfig::PointNet | KernelConfig::EdgeConv => {
                let edge = matches!(self.config, KernelConfig::EdgeConv);
                let gr = mlp::backward(geo, x, &mlp_weights(inputs, &d, edge), g, needs[0]);
                vec![
                    gr.x.and_then(|v| shaped(inputs[0], v)),
                    shaped(inputs[1], gr.w1),
                    shaped(inputs[2], gr.b1),
                    shaped(inputs[3], gr.w2),
                    shaped(inputs[4], gr.b2),
                ]
            }
        }
    }
}

impl Tape {
    /// Records a kernel layer on `x` (`[H, W, D]`) with parameters `params`
    /// in the storage order of the kernel.
    pub fn kernel(&mut self, geo: &Arc<LevelGeometry>, config: &KernelConfig, x: Var, params: &[Var]) -> Result<Var> {
        let mut vars = vec![x];
        vars.extend_from_slice(params);
        let value = {
            let inputs: Vec<&Tensor> = vars.iter().map(|&v| self.value(v)).collect();
            eval(config, geo, &inputs)?
        };
        let op = KernelOp {
            config: config.clone(),
            geo: Arc::clone(geo),
        };
        Ok(self.record(value, &vars, Box::new(op)))
    }
}
