use serde::Serialize;

use super::network::{BlockBody, LayerPlan, Network};
use crate::kernels::{kernel_flops, kernel_params, projection_flops, KernelConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCost {
    pub name: String,
    pub params: usize,
    pub flops: u64,
    /// Share of `flops` spent in aggregation kernels, without the 1x1
    /// shortcut projections.
    pub kernel_flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub blocks: Vec<BlockCost>,
    pub total_params: usize,
    pub total_flops: u64,
    pub total_kernel_flops: u64,
}

fn layer_cost(net: &Network, layer: &LayerPlan, dims: &[(usize, usize)]) -> (usize, u64) {
    let kind = layer.config.kind();
    let k = match &layer.config {
        KernelConfig::RqConv2d { buckets } => buckets.len(),
        _ => 1,
    };
    let nbhd = net.spec.neighborhood;
    let (h, w) = dims[layer.level];
    (
        kernel_params(kind, nbhd, layer.di, layer.dout, k),
        kernel_flops(kind, nbhd, layer.di, layer.dout, h, w, k),
    )
}

pub(crate) fn report(net: &Network, h: usize, w: usize) -> CostReport {
    let mut dims: Vec<(usize, usize)> = Vec::with_capacity(net.levels.len());
    for l in &net.levels {
        let d = match l.parent {
            None => (h, w),
            Some(p) => (dims[p].0.div_ceil(l.stride.0), dims[p].1.div_ceil(l.stride.1)),
        };
        dims.push(d);
    }
    let mut blocks = Vec::new();
    for b in &net.blocks {
        let mut params = 0;
        let mut flops = 0;
        let mut kernel = 0;
        let mut add = |(p, f): (usize, u64), is_kernel: bool| {
            params += p;
            flops += f;
            if is_kernel {
                kernel += f;
            }
        };
        if let BlockBody::Fa { agg, .. } = &b.body {
            add(layer_cost(net, agg, &dims), true);
        }
        for u in &b.units {
            for l in &u.layers {
                add(layer_cost(net, l, &dims), true);
            }
            if let Some(pi) = u.proj {
                let s = net.params()[pi].1.shape();
                let (lh, lw) = dims[b.level];
                add((s[0] * s[1], projection_flops(s[0], s[1], lh, lw)), false);
            }
        }
        debug_assert_eq!(params, net.params()[b.params.clone()].iter().map(|(_, t)| t.len()).sum::<usize>());
        blocks.push(BlockCost {
            name: b.name.clone(),
            params,
            flops,
            kernel_flops: kernel,
        });
    }
    CostReport {
        total_params: blocks.iter().map(|b| b.params).sum(),
        total_flops: blocks.iter().map(|b| b.flops).sum(),
        total_kernel_flops: blocks.iter().map(|b| b.kernel_flops).sum(),
        blocks,
    }
}
