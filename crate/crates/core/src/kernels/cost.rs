//! Operation and parameter counts.
//!
//! One multiply-add counts as 2 FLOPs and one exponential as 4. Elementwise
//! additions, activations, comparisons and the max-pool are not counted.

use super::{KernelKind, Neighborhood};

/// FLOPs of one kernel layer on an `h x w` map. `buckets` only affects
/// RQ-Conv2D.
pub fn kernel_flops(kind: KernelKind, nbhd: Neighborhood, di: usize, dout: usize, h: usize, w: usize, buckets: usize) -> u64 {
    let (k, di, dout) = (nbhd.size() as u64, di as u64, dout as u64);
    let pixels = (h * w) as u64;
    let per_pixel = match kind {
        KernelKind::Conv2d => 2 * k * di * dout,
        KernelKind::RqConv2d => return buckets as u64 * kernel_flops(KernelKind::Conv2d, nbhd, di as usize, dout as usize, h, w, 1),
        KernelKind::SelfAttention => {
            let dk = dout;
            // query/key/value projections, query-side positional projection,
            // then per neighbor a logit, its exponential and the weighted value
            2 * di * (2 * dk + dout) + 2 * 3 * dk + k * (2 * dk + 2 * 3 + 4 + 2 * dout)
        }
        KernelKind::PointNet | KernelKind::EdgeConv => {
            let rows = if kind == KernelKind::EdgeConv { 2 * di + 3 } else { di + 3 };
            let hd = dout;
            k * 2 * (rows * hd + hd * dout)
        }
    };
    pixels * per_pixel
}

/// Trainable parameters of one kernel layer.
pub fn kernel_params(kind: KernelKind, nbhd: Neighborhood, di: usize, dout: usize, buckets: usize) -> usize {
    let k = nbhd.size();
    match kind {
        KernelKind::Conv2d => k * di * dout,
        KernelKind::RqConv2d => buckets * k * di * dout,
        KernelKind::SelfAttention => 2 * di * dout + di * dout + 3 * dout,
        KernelKind::PointNet | KernelKind::EdgeConv => {
            let rows = if kind == KernelKind::EdgeConv { 2 * di + 3 } else { di + 3 };
            rows * dout + dout + dout * dout + dout
        }
    }
}

/// FLOPs of a dense per-pixel projection (1x1 layer).
pub fn projection_flops(di: usize, dout: usize, h: usize, w: usize) -> u64 {
    2 * (h * w) as u64 * di as u64 * dout as u64
}
