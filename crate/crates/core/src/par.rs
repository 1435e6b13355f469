//! Data-parallel loop helpers.
//!
//! With the `parallel` feature the loops run on the rayon pool; without it they
//! run sequentially. Reductions always combine fixed-size blocks in index order,
//! so results are bit-identical across thread counts and between the two builds.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Items per reduction block. Fixed so the summation tree never depends on the
/// number of worker threads.
pub const BLOCK: usize = 64;

/// Calls `f(item_index, chunk)` for every `item_len`-sized chunk of `out`.
pub fn for_each_item<F>(out: &mut [f64], item_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if item_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(item_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps `0..n` through `f`, preserving order.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    (0..n).map(f).collect()
}

/// Splits `out` into blocks of `BLOCK` items of `item_len` values each. For every
/// block `f(items, out_block, partial)` fills the block and accumulates into a
/// zeroed `partial_len` scratch vector. Returns the in-order sum of partials.
pub fn blocks_with_partial<F>(out: &mut [f64], item_len: usize, partial_len: usize, f: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64], &mut [f64]) + Sync + Send,
{
    let stride = (BLOCK * item_len).max(1);
    let run = |(b, chunk): (usize, &mut [f64])| {
        let start = b * BLOCK;
        let count = if item_len == 0 { 0 } else { chunk.len() / item_len };
        let mut partial = vec![0.0; partial_len];
        f(start..start + count, chunk, &mut partial);
        partial
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<f64>> = out.par_chunks_mut(stride).enumerate().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<f64>> = out.chunks_mut(stride).enumerate().map(run).collect();
    sum_in_order(partials, partial_len)
}

/// Reduction over `0..n` in blocks of `BLOCK`, returning the in-order sum of the
/// per-block partial vectors.
pub fn reduce_blocks<F>(n: usize, partial_len: usize, f: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync + Send,
{
    let nblocks = n.div_ceil(BLOCK);
    let partials = map(nblocks, |b| {
        let mut partial = vec![0.0; partial_len];
        f(b * BLOCK..((b + 1) * BLOCK).min(n), &mut partial);
        partial
    });
    sum_in_order(partials, partial_len)
}

fn sum_in_order(partials: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
