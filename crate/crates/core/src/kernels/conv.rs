//! Inner-product kernels: plain 2D convolution and its range-quantized variant.

use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot};
use super::LevelGeometry;
use crate::error::{Error, Result};
use crate::par;

/// Contiguous, exhaustive range-difference buckets `[α_k, β_k)` given by the
/// `K - 1` interior cut points; the first bucket starts at -∞ and the last
/// ends at +∞.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RqBuckets {
    cuts: Vec<f64>,
}

impl RqBuckets {
    pub fn single() -> Self {
        Self { cuts: Vec::new() }
    }

    pub fn from_cuts(cuts: Vec<f64>) -> Result<Self> {
        if cuts.iter().any(|c| !c.is_finite()) || cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bucket cut points must be finite and strictly increasing: {cuts:?}"
            )));
        }
        Ok(Self { cuts })
    }

    /// Builds buckets from explicit `[α, β)` intervals, rejecting gaps,
    /// overlaps and intervals that do not cover the whole real line.
    pub fn from_intervals(intervals: &[(f64, f64)]) -> Result<Self> {
        let (Some(first), Some(last)) = (intervals.first(), intervals.last()) else {
            return Err(Error::Config("no buckets given".into()));
        };
        if first.0 != f64::NEG_INFINITY || last.1 != f64::INFINITY {
            return Err(Error::Config("buckets must span (-inf, +inf)".into()));
        }
        for w in intervals.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::Config(format!(
                    "bucket [{}, {}) does not meet [{}, {})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Self::from_cuts(intervals[1..].iter().map(|iv| iv.0).collect())
    }

    pub fn len(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend(&self.cuts);
        edges.push(f64::INFINITY);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Index of the bucket containing `dr`.
    #[inline]
    pub fn bucket(&self, dr: f64) -> usize {
        self.cuts.partition_point(|&c| c <= dr)
    }
}

/// Weight-set selection for one (center, offset) pair; `None` skips the term.
pub(crate) trait Selector: Sync {
    fn select(&self, geo: &LevelGeometry, p: usize, o: usize, q: usize) -> Option<usize>;
}

pub(crate) struct Plain {
    pub gated: bool,
}

impl Selector for Plain {
    #[inline]
    fn select(&self, geo: &LevelGeometry, p: usize, _: usize, q: usize) -> Option<usize> {
        (!self.gated || (geo.mask[p] && geo.mask[q])).then_some(0)
    }
}

impl Selector for RqBuckets {
    #[inline]
    fn select(&self, geo: &LevelGeometry, p: usize, _: usize, q: usize) -> Option<usize> {
        (geo.mask[p] && geo.mask[q]).then(|| self.bucket(geo.range_diff(p, q)))
    }
}

/// Weight layout `[sets, k, di, dout]`.
pub(crate) fn forward(
    geo: &LevelGeometry,
    x: &[f64],
    di: usize,
    weight: &[f64],
    dout: usize,
    sel: &dyn Selector,
) -> Vec<f64> {
    let k = geo.k();
    let mut out = vec![0.0; geo.pixels() * dout];
    par::for_each_item(&mut out, dout, |p, acc| {
        for o in 0..k {
            let Some(q) = geo.neighbor(p, o) else { continue };
            let Some(s) = sel.select(geo, p, o, q) else { continue };
            let wo = &weight[(s * k + o) * di * dout..];
            for (i, &xv) in x[q * di..(q + 1) * di].iter().enumerate() {
                axpy(acc, xv, &wo[i * dout..(i + 1) * dout]);
            }
        }
    });
    out
}

/// Returns `(grad_x, grad_weight)`; `grad_x` only when `need_x`.
pub(crate) fn backward(
    geo: &LevelGeometry,
    x: &[f64],
    di: usize,
    weight: &[f64],
    dout: usize,
    sel: &dyn Selector,
    grad: &[f64],
    need_x: bool,
) -> (Option<Vec<f64>>, Vec<f64>) {
    let k = geo.k();
    let mut gx = vec![0.0; geo.pixels() * di];
    let gw = par::blocks_with_partial(&mut gx, di, weight.len(), |range, block, gw| {
        for (local, q) in range.enumerate() {
            let gxq = &mut block[local * di..(local + 1) * di];
            let xq = &x[q * di..(q + 1) * di];
            for o in 0..k {
                let Some(p) = geo.center_of(q, o) else { continue };
                let Some(s) = sel.select(geo, p, o, q) else { continue };
                let base = (s * k + o) * di * dout;
                let gp = &grad[p * dout..(p + 1) * dout];
                for i in 0..di {
                    let row = base + i * dout..base + (i + 1) * dout;
                    if need_x {
                        gxq[i] += dot(&weight[row.clone()], gp);
                    }
                    axpy(&mut gw[row], xq[i], gp);
                }
            }
        }
    });
    (need_x.then_some(gx), gw)
}
