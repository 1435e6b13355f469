//! Single-head local self-attention whose keys carry a learned projection of
//! the pairwise positional encoding.

use serde::{Deserialize, Serialize};

use super::linalg::{add_into, axpy, dot, outer_sum, project, project_t};
use super::LevelGeometry;
use crate::par;

/// Which neighbors enter the softmax normalizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Only valid neighbors; weights over them sum to one.
    #[default]
    Masked,
    /// Every in-image neighbor; invalid ones still absorb probability mass but
    /// their values are zeroed by the validity product.
    Strict,
}

pub(crate) struct AttnWeights<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wr: &'a [f64],
    pub di: usize,
    pub dk: usize,
    pub dout: usize,
}

struct Projected {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

fn project_all(x: &[f64], w: &AttnWeights) -> Projected {
    Projected {
        q: project(x, w.di, w.wq, w.dk),
        k: project(x, w.di, w.wk, w.dk),
        v: project(x, w.di, w.wv, w.dout),
    }
}

/// Softmax weights for center `p` as `(offset, neighbor, weight)`; empty for an
/// invalid center.
fn weights_at(
    geo: &LevelGeometry,
    pr: &Projected,
    w: &AttnWeights,
    mode: AttentionMode,
    p: usize,
) -> Vec<(usize, usize, f64)> {
    if !geo.mask[p] {
        return Vec::new();
    }
    let dk = w.dk;
    let qp = &pr.q[p * dk..(p + 1) * dk];
    let u: Vec<f64> = (0..3).map(|c| dot(&w.wr[c * dk..(c + 1) * dk], qp)).collect();
    let mut entries = Vec::with_capacity(geo.k());
    for o in 0..geo.k() {
        let Some(n) = geo.neighbor(p, o) else { continue };
        if mode == AttentionMode::Masked && !geo.mask[n] {
            continue;
        }
        let g = geo.encoding(p, o);
        let logit = dot(qp, &pr.k[n * dk..(n + 1) * dk]) + u[0] * g[0] + u[1] * g[1] + u[2] * g[2];
        entries.push((o, n, logit));
    }
    let max = entries.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for e in &mut entries {
        e.2 = (e.2 - max).exp();
        z += e.2;
    }
    for e in &mut entries {
        e.2 /= z;
    }
    entries
}

pub(crate) fn forward(geo: &LevelGeometry, x: &[f64], w: &AttnWeights, mode: AttentionMode) -> Vec<f64> {
    let pr = project_all(x, w);
    let dout = w.dout;
    let mut out = vec![0.0; geo.pixels() * dout];
    par::for_each_item(&mut out, dout, |p, acc| {
        for (_, n, wt) in weights_at(geo, &pr, w, mode, p) {
            if geo.mask[n] {
                axpy(acc, wt, &pr.v[n * dout..(n + 1) * dout]);
            }
        }
    });
    out
}

/// Attention weights of one center, keyed by neighbor flat index.
pub(crate) fn weights(
    geo: &LevelGeometry,
    x: &[f64],
    w: &AttnWeights,
    mode: AttentionMode,
    p: usize,
) -> Vec<(usize, f64)> {
    let pr = project_all(x, w);
    weights_at(geo, &pr, w, mode, p).into_iter().map(|(_, n, wt)| (n, wt)).collect()
}

pub(crate) struct AttnGrads {
    pub x: Option<Vec<f64>>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wr: Vec<f64>,
}

pub(crate) fn backward(
    geo: &LevelGeometry,
    x: &[f64],
    w: &AttnWeights,
    mode: AttentionMode,
    grad: &[f64],
    need_x: bool,
) -> AttnGrads {
    let pr = project_all(x, w);
    let (k, dk, dout) = (geo.k(), w.dk, w.dout);
    let item = dk + 2 * k;
    // per center: [grad q | key coefficients | value coefficients]
    let mut buf = vec![0.0; geo.pixels() * item];
    let gwr = par::blocks_with_partial(&mut buf, item, 3 * dk, |range, block, gwr| {
        for (local, p) in range.enumerate() {
            let entries = weights_at(geo, &pr, w, mode, p);
            if entries.is_empty() {
                continue;
            }
            let slot = &mut block[local * item..(local + 1) * item];
            let gp = &grad[p * dout..(p + 1) * dout];
            let gw: Vec<f64> = entries
                .iter()
                .map(|&(_, n, _)| if geo.mask[n] { dot(gp, &pr.v[n * dout..(n + 1) * dout]) } else { 0.0 })
                .collect();
            let s: f64 = entries.iter().zip(&gw).map(|(e, g)| e.2 * g).sum();
            let mut genc = [0.0; 3];
            let (gq, coef) = slot.split_at_mut(dk);
            for (&(o, n, wt), &g) in entries.iter().zip(&gw) {
                let gs = wt * (g - s);
                axpy(gq, gs, &pr.k[n * dk..(n + 1) * dk]);
                let e = geo.encoding(p, o);
                for c in 0..3 {
                    genc[c] += gs * e[c];
                }
                coef[o] = gs;
                coef[k + o] = if geo.mask[n] { wt } else { 0.0 };
            }
            let qp = &pr.q[p * dk..(p + 1) * dk];
            for c in 0..3 {
                axpy(gq, genc[c], &w.wr[c * dk..(c + 1) * dk]);
                axpy(&mut gwr[c * dk..(c + 1) * dk], genc[c], qp);
            }
        }
    });
    let gq: Vec<f64> = buf.chunks(item).flat_map(|c| c[..dk].iter().copied()).collect();
    let kv = dk + dout;
    let mut gkv = vec![0.0; geo.pixels() * kv];
    par::for_each_item(&mut gkv, kv, |q, acc| {
        let (gk, gv) = acc.split_at_mut(dk);
        for o in 0..k {
            let Some(p) = geo.center_of(q, o) else { continue };
            let coef = &buf[p * item + dk..(p + 1) * item];
            if coef[o] != 0.0 {
                axpy(gk, coef[o], &pr.q[p * dk..(p + 1) * dk]);
            }
            if coef[k + o] != 0.0 {
                axpy(gv, coef[k + o], &grad[p * dout..(p + 1) * dout]);
            }
        }
    });
    let gk: Vec<f64> = gkv.chunks(kv).flat_map(|c| c[..dk].iter().copied()).collect();
    let gv: Vec<f64> = gkv.chunks(kv).flat_map(|c| c[dk..].iter().copied()).collect();
    let gx = need_x.then(|| {
        let mut gx = project_t(&gq, dk, w.wq, w.di);
        add_into(&mut gx, &project_t(&gk, dk, w.wk, w.di));
        add_into(&mut gx, &project_t(&gv, dout, w.wv, w.di));
        gx
    });
    AttnGrads {
        x: gx,
        wq: outer_sum(x, w.di, &gq, dk),
        wk: outer_sum(x, w.di, &gk, dk),
        wv: outer_sum(x, w.di, &gv, dout),
        wr: gwr,
    }
}
