//! Max-pooled MLP kernels over `[neighbor feature, (center feature,) encoding]`.
//!
//! The first MLP layer is linear in the concatenation, so its neighbor and
//! center slices are applied once per pixel and only the 3-wide encoding slice
//! is evaluated per pair.

use super::linalg::{add_into, axpy, dot, outer_sum, project, project_t};
use super::LevelGeometry;
use crate::par;

pub(crate) struct MlpWeights<'a> {
    /// `[rows, hidden]`, rows = `di + 3` or `2 di + 3` (edge).
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    /// `[hidden, dout]`.
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub di: usize,
    pub hidden: usize,
    pub dout: usize,
    pub edge: bool,
}

impl MlpWeights<'_> {
    fn neighbor_rows(&self) -> &[f64] {
        &self.w1[..self.di * self.hidden]
    }

    fn center_rows(&self) -> &[f64] {
        &self.w1[self.di * self.hidden..2 * self.di * self.hidden]
    }

    fn encoding_rows(&self) -> &[f64] {
        &self.w1[self.w1.len() - 3 * self.hidden..]
    }
}

/// Per-pixel first-layer terms.
struct Pre {
    neighbor: Vec<f64>,
    /// Center term plus bias, per pixel (edge) or shared (point).
    center: Option<Vec<f64>>,
}

impl Pre {
    fn new(x: &[f64], w: &MlpWeights) -> Self {
        let neighbor = project(x, w.di, w.neighbor_rows(), w.hidden);
        let center = w.edge.then(|| {
            let mut c = project(x, w.di, w.center_rows(), w.hidden);
            for row in c.chunks_mut(w.hidden) {
                for (v, b) in row.iter_mut().zip(w.b1) {
                    *v += b;
                }
            }
            c
        });
        Self { neighbor, center }
    }

    fn center_bias<'a>(&'a self, w: &'a MlpWeights, p: usize) -> &'a [f64] {
        match &self.center {
            Some(c) => &c[p * w.hidden..(p + 1) * w.hidden],
            None => w.b1,
        }
    }
}

/// Hidden activations and outputs of every valid neighbor of a valid center.
struct Evaluated {
    offsets: Vec<usize>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

fn evaluate(geo: &LevelGeometry, pre: &Pre, w: &MlpWeights, p: usize) -> Evaluated {
    let (hd, dout) = (w.hidden, w.dout);
    let cb = pre.center_bias(w, p);
    let ag = w.encoding_rows();
    let mut ev = Evaluated {
        offsets: Vec::with_capacity(geo.k()),
        hidden: Vec::with_capacity(geo.k() * hd),
        out: Vec::with_capacity(geo.k() * dout),
    };
    for o in 0..geo.k() {
        let Some(n) = geo.neighbor(p, o) else { continue };
        if !geo.mask[n] {
            continue;
        }
        let start = ev.hidden.len();
        ev.hidden.extend(pre.neighbor[n * hd..(n + 1) * hd].iter().zip(cb).map(|(a, b)| a + b));
        let h = &mut ev.hidden[start..];
        let g = geo.encoding(p, o);
        for c in 0..3 {
            axpy(h, g[c], &ag[c * hd..(c + 1) * hd]);
        }
        for v in h.iter_mut() {
            *v = v.max(0.0);
        }
        let ostart = ev.out.len();
        ev.out.extend_from_slice(w.b2);
        let (h, e) = (&ev.hidden[start..], &mut ev.out[ostart..]);
        for (kk, &hv) in h.iter().enumerate() {
            if hv != 0.0 {
                axpy(e, hv, &w.w2[kk * dout..(kk + 1) * dout]);
            }
        }
        ev.offsets.push(o);
    }
    ev
}

/// Index into `ev.offsets` of the per-channel maximum, first on ties.
fn argmax(ev: &Evaluated, dout: usize) -> Vec<usize> {
    (0..dout)
        .map(|j| {
            let mut best = 0;
            for t in 1..ev.offsets.len() {
                if ev.out[t * dout + j] > ev.out[best * dout + j] {
                    best = t;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn forward(geo: &LevelGeometry, x: &[f64], w: &MlpWeights) -> Vec<f64> {
    let pre = Pre::new(x, w);
    let dout = w.dout;
    let mut out = vec![0.0; geo.pixels() * dout];
    par::for_each_item(&mut out, dout, |p, acc| {
        if !geo.mask[p] {
            return;
        }
        let ev = evaluate(geo, &pre, w, p);
        for (j, t) in argmax(&ev, dout).into_iter().enumerate() {
            acc[j] = ev.out[t * dout + j];
        }
    });
    out
}

pub(crate) struct MlpGrads {
    pub x: Option<Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub(crate) fn backward(geo: &LevelGeometry, x: &[f64], w: &MlpWeights, grad: &[f64], need_x: bool) -> MlpGrads {
    let pre = Pre::new(x, w);
    let (k, hd, dout, di) = (geo.k(), w.hidden, w.dout, w.di);
    let item = k * hd;
    // partial layout: [w2 | b2 | b1 | encoding rows]
    let (o_b2, o_b1, o_ag) = (hd * dout, hd * dout + dout, hd * dout + dout + hd);
    let plen = o_ag + 3 * hd;
    // gradient of each pair's first-layer pre-activation
    let mut gpre = vec![0.0; geo.pixels() * item];
    let partial = par::blocks_with_partial(&mut gpre, item, plen, |range, block, acc| {
        let mut ge = vec![0.0; k * dout];
        for (local, p) in range.enumerate() {
            if !geo.mask[p] {
                continue;
            }
            let ev = evaluate(geo, &pre, w, p);
            let am = argmax(&ev, dout);
            ge[..ev.offsets.len() * dout].fill(0.0);
            for (j, &t) in am.iter().enumerate() {
                ge[t * dout + j] = grad[p * dout + j];
            }
            let slot = &mut block[local * item..(local + 1) * item];
            for (t, &o) in ev.offsets.iter().enumerate() {
                if !am.contains(&t) {
                    continue;
                }
                let get = &ge[t * dout..(t + 1) * dout];
                let h = &ev.hidden[t * hd..(t + 1) * hd];
                add_into(&mut acc[o_b2..o_b1], get);
                let gp = &mut slot[o * hd..(o + 1) * hd];
                for kk in 0..hd {
                    if h[kk] > 0.0 {
                        let wrow = &w.w2[kk * dout..(kk + 1) * dout];
                        axpy(&mut acc[kk * dout..(kk + 1) * dout], h[kk], get);
                        gp[kk] = dot(wrow, get);
                    }
                }
                add_into(&mut acc[o_b1..o_ag], gp);
                let g = geo.encoding(p, o);
                for c in 0..3 {
                    axpy(&mut acc[o_ag + c * hd..o_ag + (c + 1) * hd], g[c], gp);
                }
            }
        }
    });
    // route pair gradients back to the neighbor (and center) pixels
    let width = if w.edge { 2 * hd } else { hd };
    let mut gpix = vec![0.0; geo.pixels() * width];
    par::for_each_item(&mut gpix, width, |q, acc| {
        let (gn, gc) = acc.split_at_mut(hd);
        for o in 0..k {
            if let Some(p) = geo.center_of(q, o) {
                add_into(gn, &gpre[p * item + o * hd..p * item + (o + 1) * hd]);
            }
            if w.edge {
                add_into(gc, &gpre[q * item + o * hd..q * item + (o + 1) * hd]);
            }
        }
    });
    let gn: Vec<f64> = gpix.chunks(width).flat_map(|c| c[..hd].iter().copied()).collect();
    let mut w1 = outer_sum(x, di, &gn, hd);
    let mut gx = need_x.then(|| project_t(&gn, hd, w.neighbor_rows(), di));
    if w.edge {
        let gc: Vec<f64> = gpix.chunks(width).flat_map(|c| c[hd..].iter().copied()).collect();
        w1.extend(outer_sum(x, di, &gc, hd));
        if let Some(gx) = gx.as_mut() {
            add_into(gx, &project_t(&gc, hd, w.center_rows(), di));
        }
    }
    w1.extend_from_slice(&partial[o_ag..]);
    MlpGrads {
        x: gx,
        w1,
        b1: partial[o_b1..o_ag].to_vec(),
        w2: partial[..o_b2].to_vec(),
        b2: partial[o_b2..o_b1].to_vec(),
    }
}
