//! Row-wise products used by the fused kernel ops.

use crate::par;

/// `x [n, di] · w [di, do] -> [n, do]`.
pub fn project(x: &[f64], di: usize, w: &[f64], dout: usize) -> Vec<f64> {
    let n = if di == 0 { 0 } else { x.len() / di };
    let mut out = vec![0.0; n * dout];
    par::for_each_item(&mut out, dout, |p, row| {
        let xr = &x[p * di..(p + 1) * di];
        for (i, &xv) in xr.iter().enumerate() {
            axpy(row, xv, &w[i * dout..(i + 1) * dout]);
        }
    });
    out
}

/// `g [n, do] · wᵀ` with `w [di, do]` -> `[n, di]`.
pub fn project_t(g: &[f64], dout: usize, w: &[f64], di: usize) -> Vec<f64> {
    let n = if dout == 0 { 0 } else { g.len() / dout };
    let mut out = vec![0.0; n * di];
    par::for_each_item(&mut out, di, |p, row| {
        let gr = &g[p * dout..(p + 1) * dout];
        for (i, o) in row.iter_mut().enumerate() {
            *o = dot(&w[i * dout..(i + 1) * dout], gr);
        }
    });
    out
}

/// `xᵀ [di, n] · g [n, do] -> [di, do]`, reduced in fixed blocks.
pub fn outer_sum(x: &[f64], di: usize, g: &[f64], dout: usize) -> Vec<f64> {
    let n = if di == 0 { 0 } else { x.len() / di };
    par::reduce_blocks(n, di * dout, |range, acc| {
        for p in range {
            let gr = &g[p * dout..(p + 1) * dout];
            for (i, &xv) in x[p * di..(p + 1) * di].iter().enumerate() {
                axpy(&mut acc[i * dout..(i + 1) * dout], xv, gr);
            }
        }
    })
}

#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}
