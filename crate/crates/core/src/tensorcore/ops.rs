//! Differentiable primitives recorded on a [`Tape`].

use super::tape::{Backward, Tape, Var};
use super::tensor::dims2;
use super::Tensor;
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, len, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Contract(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

struct MatMul;
impl Backward for MatMul {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let ga = needs[0].then(|| g.matmul(&x[1].transpose2().unwrap()).unwrap());
        let gb = needs[1].then(|| x[0].transpose2().unwrap().matmul(g).unwrap());
        vec![ga, gb]
    }
}

struct Add;
impl Backward for Add {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        needs.iter().map(|&n| n.then(|| g.clone())).collect()
    }
}

struct Sub;
impl Backward for Sub {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.clone()), needs[1].then(|| g.scale(-1.0))]
    }
}

struct Mul;
impl Backward for Mul {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let prod = |o: &Tensor| {
            let d = g.data().iter().zip(o.data()).map(|(a, b)| a * b).collect();
            Tensor::new(g.shape(), d).unwrap()
        };
        vec![needs[0].then(|| prod(x[1])), needs[1].then(|| prod(x[0]))]
    }
}

struct Scale(f64);
impl Backward for Scale {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.scale(self.0))]
    }
}

struct AddBias;
impl Backward for AddBias {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let n = x[1].len();
        let gb = needs[1].then(|| {
            let mut acc = vec![0.0; n];
            for row in g.data().chunks(n) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::new(&[n], acc).unwrap()
        });
        vec![needs[0].then(|| g.clone()), gb]
    }
}

struct Relu;
impl Backward for Relu {
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let d = y
            .data()
            .iter()
            .zip(g.data())
            .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(Tensor::new(g.shape(), d).unwrap())]
    }
}

struct Sigmoid;
impl Backward for Sigmoid {
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let d = y.data().iter().zip(g.data()).map(|(&y, &g)| g * y * (1.0 - y)).collect();
        vec![Some(Tensor::new(g.shape(), d).unwrap())]
    }
}

struct Sum {
    scale: f64,
}
impl Backward for Sum {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(x[0].shape(), g.data()[0] * self.scale))]
    }
}

struct Reshape;
impl Backward for Reshape {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.reshape(x[0].shape()).unwrap())]
    }
}

struct ConcatLast {
    widths: Vec<usize>,
}
impl Backward for ConcatLast {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let total: usize = self.widths.iter().sum();
        let rows = g.len() / total.max(1);
        let mut offset = 0;
        let mut out = Vec::with_capacity(x.len());
        for (i, &w) in self.widths.iter().enumerate() {
            if needs[i] {
                let mut d = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                }
                out.push(Some(Tensor::new(x[i].shape(), d).unwrap()));
            } else {
                out.push(None);
            }
            offset += w;
        }
        out
    }
}

struct SoftmaxAxis {
    outer: usize,
    len: usize,
    inner: usize,
}
impl Backward for SoftmaxAxis {
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (y, gd) = (y.data(), g.data());
        let mut out = vec![0.0; y.len()];
        for o in 0..self.outer {
            for i in 0..self.inner {
                let idx = |k: usize| (o * self.len + k) * self.inner + i;
                let dot: f64 = (0..self.len).map(|k| y[idx(k)] * gd[idx(k)]).sum();
                for k in 0..self.len {
                    out[idx(k)] = y[idx(k)] * (gd[idx(k)] - dot);
                }
            }
        }
        vec![Some(Tensor::new(g.shape(), out).unwrap())]
    }
}

struct MaxReduce {
    /// Flat input index of the selected entry per output, `None` for empty slices.
    argmax: Vec<Option<usize>>,
}
impl Backward for MaxReduce {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut out = Tensor::zeros(x[0].shape());
        for (o, a) in self.argmax.iter().enumerate() {
            if let Some(a) = a {
                out.data_mut()[*a] += g.data()[o];
            }
        }
        vec![Some(out)]
    }
}

/// Moves rows between a source and a destination layout. `map[i]` is the
/// source row of destination row `i`.
struct ScatterRows {
    inverse: Vec<Option<usize>>,
    width: usize,
}
impl Backward for ScatterRows {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let w = self.width;
        let mut out = Tensor::zeros(x[0].shape());
        for (t, src) in self.inverse.iter().enumerate() {
            if let Some(i) = src {
                out.data_mut()[i * w..(i + 1) * w].copy_from_slice(&g.data()[t * w..(t + 1) * w]);
            }
        }
        vec![Some(out)]
    }
}

struct GatherRows {
    map: Vec<Option<usize>>,
    width: usize,
}
impl Backward for GatherRows {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let w = self.width;
        let mut out = Tensor::zeros(x[0].shape());
        for (i, src) in self.map.iter().enumerate() {
            if let Some(s) = src {
                for (a, b) in out.data_mut()[s * w..(s + 1) * w].iter_mut().zip(&g.data()[i * w..(i + 1) * w]) {
                    *a += b;
                }
            }
        }
        vec![Some(out)]
    }
}

impl Tape {
    /// Row gather on a tensor viewed as `[rows, last dim]`: destination row
    /// `i` copies source row `map[i]`, or is zero for `None`. The result has
    /// `shape` (whose last dimension must match).
    pub fn gather_rows(&mut self, x: Var, map: &[Option<usize>], shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let w = xv.shape().last().copied().unwrap_or(1);
        let rows = xv.len() / w.max(1);
        if shape.last() != Some(&w) || shape.iter().product::<usize>() != map.len() * w {
            return Err(Error::shape("gather_rows", shape, &[map.len(), w]));
        }
        let mut d = vec![0.0; map.len() * w];
        for (i, src) in map.iter().enumerate() {
            if let Some(s) = *src {
                if s >= rows {
                    return Err(Error::Contract(format!("gather_rows index {s} out of {rows} rows")));
                }
                d[i * w..(i + 1) * w].copy_from_slice(&xv.data()[s * w..(s + 1) * w]);
            }
        }
        let v = Tensor::new(shape, d)?;
        Ok(self.record(v, &[x], Box::new(GatherRows { map: map.to_vec(), width: w })))
    }

    /// Inverse layout move: source row `i` lands at destination row `map[i]`;
    /// destinations must be distinct and unreached rows are zero.
    pub fn scatter_rows(&mut self, x: Var, map: &[Option<usize>], shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let w = xv.shape().last().copied().unwrap_or(1);
        if xv.len() != map.len() * w || shape.last() != Some(&w) {
            return Err(Error::shape("scatter_rows", &[map.len(), w], xv.shape()));
        }
        let rows = shape.iter().product::<usize>() / w.max(1);
        let mut inverse = vec![None; rows];
        let mut d = vec![0.0; rows * w];
        for (i, dst) in map.iter().enumerate() {
            if let Some(t) = *dst {
                if t >= rows || inverse[t].is_some() {
                    return Err(Error::Contract(format!("scatter_rows destination {t} invalid or repeated")));
                }
                inverse[t] = Some(i);
                d[t * w..(t + 1) * w].copy_from_slice(&xv.data()[i * w..(i + 1) * w]);
            }
        }
        let v = Tensor::new(shape, d)?;
        // backward of a scatter is the gather through the inverse map
        Ok(self.record(v, &[x], Box::new(ScatterRows { inverse, width: w })))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.record(v, &[a, b], Box::new(MatMul)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let mut v = x.clone();
        v.add_assign(y)?;
        Ok(self.record(v, &[a, b], Box::new(Add)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let d = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let v = Tensor::new(x.shape(), d)?;
        Ok(self.record(v, &[a, b], Box::new(Sub)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let d = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let v = Tensor::new(x.shape(), d)?;
        Ok(self.record(v, &[a, b], Box::new(Mul)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.record(v, &[a], Box::new(Scale(s)))
    }

    /// Adds a bias vector along the last dimension.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = bv.len();
        if bv.rank() != 1 || xv.shape().last() != Some(&n) {
            return Err(Error::shape("add_bias", &[n], xv.shape()));
        }
        let mut v = xv.clone();
        for row in v.data_mut().chunks_mut(n) {
            for (a, b) in row.iter_mut().zip(bv.data()) {
                *a += b;
            }
        }
        Ok(self.record(v, &[x, b], Box::new(AddBias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| v.max(0.0));
        self.record(v, &[x], Box::new(Relu))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.record(v, &[x], Box::new(Sigmoid))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.record(v, &[x], Box::new(Sum { scale: 1.0 }))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let v = Tensor::scalar(self.value(x).sum() / n);
        self.record(v, &[x], Box::new(Sum { scale: 1.0 / n }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.record(v, &[x], Box::new(Reshape)))
    }

    /// Concatenates along the last dimension. All leading dimensions must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(xs[0]).shape().to_vec();
        let lead = &first[..first.len().saturating_sub(1)];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat_last", &first, s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut d = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                d.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let v = Tensor::new(&shape, d)?;
        Ok(self.record(v, xs, Box::new(ConcatLast { widths })))
    }

    /// Softmax along `axis`, restricted to entries where `mask` is nonzero.
    /// Masked entries get weight exactly 0; a fully masked slice yields zeros.
    pub fn softmax_axis(&mut self, x: Var, axis: usize, mask: Option<&Tensor>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = mask {
            same_shape("softmax_axis", xv, m)?;
        }
        let (outer, len, inner) = axis_split(xv.shape(), axis)?;
        let xd = xv.data();
        let keep = |i: usize| mask.is_none_or(|m| m.data()[i] != 0.0);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len)
                    .filter(|&k| keep(idx(k)))
                    .map(|k| xd[idx(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut z = 0.0;
                for k in 0..len {
                    if keep(idx(k)) {
                        let e = (xd[idx(k)] - max).exp();
                        out[idx(k)] = e;
                        z += e;
                    }
                }
                for k in 0..len {
                    out[idx(k)] /= z;
                }
            }
        }
        let v = Tensor::new(xv.shape(), out)?;
        Ok(self.record(v, &[x], Box::new(SoftmaxAxis { outer, len, inner })))
    }

    /// Max along `axis` over entries where `mask` is nonzero; the axis is
    /// removed. Ties go to the lowest index, empty slices yield 0.
    pub fn max_reduce(&mut self, x: Var, axis: usize, mask: Option<&Tensor>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = mask {
            same_shape("max_reduce", xv, m)?;
        }
        let (outer, len, inner) = axis_split(xv.shape(), axis)?;
        let xd = xv.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![None; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best: Option<usize> = None;
                for k in 0..len {
                    let j = (o * len + k) * inner + i;
                    if mask.is_some_and(|m| m.data()[j] == 0.0) {
                        continue;
                    }
                    if best.is_none_or(|b| xd[j] > xd[b]) {
                        best = Some(j);
                    }
                }
                if let Some(b) = best {
                    out[o * inner + i] = xd[b];
                }
                argmax[o * inner + i] = best;
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(&shape, out)?;
        Ok(self.record(v, &[x], Box::new(MaxReduce { argmax })))
    }

    /// Multi-layer perceptron over the rows of `x`: affine + ReLU between
    /// layers, the last layer affine only. Weights are `[in, out]`.
    pub fn mlp_forward(&mut self, x: Var, layers: &[(Var, Var)]) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            dims2(self.value(w), "mlp_forward")?;
            h = self.matmul(h, w)?;
            h = self.add_bias(h, b)?;
            if i + 1 < layers.len() {
                h = self.relu(h);
            }
        }
        Ok(h)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
