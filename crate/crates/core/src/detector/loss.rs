//! Fused loss ops. Both reduce to a scalar and keep their targets in the op.

use crate::error::{Error, Result};
use crate::tensorcore::{Backward, Tape, Tensor, Var};

/// Floor applied to probabilities inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 2.0, beta: 4.0 }
    }
}

/// Per-term coefficients of one `(pixel, class)` entry: the loss value and its
/// derivatives with respect to `log p` and `log (1 - p)`.
fn focal_term(lp: f64, lq: f64, y: f64, fp: FocalParams) -> (f64, f64, f64) {
    let floor = LOG_EPS.ln();
    let (lp_c, lq_c) = (lp.max(floor), lq.max(floor));
    // clamped logs carry no gradient
    let (dp, dq) = ((lp >= floor) as u8 as f64, (lq >= floor) as u8 as f64);
    let (p, q) = (lp.exp(), lq.exp());
    if y == 1.0 {
        let qa = q.powf(fp.alpha);
        (-qa * lp_c, -qa * dp, -fp.alpha * qa * lp_c)
    } else {
        let w = (1.0 - y).powf(fp.beta);
        let pa = p.powf(fp.alpha);
        (-w * pa * lq_c, -w * fp.alpha * pa * lq_c, -w * pa * dq)
    }
}

/// Log-probabilities of one softmax row, and for each foreground class `c`
/// the log of `1 - p_c` summed from the other entries.
fn log_probs(z: &[f64], lp: &mut [f64], lq: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for (o, v) in lp.iter_mut().zip(z) {
        *o = v - lse;
    }
    for c in 1..z.len() {
        let others = z.iter().enumerate().filter(|&(k, _)| k != c).map(|(_, v)| (v - m).exp()).sum::<f64>();
        lq[c] = m + others.ln() - lse;
    }
}

struct Focal {
    targets: Vec<f64>,
    valid: Vec<bool>,
    params: FocalParams,
}

impl Focal {
    fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Loss and, if `grad` is given, `d loss / d logits` scaled by it.
    fn run(&self, logits: &Tensor, grad: Option<f64>) -> (f64, Option<Tensor>) {
        let k = logits.shape()[1];
        let c = k - 1;
        let n = self.count();
        if n == 0 {
            return (0.0, grad.map(|_| Tensor::zeros(logits.shape())));
        }
        let norm = 1.0 / n as f64;
        let mut out = grad.map(|_| Tensor::zeros(logits.shape()));
        let (mut lp, mut lq) = (vec![0.0; k], vec![0.0; k]);
        let mut total = 0.0;
        for (i, _) in self.valid.iter().enumerate().filter(|(_, &v)| v) {
            let z = &logits.data()[i * k..(i + 1) * k];
            log_probs(z, &mut lp, &mut lq);
            for cls in 1..k {
                let y = self.targets[i * c + cls - 1];
                let (l, a, b) = focal_term(lp[cls], lq[cls], y, self.params);
                total += l;
                if let (Some(g), Some(out)) = (grad, out.as_mut()) {
                    let row = &mut out.data_mut()[i * k..(i + 1) * k];
                    let q = lq[cls].exp();
                    for (j, r) in row.iter_mut().enumerate() {
                        let pj = lp[j].exp();
                        let dlp = if j == cls { 1.0 - pj } else { -pj };
                        let dlq = if j == cls { -pj } else { pj / q - pj };
                        *r += g * norm * (a * dlp + b * dlq);
                    }
                }
            }
        }
        (total * norm, out)
    }
}

impl Backward for Focal {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        vec![self.run(x[0], Some(g.data()[0])).1]
    }
}

struct L1 {
    target: Vec<f64>,
    valid: Vec<bool>,
}

impl L1 {
    fn norm(&self, width: usize) -> f64 {
        let n = self.valid.iter().filter(|&&v| v).count();
        if n == 0 {
            0.0
        } else {
            1.0 / (n * width) as f64
        }
    }
}

impl Backward for L1 {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let w = x[0].shape()[1];
        let s = g.data()[0] * self.norm(w);
        let mut out = Tensor::zeros(x[0].shape());
        for (i, _) in self.valid.iter().enumerate().filter(|(_, &v)| v) {
            for j in i * w..(i + 1) * w {
                let d = x[0].data()[j] - self.target[j];
                out.data_mut()[j] = if d > 0.0 {
                    s
                } else if d < 0.0 {
                    -s
                } else {
                    0.0
                };
            }
        }
        vec![Some(out)]
    }
}

fn check_rows(op: &'static str, t: &Tensor, rows: usize, min_cols: usize) -> Result<()> {
    if t.rank() != 2 || t.shape()[0] != rows || t.shape()[1] < min_cols {
        return Err(Error::shape(op, &[rows, min_cols], t.shape()));
    }
    Ok(())
}

impl Tape {
    /// Penalty-reduced focal loss on softmax probabilities. `logits` is
    /// `[P, C + 1]` with the background in column 0; `targets` holds
    /// `[P * C]` heatmap values. The sum over valid pixels and foreground
    /// classes is divided by the number of valid pixels.
    pub fn focal_loss(&mut self, logits: Var, targets: &[f64], valid: &[bool], params: FocalParams) -> Result<Var> {
        let x = self.value(logits);
        check_rows("focal_loss", x, valid.len(), 2)?;
        let c = x.shape()[1] - 1;
        if targets.len() != valid.len() * c {
            return Err(Error::shape("focal_loss targets", &[valid.len() * c], &[targets.len()]));
        }
        let op = Focal {
            targets: targets.to_vec(),
            valid: valid.to_vec(),
            params,
        };
        let value = op.run(x, None).0;
        Ok(self.record(Tensor::scalar(value), &[logits], Box::new(op)))
    }

    /// Mean absolute error over the rows flagged in `valid` and all columns;
    /// zero when no row is valid.
    pub fn l1_loss(&mut self, pred: Var, target: &[f64], valid: &[bool]) -> Result<Var> {
        let x = self.value(pred);
        check_rows("l1_loss", x, valid.len(), 1)?;
        if target.len() != x.len() {
            return Err(Error::shape("l1_loss target", x.shape(), &[target.len()]));
        }
        let w = x.shape()[1];
        let op = L1 {
            target: target.to_vec(),
            valid: valid.to_vec(),
        };
        let mut sum = 0.0;
        for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
            for j in i * w..(i + 1) * w {
                sum += (x.data()[j] - target[j]).abs();
            }
        }
        let value = sum * op.norm(w);
        Ok(self.record(Tensor::scalar(value), &[pred], Box::new(op)))
    }
}

/// Row-wise softmax of `[P, K]` logits.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}
