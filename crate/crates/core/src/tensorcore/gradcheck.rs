//! Central finite differences, the independent oracle for analytic gradients.

use super::Tensor;

/// Relative error with a floor on the denominator so that vanishing gradients
/// are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` at `x` along each flat coordinate in `indices`.
pub fn numeric_grad(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    indices: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error between `analytic` and the finite-difference gradient
/// over `indices`.
pub fn max_rel_err(
    f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    indices: &[usize],
    h: f64,
) -> f64 {
    let numeric = numeric_grad(f, x, indices, h);
    indices
        .iter()
        .zip(numeric)
        .map(|(&i, n)| rel_err(analytic.data()[i], n))
        .fold(0.0, f64::max)
}

/// Up to `count` evenly spread flat indices of a tensor with `len` values.
pub fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    (0..count).map(|k| k * len / count + (k * 7919) % (len / count).max(1)).collect()
}
