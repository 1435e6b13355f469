use super::RangeImage;
use crate::error::{Error, Result};
use crate::geometry::SphericalCoord;
use crate::kernels::{Neighborhood, RqBuckets};

/// Bucket width used when the observed range differences are degenerate.
const FALLBACK_WIDTH: f64 = 0.5;

/// Range differences `R[neighbor] - R[center]` over every valid, distinct
/// pixel pair inside the neighborhood.
pub fn collect_delta_r(
    coords: &[SphericalCoord],
    mask: &[bool],
    height: usize,
    width: usize,
    nbhd: Neighborhood,
) -> Vec<f64> {
    let mut out = Vec::new();
    let (rh, rw) = ((nbhd.kh / 2) as isize, (nbhd.kw / 2) as isize);
    for row in 0..height as isize {
        for col in 0..width as isize {
            let c = (row * width as isize + col) as usize;
            if !mask[c] {
                continue;
            }
            for dr in -rh..=rh {
                for dc in -rw..=rw {
                    let (r, q) = (row + dr, col + dc);
                    if (dr, dc) == (0, 0) || r < 0 || q < 0 || r >= height as isize || q >= width as isize {
                        continue;
                    }
                    let n = (r * width as isize + q) as usize;
                    if mask[n] {
                        out.push(coords[n].r - coords[c].r);
                    }
                }
            }
        }
    }
    out
}

/// `k` contiguous buckets with (approximately) equal empirical mass. When the
/// interior quantiles are not strictly increasing the buckets fall back to
/// fixed 0.5 m widths centred on the median.
pub fn quantile_buckets(samples: &mut [f64], k: usize) -> Result<RqBuckets> {
    if k == 0 {
        return Err(Error::Config("range quantization needs at least one bucket".into()));
    }
    if k == 1 || samples.is_empty() {
        return RqBuckets::from_cuts(Vec::new());
    }
    samples.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (samples.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        samples[lo] + (samples[hi] - samples[lo]) * (pos - lo as f64)
    };
    let cuts: Vec<f64> = (1..k).map(|i| quantile(i as f64 / k as f64)).collect();
    if cuts.windows(2).all(|w| w[0] < w[1]) {
        return RqBuckets::from_cuts(cuts);
    }
    let median = quantile(0.5);
    let half = k as f64 / 2.0;
    RqBuckets::from_cuts((1..k).map(|i| median + (i as f64 - half) * FALLBACK_WIDTH).collect())
}

/// Equal-mass range-difference buckets over a stream of images.
pub fn collect_delta_r_histogram<'a>(
    samples: impl IntoIterator<Item = &'a RangeImage>,
    nbhd: Neighborhood,
    k: usize,
) -> Result<RqBuckets> {
    let mut all = Vec::new();
    for img in samples {
        all.extend(collect_delta_r(img.coords(), img.mask(), img.height(), img.width(), nbhd));
    }
    quantile_buckets(&mut all, k)
}
