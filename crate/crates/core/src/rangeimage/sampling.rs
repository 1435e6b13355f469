use super::RangeImage;
use crate::error::{Error, Result};
use crate::geometry::SphericalCoord;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Valid pixel whose range is closest to the mean valid range of the window.
    #[default]
    Smart,
    /// Top-left pixel of every window regardless of validity.
    Fixed,
}

/// What a down-sampling selected, kept so the mirrored up-sampling can restore
/// the high-resolution coordinates and mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingRecord {
    pub stride: (usize, usize),
    pub out_height: usize,
    pub out_width: usize,
    /// Source flat index per output pixel; `None` for windows without a
    /// selectable pixel.
    pub selected: Vec<Option<usize>>,
    pub source_height: usize,
    pub source_width: usize,
    pub source_coords: Vec<SphericalCoord>,
    pub source_mask: Vec<bool>,
}

impl SamplingRecord {
    /// Coordinates and mask of the down-sampled grid.
    pub fn output_geometry(&self) -> (Vec<SphericalCoord>, Vec<bool>) {
        let mut coords = Vec::with_capacity(self.selected.len());
        let mut mask = Vec::with_capacity(self.selected.len());
        let (sh, sw) = self.stride;
        for (o, sel) in self.selected.iter().enumerate() {
            match sel {
                Some(i) => {
                    coords.push(self.source_coords[*i]);
                    mask.push(self.source_mask[*i]);
                }
                None => {
                    // Keep the ray angles of the window's first pixel.
                    let (r, c) = (o / self.out_width * sh, o % self.out_width * sw);
                    let mut p = self.source_coords[r * self.source_width + c];
                    p.r = 0.0;
                    coords.push(p);
                    mask.push(false);
                }
            }
        }
        (coords, mask)
    }
}

/// Selects one source pixel per `stride` window. Images whose size is not a
/// multiple of the stride behave as if padded with invalid pixels on the
/// bottom and right.
pub fn downsample_geometry(
    coords: &[SphericalCoord],
    mask: &[bool],
    height: usize,
    width: usize,
    stride: (usize, usize),
    mode: SamplingMode,
) -> Result<SamplingRecord> {
    let (sh, sw) = stride;
    if sh == 0 || sw == 0 {
        return Err(Error::Contract("sampling stride must be at least 1".into()));
    }
    if coords.len() != height * width || mask.len() != height * width {
        return Err(Error::shape("downsample", &[height * width], &[coords.len(), mask.len()]));
    }
    let (oh, ow) = (height.div_ceil(sh), width.div_ceil(sw));
    let mut selected = Vec::with_capacity(oh * ow);
    for orow in 0..oh {
        for ocol in 0..ow {
            let rows = orow * sh..((orow + 1) * sh).min(height);
            let cols = ocol * sw..((ocol + 1) * sw).min(width);
            let pick = match mode {
                SamplingMode::Fixed => Some(orow * sh * width + ocol * sw),
                SamplingMode::Smart => {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for r in rows.clone() {
                        for c in cols.clone() {
                            let i = r * width + c;
                            if mask[i] {
                                sum += coords[i].r;
                                count += 1;
                            }
                        }
                    }
                    if count == 0 {
                        None
                    } else {
                        let mu = sum / count as f64;
                        let mut best: Option<(usize, f64)> = None;
                        for r in rows.clone() {
                            for c in cols.clone() {
                                let i = r * width + c;
                                if !mask[i] {
                                    continue;
                                }
                                let d = (coords[i].r - mu).powi(2);
                                // strict comparison: lowest flat index wins ties
                                if best.is_none_or(|(_, bd)| d < bd) {
                                    best = Some((i, d));
                                }
                            }
                        }
                        best.map(|(i, _)| i)
                    }
                }
            };
            selected.push(pick);
        }
    }
    Ok(SamplingRecord {
        stride,
        out_height: oh,
        out_width: ow,
        selected,
        source_height: height,
        source_width: width,
        source_coords: coords.to_vec(),
        source_mask: mask.to_vec(),
    })
}

/// Down-samples an image with validity-aware selection.
pub fn smart_downsample(img: &RangeImage, stride_h: usize, stride_w: usize) -> Result<(RangeImage, SamplingRecord)> {
    downsample_with(img, (stride_h, stride_w), SamplingMode::Smart)
}

pub fn downsample_with(
    img: &RangeImage,
    stride: (usize, usize),
    mode: SamplingMode,
) -> Result<(RangeImage, SamplingRecord)> {
    let rec = downsample_geometry(img.coords(), img.mask(), img.height(), img.width(), stride, mode)?;
    let d = img.channels();
    let mut features = vec![0.0; rec.selected.len() * d];
    for (o, sel) in rec.selected.iter().enumerate() {
        if let Some(i) = sel {
            features[o * d..(o + 1) * d].copy_from_slice(img.pixel_features(*i));
        }
    }
    let (coords, mask) = rec.output_geometry();
    let out = RangeImage::new(rec.out_height, rec.out_width, d, coords, features, mask)?;
    Ok((out, rec))
}

/// Scatters low-resolution features back to their recorded source positions;
/// every other position receives zeros.
pub fn upsample_features(low: &[f64], channels: usize, rec: &SamplingRecord) -> Result<Vec<f64>> {
    if low.len() != rec.selected.len() * channels {
        return Err(Error::shape(
            "upsample",
            &[rec.out_height, rec.out_width, channels],
            &[low.len()],
        ));
    }
    let mut out = vec![0.0; rec.source_height * rec.source_width * channels];
    for (o, sel) in rec.selected.iter().enumerate() {
        if let Some(i) = sel {
            out[i * channels..(i + 1) * channels].copy_from_slice(&low[o * channels..(o + 1) * channels]);
        }
    }
    Ok(out)
}

/// Mirror of a down-sampling: coordinates and mask are restored from the
/// record, features land at the recorded positions, zeros elsewhere.
pub fn smart_upsample(img: &RangeImage, rec: &SamplingRecord) -> Result<RangeImage> {
    if img.height() != rec.out_height || img.width() != rec.out_width {
        return Err(Error::Contract(format!(
            "upsample input is {}x{}, record expects {}x{}",
            img.height(),
            img.width(),
            rec.out_height,
            rec.out_width
        )));
    }
    let features = upsample_features(img.features(), img.channels(), rec)?;
    RangeImage::new(
        rec.source_height,
        rec.source_width,
        img.channels(),
        rec.source_coords.clone(),
        features,
        rec.source_mask.clone(),
    )
}
