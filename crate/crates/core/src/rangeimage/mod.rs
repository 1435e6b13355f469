//! The H×W range image: per-pixel spherical coordinates, features and
//! validity, plus the validity-aware sampling layers and the RIMG file format.

mod histogram;
mod io;
mod sampling;

pub use histogram::{collect_delta_r, collect_delta_r_histogram, quantile_buckets};
pub use io::{decode_rimg, encode_rimg, read_rimg, write_rimg, RIMG_MAGIC, RIMG_VERSION};
pub use sampling::{
    downsample_geometry, downsample_with, smart_downsample, smart_upsample, upsample_features, SamplingMode,
    SamplingRecord,
};

use crate::error::{Error, Result};
use crate::geometry::{spherical_to_cartesian, CartesianVec3, SphericalCoord};

#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    height: usize,
    width: usize,
    channels: usize,
    coords: Vec<SphericalCoord>,
    /// `height * width * channels`, channels fastest.
    features: Vec<f64>,
    mask: Vec<bool>,
}

impl RangeImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        coords: Vec<SphericalCoord>,
        features: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n = height * width;
        if coords.len() != n || mask.len() != n || features.len() != n * channels {
            return Err(Error::Contract(format!(
                "range image {height}x{width}x{channels}: got {} coords, {} mask, {} features",
                coords.len(),
                mask.len(),
                features.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            coords,
            features,
            mask,
        })
    }

    /// All-invalid image with zero coordinates and features.
    pub fn empty(height: usize, width: usize, channels: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            channels,
            coords: vec![SphericalCoord::default(); n],
            features: vec![0.0; n * channels],
            mask: vec![false; n],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn coords(&self) -> &[SphericalCoord] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [SphericalCoord] {
        &mut self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn pixel_features(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Sensor-frame 3D position of every pixel (meaningful where valid).
    pub fn points(&self) -> Vec<CartesianVec3> {
        self.coords.iter().map(|&c| spherical_to_cartesian(c)).collect()
    }

    /// Enforces the invalid-pixel convention: zero range and zero features.
    pub fn clear_invalid(&mut self) {
        for i in 0..self.pixels() {
            if !self.mask[i] {
                self.coords[i].r = 0.0;
                self.features[i * self.channels..(i + 1) * self.channels].fill(0.0);
            }
        }
    }

    /// Copy with every coordinate and feature rounded to `f32`, the precision
    /// stored in RIMG files.
    pub fn to_f32_precision(&self) -> Self {
        let q = |v: f64| v as f32 as f64;
        let mut out = self.clone();
        for c in &mut out.coords {
            *c = SphericalCoord::new(q(c.theta), q(c.phi), q(c.r));
        }
        for f in &mut out.features {
            *f = q(*f);
        }
        out
    }
}
