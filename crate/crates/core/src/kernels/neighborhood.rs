use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Encoding, SphericalCoord};
use crate::rangeimage::RangeImage;

const NONE: u32 = u32::MAX;

/// Odd-sized pixel window around each center. Neighbors outside the image are
/// treated as invalid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub kh: usize,
    pub kw: usize,
}

impl Default for Neighborhood {
    fn default() -> Self {
        Self { kh: 3, kw: 3 }
    }
}

impl Neighborhood {
    pub fn new(kh: usize, kw: usize) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!("kernel size {kh}x{kw} must be odd")));
        }
        Ok(Self { kh, kw })
    }

    pub fn size(&self) -> usize {
        self.kh * self.kw
    }

    /// Offset index of `(dr, dc)`; offsets run row-major from `(-kh/2, -kw/2)`.
    pub fn offset_index(&self, dr: isize, dc: isize) -> usize {
        let (rh, rw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        ((dr + rh) * self.kw as isize + (dc + rw)) as usize
    }

    pub fn offset(&self, o: usize) -> (isize, isize) {
        let (rh, rw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        ((o / self.kw) as isize - rh, (o % self.kw) as isize - rw)
    }

    pub fn center(&self) -> usize {
        self.size() / 2
    }
}

/// Neighbor tables and pairwise encodings for one resolution level of one
/// sample. Independent of layer weights, so every layer at that resolution
/// shares it.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelGeometry {
    pub height: usize,
    pub width: usize,
    pub nbhd: Neighborhood,
    pub encoding_mode: Encoding,
    pub coords: Vec<SphericalCoord>,
    pub mask: Vec<bool>,
    /// `[pixels * k]` neighbor flat index, `u32::MAX` outside the image.
    neighbors: Vec<u32>,
    /// `[pixels * k]` center whose offset-`o` neighbor is this pixel.
    reverse: Vec<u32>,
    /// `[pixels * k]` encoding of the neighbor relative to the center; zero
    /// outside the image.
    encoding: Vec<[f64; 3]>,
}

impl LevelGeometry {
    pub fn new(
        coords: Vec<SphericalCoord>,
        mask: Vec<bool>,
        height: usize,
        width: usize,
        nbhd: Neighborhood,
        encoding_mode: Encoding,
    ) -> Result<Self> {
        let n = height * width;
        if coords.len() != n || mask.len() != n {
            return Err(Error::shape("level geometry", &[n], &[coords.len(), mask.len()]));
        }
        let k = nbhd.size();
        let mut neighbors = vec![NONE; n * k];
        let mut reverse = vec![NONE; n * k];
        let mut encoding = vec![[0.0; 3]; n * k];
        for row in 0..height {
            for col in 0..width {
                let p = row * width + col;
                for o in 0..k {
                    let (dr, dc) = nbhd.offset(o);
                    let (r, c) = (row as isize + dr, col as isize + dc);
                    if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
                        continue;
                    }
                    let q = r as usize * width + c as usize;
                    neighbors[p * k + o] = q as u32;
                    reverse[q * k + o] = p as u32;
                    encoding[p * k + o] = encoding_mode.encode(coords[p], coords[q]);
                }
            }
        }
        Ok(Self {
            height,
            width,
            nbhd,
            encoding_mode,
            coords,
            mask,
            neighbors,
            reverse,
            encoding,
        })
    }

    pub fn from_image(img: &RangeImage, nbhd: Neighborhood, encoding: Encoding) -> Result<Self> {
        Self::new(
            img.coords().to_vec(),
            img.mask().to_vec(),
            img.height(),
            img.width(),
            nbhd,
            encoding,
        )
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn k(&self) -> usize {
        self.nbhd.size()
    }

    #[inline]
    pub fn neighbor(&self, p: usize, o: usize) -> Option<usize> {
        let q = self.neighbors[p * self.k() + o];
        (q != NONE).then_some(q as usize)
    }

    /// Center `p` such that `neighbor(p, o) == q`.
    #[inline]
    pub fn center_of(&self, q: usize, o: usize) -> Option<usize> {
        let p = self.reverse[q * self.k() + o];
        (p != NONE).then_some(p as usize)
    }

    /// Validity product of the pair; false outside the image.
    #[inline]
    pub fn delta(&self, p: usize, o: usize) -> bool {
        self.neighbor(p, o).is_some_and(|q| self.mask[p] && self.mask[q])
    }

    #[inline]
    pub fn encoding(&self, p: usize, o: usize) -> &[f64; 3] {
        &self.encoding[p * self.k() + o]
    }

    #[inline]
    pub fn range_diff(&self, p: usize, q: usize) -> f64 {
        self.coords[q].r - self.coords[p].r
    }
}
