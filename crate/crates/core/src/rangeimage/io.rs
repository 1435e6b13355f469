//! RIMG files.
//!
//! ```text
//! magic    8 bytes "RANGEIMG"
//! version  u32     1
//! flags    u32     0
//! height   u32
//! width    u32
//! channels u32
//! mask     height*width bytes, 0 or 1
//! coords   height*width x (theta, phi, r) f32
//! features height*width x channels f32
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use super::RangeImage;
use crate::error::{Error, Result};
use crate::geometry::SphericalCoord;

pub const RIMG_MAGIC: &[u8; 8] = b"RANGEIMG";
pub const RIMG_VERSION: u32 = 1;

pub fn encode_rimg(img: &RangeImage) -> Vec<u8> {
    let n = img.pixels();
    let mut out = Vec::with_capacity(28 + n * (1 + 12 + 4 * img.channels()));
    out.extend_from_slice(RIMG_MAGIC);
    out.extend_from_slice(&RIMG_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for d in [img.height(), img.width(), img.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend(img.mask().iter().map(|&m| m as u8));
    for c in img.coords() {
        for v in [c.theta, c.phi, c.r] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for &f in img.features() {
        out.extend_from_slice(&(f as f32).to_le_bytes());
    }
    out
}

pub fn decode_rimg(bytes: &[u8]) -> Result<RangeImage> {
    if bytes.len() < 28 {
        return Err(Error::Format("RIMG header truncated".into()));
    }
    if &bytes[..8] != RIMG_MAGIC {
        return Err(Error::Format("not a RIMG file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u32_at(8) as u32;
    if version != RIMG_VERSION {
        return Err(Error::Format(format!("unsupported RIMG version {version}")));
    }
    let (h, w, d) = (u32_at(16), u32_at(20), u32_at(24));
    let n = h * w;
    let expected = 28 + n + 12 * n + 4 * n * d;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "RIMG payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let mut mask = Vec::with_capacity(n);
    for &b in &bytes[28..28 + n] {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            _ => return Err(Error::Format(format!("bad mask byte {b}"))),
        }
    }
    let cbase = 28 + n;
    let coords = (0..n)
        .map(|i| {
            let o = cbase + 12 * i;
            SphericalCoord::new(f32_at(o), f32_at(o + 4), f32_at(o + 8))
        })
        .collect();
    let fbase = cbase + 12 * n;
    let features = (0..n * d).map(|i| f32_at(fbase + 4 * i)).collect();
    RangeImage::new(h, w, d, coords, features, mask)
}

pub fn write_rimg(path: impl AsRef<Path>, img: &RangeImage) -> Result<()> {
    std::fs::write(path, encode_rimg(img))?;
    Ok(())
}

pub fn read_rimg(path: impl AsRef<Path>) -> Result<RangeImage> {
    decode_rimg(&std::fs::read(path)?)
}
