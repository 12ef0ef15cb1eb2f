//! Depth-image files.
//!
//! Layout, little-endian: `"DPTH"` | u32 H | u32 W | H·W f32, row-major.

use std::fs;
use std::path::Path;

use crate::geometry::DepthImage;
use crate::{Error, Result};

pub const DPTH_MAGIC: &[u8; 4] = b"DPTH";

pub fn encode_depth(img: &DepthImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.pixels.len() * 4);
    out.extend_from_slice(DPTH_MAGIC);
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    for v in &img.pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthImage> {
    if bytes.len() < 12 {
        return Err(Error::format(bytes.len(), "truncated depth header"));
    }
    if &bytes[..4] != DPTH_MAGIC {
        return Err(Error::format(0, "bad depth magic"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::format(4, "depth image size overflows"))?;
    if bytes.len() < need {
        return Err(Error::format(bytes.len(), format!("truncated: need {need} bytes")));
    }
    let mut img = DepthImage::zeros(h, w);
    for (k, v) in img.pixels.iter_mut().enumerate() {
        let off = 12 + k * 4;
        let x = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::format(off, format!("depth value {x} outside [0, 1]")));
        }
        *v = x;
    }
    Ok(img)
}

pub fn write_depth(path: &Path, img: &DepthImage) -> Result<()> {
    fs::write(path, encode_depth(img)).map_err(|e| Error::io(path, e))
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    decode_depth(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
