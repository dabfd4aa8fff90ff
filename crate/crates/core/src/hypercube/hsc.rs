//! HSC cube container.
//!
//! ```text
//! "HSC1" | u8 stage | u8 reserved | u16 bands | u32 height | u32 width | f32 payload
//! ```
//!
//! All integers and floats are little-endian. The payload is band-major, then
//! row-major within each band (the in-memory layout is pixel-interleaved).

use std::fs;
use std::path::Path;

use super::pgm::write_atomic;
use super::{HyperCube, Stage};
use crate::error::{bail, Result};

const MAGIC: &[u8; 4] = b"HSC1";
const HEADER_LEN: usize = 16;

pub fn write_cube(cube: &HyperCube) -> Vec<u8> {
    let (h, w, b) = (cube.height(), cube.width(), cube.bands());
    let mut out = Vec::with_capacity(HEADER_LEN + h * w * b * 4);
    out.extend_from_slice(MAGIC);
    out.push(cube.stage().code());
    out.push(0);
    out.extend_from_slice(&(b as u16).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for band in 0..b {
        for px in cube.pixels() {
            out.extend_from_slice(&px[band].to_le_bytes());
        }
    }
    out
}

pub fn read_cube(bytes: &[u8]) -> Result<HyperCube> {
    if bytes.len() < HEADER_LEN {
        bail!(Format, "HSC header truncated ({} bytes)", bytes.len());
    }
    if &bytes[..4] != MAGIC {
        bail!(Format, "bad HSC magic {:?}", String::from_utf8_lossy(&bytes[..4]));
    }
    let stage = Stage::from_code(bytes[4])
        .ok_or_else(|| crate::Error::Format(format!("unknown stage code {}", bytes[4])))?;
    let bands = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let values = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(bands))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| crate::Error::Format("HSC dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != values * 4 {
        bail!(
            Format,
            "HSC payload is {} bytes, header implies {}",
            payload.len(),
            values * 4
        );
    }
    let plane = height * width;
    let mut data = vec![0f32; values];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let (band, px) = (i / plane, i % plane);
        data[px * bands + band] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    HyperCube::new(height, width, bands, data, stage)
        .map_err(|e| crate::Error::Format(e.to_string()))
}

pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    if cube.bands() > u16::MAX as usize
        || cube.height() > u32::MAX as usize
        || cube.width() > u32::MAX as usize
    {
        bail!(Format, "cube dimensions exceed HSC header range");
    }
    write_atomic(path.as_ref(), &write_cube(cube))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    read_cube(&fs::read(path)?)
}
