//! MVCN noise files: `"MVCN"`, then little-endian `u32` width, height and
//! channel count, then planar little-endian `f32` values.

use std::path::Path;

use super::NoiseImage;
use crate::error::{Error, Result};

pub const NOISE_MAGIC: &[u8; 4] = b"MVCN";
const HEADER_LEN: usize = 16;

pub fn encode_mvcn(image: &NoiseImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * image.data.len());
    out.extend_from_slice(NOISE_MAGIC);
    out.extend_from_slice(&image.width.to_le_bytes());
    out.extend_from_slice(&image.height.to_le_bytes());
    out.extend_from_slice(&image.channels.to_le_bytes());
    for v in &image.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_mvcn(bytes: &[u8], path: &Path) -> Result<NoiseImage> {
    let err = |offset: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != NOISE_MAGIC {
        return Err(err(0, "bad magic, expected MVCN"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (width, height, channels) = (word(4), word(8), word(12));
    let count = width as u64 * height as u64 * channels as u64;
    let expected = HEADER_LEN as u64 + 4 * count;
    if bytes.len() as u64 != expected {
        return Err(err(
            bytes.len().min(expected as usize),
            &format!(
                "payload size mismatch: file has {} bytes, header implies {expected}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(NoiseImage {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_mvcn(path: &Path, image: &NoiseImage) -> Result<()> {
    std::fs::write(path, encode_mvcn(image)).map_err(|e| Error::io(path, e))
}

pub fn read_mvcn(path: &Path) -> Result<NoiseImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mvcn(&bytes, path)
}
