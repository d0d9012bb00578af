//! Image files. LDR images are 8-bit PNG with a 2.2 gamma applied after
//! tonemapping; texture PNGs store values linearly (`byte / 255`). HDR
//! images and scalar textures are little-endian PFM.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::Image;
use crate::error::{Error, Result};

pub const GAMMA: f64 = 2.2;

/// 8-bit code of a tonemapped value.
pub fn encode_ldr(t: f64) -> u8 {
    (t.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

pub fn decode_ldr(b: u8) -> f64 {
    (b as f64 / 255.0).powf(GAMMA)
}

/// Range of tonemapped values that encode to `b`.
pub fn ldr_interval(b: u8) -> (f64, f64) {
    let lo = ((b as f64 - 0.5).max(0.0) / 255.0).powf(GAMMA);
    let hi = ((b as f64 + 0.5).min(255.0) / 255.0).powf(GAMMA);
    (lo, hi)
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_bytes(path: &Path, width: u32, height: u32, channels: u32, bytes: Vec<u8>) -> Result<()> {
    let res = match channels {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(width, height, bytes).map(|b| b.save(path)),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(width, height, bytes).map(|b| b.save(path)),
        c => {
            return Err(Error::invalid(format!(
                "PNG output needs 1 or 3 channels, got {c}"
            )))
        }
    };
    res.expect("buffer size matches dimensions")
        .map_err(|e| image_err(path, e))
}

fn read_bytes(path: &Path) -> Result<(u32, u32, u32, Vec<u8>)> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        e => image_err(path, e),
    })?;
    let channels = if img.color().channel_count() == 1 {
        1
    } else {
        3
    };
    let (w, h) = (img.width(), img.height());
    let bytes = if channels == 1 {
        img.into_luma8().into_raw()
    } else {
        img.into_rgb8().into_raw()
    };
    Ok((w, h, channels, bytes))
}

/// Writes tonemapped values with gamma encoding.
pub fn write_ldr_png(path: &Path, image: &Image) -> Result<()> {
    let bytes = image.data.iter().map(|&t| encode_ldr(t)).collect();
    write_bytes(path, image.width, image.height, image.channels, bytes)
}

/// Reads a gamma-encoded PNG back into tonemapped values and returns the
/// raw codes alongside.
pub fn read_ldr_png(path: &Path) -> Result<(Image, Vec<u8>)> {
    let (width, height, channels, bytes) = read_bytes(path)?;
    let data = bytes.iter().map(|&b| decode_ldr(b)).collect();
    Ok((
        Image {
            width,
            height,
            channels,
            data,
        },
        bytes,
    ))
}

pub fn write_linear_png(path: &Path, image: &Image) -> Result<()> {
    let bytes = image
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_bytes(path, image.width, image.height, image.channels, bytes)
}

pub fn read_linear_png(path: &Path) -> Result<Image> {
    let (width, height, channels, bytes) = read_bytes(path)?;
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Image {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode_pfm(image: &Image) -> Result<Vec<u8>> {
    let tag = match image.channels {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::invalid(format!(
                "PFM needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    let row = (image.width * image.channels) as usize;
    for y in (0..image.height as usize).rev() {
        for v in &image.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Image> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let mut pos = 0;
    let mut token = || -> Result<(usize, String)> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err(start, "truncated header".into()));
        }
        let s = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1;
        Ok((start, s))
    };
    let (_, tag) = token()?;
    let channels = match tag.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(err(0, format!("bad PFM tag {tag:?}"))),
    };
    let mut num = |what: &str| -> Result<(usize, String)> {
        let (o, s) = token()?;
        if s.parse::<f64>().is_err() {
            return Err(err(o, format!("bad {what} {s:?}")));
        }
        Ok((o, s))
    };
    let (wo, w) = num("width")?;
    let (ho, h) = num("height")?;
    let (so, scale) = num("scale")?;
    let width: u32 = w.parse().map_err(|_| err(wo, format!("bad width {w:?}")))?;
    let height: u32 = h
        .parse()
        .map_err(|_| err(ho, format!("bad height {h:?}")))?;
    let scale: f64 = scale.parse().unwrap();
    if scale == 0.0 {
        return Err(err(so, "zero scale".into()));
    }
    let little = scale < 0.0;
    let body = &bytes[pos.min(bytes.len())..];
    let row = (width * channels) as usize;
    let expected = row * height as usize * 4;
    if body.len() != expected {
        return Err(err(
            pos + body.len().min(expected),
            format!("payload has {} bytes, expected {expected}", body.len()),
        ));
    }
    let mut data = vec![0.0; row * height as usize];
    for (k, c) in body.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = c.try_into().unwrap();
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, col) = (k / row, k % row);
        data[(height as usize - 1 - file_row) * row + col] = v as f64;
    }
    Ok(Image {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_pfm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}
