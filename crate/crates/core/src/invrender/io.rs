//! Optimization artifacts.
//!
//! Checkpoint layout (little-endian): `"MVCK"`, `u32` version 1, `u64` step,
//! then for albedo, roughness and normal in that order: `u32` width, height,
//! channels, followed by the parameter, first-moment and second-moment
//! arrays as `f64`.

use std::fmt::Write as _;
use std::path::Path;

use super::{LatentMaterial, OptimState, StepLog};
use crate::error::{Error, Result};
use crate::render::io::{write_linear_png, write_pfm};
use crate::render::{Image, Material, Texture2D};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MVCK";
const VERSION: u32 = 1;

/// `step,loss,view_0,...`; views outside a step's batch are left empty.
pub fn loss_csv(history: &[StepLog], views: usize) -> String {
    let mut out = String::from("step,loss");
    for v in 0..views {
        let _ = write!(out, ",view_{v}");
    }
    out.push('\n');
    for log in history {
        let _ = write!(out, "{},{:e}", log.step, log.loss);
        let mut row = vec![String::new(); views];
        for &(v, l) in &log.views {
            if v < views {
                row[v] = format!("{l:e}");
            }
        }
        for cell in row {
            out.push(',');
            out.push_str(&cell);
        }
        out.push('\n');
    }
    out
}

fn texture_image(t: &Texture2D) -> Image {
    Image {
        width: t.width,
        height: t.height,
        channels: t.channels,
        data: t.data.clone(),
    }
}

/// Albedo as linear PNG, normals as `(n + 1) / 2` PNG, roughness as PFM.
pub fn write_material(dir: &Path, m: &Material) -> Result<[std::path::PathBuf; 3]> {
    let albedo = dir.join("albedo.png");
    let normal = dir.join("normal.png");
    let roughness = dir.join("roughness.pfm");
    write_linear_png(&albedo, &texture_image(&m.albedo))?;
    let mut n = texture_image(&m.normal);
    n.data.iter_mut().for_each(|x| *x = (*x + 1.0) * 0.5);
    write_linear_png(&normal, &n)?;
    write_pfm(&roughness, &texture_image(&m.roughness))?;
    Ok([albedo, roughness, normal])
}

pub fn encode_checkpoint(state: &OptimState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    let parts = |l: &LatentMaterial| [l.albedo.clone(), l.roughness.clone(), l.normal.clone()];
    let (p, m, v) = (parts(&state.latent), parts(&state.m), parts(&state.v));
    for k in 0..3 {
        for d in [p[k].width, p[k].height, p[k].channels] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for arr in [&p[k].data, &m[k].data, &v[k].data] {
            for x in arr.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<OptimState> {
    let err = |offset: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.to_string(),
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<(usize, &[u8])> {
        if pos + n > bytes.len() {
            return Err(err(pos, "truncated checkpoint"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok((pos - n, s))
    };
    if take(4)?.1 != CHECKPOINT_MAGIC {
        return Err(err(0, "bad magic, expected MVCK"));
    }
    let (vo, v) = take(4)?;
    if u32::from_le_bytes(v.try_into().unwrap()) != VERSION {
        return Err(err(vo, "unsupported checkpoint version"));
    }
    let step = u64::from_le_bytes(take(8)?.1.try_into().unwrap());
    let mut textures: Vec<[Texture2D; 3]> = Vec::new();
    for _ in 0..3 {
        let mut dims = [0u32; 3];
        for d in dims.iter_mut() {
            *d = u32::from_le_bytes(take(4)?.1.try_into().unwrap());
        }
        let len = dims.iter().map(|&d| d as usize).product::<usize>();
        let mut arrays = Vec::new();
        for _ in 0..3 {
            let (_, raw) = take(len * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(Texture2D {
                width: dims[0],
                height: dims[1],
                channels: dims[2],
                data,
            });
        }
        textures.push(arrays.try_into().unwrap());
    }
    if pos != bytes.len() {
        return Err(err(pos, "trailing bytes after checkpoint"));
    }
    let pick = |k: usize| LatentMaterial {
        albedo: textures[0][k].clone(),
        roughness: textures[1][k].clone(),
        normal: textures[2][k].clone(),
    };
    Ok(OptimState {
        latent: pick(0),
        m: pick(1),
        v: pick(2),
        step,
    })
}

pub fn write_checkpoint(path: &Path, state: &OptimState) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<OptimState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
