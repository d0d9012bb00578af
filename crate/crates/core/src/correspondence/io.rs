//! MVCB correspondence files, one per scale. Little-endian:
//! `"MVCB"`, `u32` version, `u32` scale, `u32` N, `u64` pair count, then
//! `(u32 i, u32 j)` pairs sorted by `(i, j)`.

use std::path::Path;

use super::CorrespondenceSet;
use crate::error::{Error, Result};

pub const BIAS_MAGIC: &[u8; 4] = b"MVCB";
pub const BIAS_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

pub fn encode_mvcb(set: &CorrespondenceSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * set.len());
    out.extend_from_slice(BIAS_MAGIC);
    out.extend_from_slice(&BIAS_VERSION.to_le_bytes());
    out.extend_from_slice(&set.scale.to_le_bytes());
    out.extend_from_slice(&set.n.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for &(i, j) in set.pairs() {
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(&j.to_le_bytes());
    }
    out
}

pub fn decode_mvcb(bytes: &[u8], path: &Path) -> Result<CorrespondenceSet> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    if &bytes[0..4] != BIAS_MAGIC {
        return Err(err(0, "bad magic, expected MVCB".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != BIAS_VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let scale = u32_at(8);
    let n = u32_at(12);
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = HEADER_LEN as u64 + 8 * count;
    if bytes.len() as u64 != expected {
        return Err(err(
            bytes.len().min(expected as usize),
            format!(
                "size mismatch: {} bytes, header implies {expected}",
                bytes.len()
            ),
        ));
    }
    let mut pairs = Vec::with_capacity(count as usize);
    let mut prev: Option<(u32, u32)> = None;
    for k in 0..count as usize {
        let o = HEADER_LEN + 8 * k;
        let pair = (u32_at(o), u32_at(o + 4));
        if pair.0 >= n || pair.1 >= n || pair.0 == pair.1 {
            return Err(err(o, format!("invalid pair {pair:?} for N = {n}")));
        }
        if prev.is_some_and(|p| p >= pair) {
            return Err(err(o, "pairs not strictly sorted".into()));
        }
        prev = Some(pair);
        pairs.push(pair);
    }
    Ok(CorrespondenceSet::from_sorted_unchecked(scale, n, pairs))
}

pub fn write_mvcb(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    std::fs::write(path, encode_mvcb(set)).map_err(|e| Error::io(path, e))
}

pub fn read_mvcb(path: &Path) -> Result<CorrespondenceSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mvcb(&bytes, path)
}
