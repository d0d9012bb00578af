//! Biased scaled dot-product attention.
//!
//! Computes `softmax((Q Kᵀ + B) / √d_k) V` where `B[i, j]` is either 0 or a
//! fixed increment `w` on a sparse set of pairs. [`dense_biased_attention`]
//! is the reference; [`blocked_biased_attention`] streams over key tiles and
//! never holds more than a tile of logits, so the N×N bias is never built.
//!
//! Multi-head use is a loop over independent tensors sharing one provider.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::correspondence::{CorrespondenceSet, LatentGrid};
use crate::error::{Error, Result};


/// Row-major query, key and value matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    n: usize,
    d_k: usize,
    d_v: usize,
}

impl AttentionTensors {
    pub fn new(
        q: Vec<f32>,
        k: Vec<f32>,
        v: Vec<f32>,
        n: usize,
        d_k: usize,
        d_v: usize,
    ) -> Result<Self> {
        if n == 0 || d_k == 0 || d_v == 0 {
            return Err(Error::invalid("attention dimensions must be at least 1"));
        }
        if q.len() != n * d_k || k.len() != n * d_k || v.len() != n * d_v {
            return Err(Error::invalid(format!(
                "tensor sizes {}/{}/{} do not match n={n}, d_k={d_k}, d_v={d_v}",
                q.len(),
                k.len(),
                v.len()
            )));
        }
        if !q.iter().chain(&k).chain(&v).all(|x| x.is_finite()) {
            return Err(Error::invalid(
                "attention tensors contain non-finite values",
            ));
        }
        Ok(Self {
            q,
            k,
            v,
            n,
            d_k,
            d_v,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn q_row(&self, i: usize) -> &[f32] {
        &self.q[i * self.d_k..(i + 1) * self.d_k]
    }

    pub fn k_row(&self, j: usize) -> &[f32] {
        &self.k[j * self.d_k..(j + 1) * self.d_k]
    }

    pub fn v_row(&self, j: usize) -> &[f32] {
        &self.v[j * self.d_v..(j + 1) * self.d_v]
    }

    fn dot(&self, i: usize, j: usize) -> f64 {
        self.q_row(i)
            .iter()
            .zip(self.k_row(j))
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }
}

/// Row-major N×d_v result.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub n: usize,
    pub d_v: usize,
    pub values: Vec<f64>,
    /// Row-major N×N softmax weights, filled by the dense path only.
    pub weights: Option<Vec<f64>>,
}

impl AttentionOutput {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d_v..(i + 1) * self.d_v]
    }

    pub fn weight_row(&self, i: usize) -> Option<&[f64]> {
        self.weights
            .as_ref()
            .map(|w| &w[i * self.n..(i + 1) * self.n])
    }
}

/// Implicit bias matrix.
pub trait BiasProvider: Sync {
    fn bias(&self, i: usize, j: usize) -> f64;

    /// Calls `f(j, b)` for every nonzero entry of row `i` with `j` in `cols`,
    /// in increasing `j`.
    fn for_each_in_row(&self, i: usize, cols: Range<usize>, f: &mut dyn FnMut(usize, f64));
}

/// All-zero bias.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoBias;

impl BiasProvider for NoBias {
    fn bias(&self, _: usize, _: usize) -> f64 {
        0.0
    }

    fn for_each_in_row(&self, _: usize, _: Range<usize>, _: &mut dyn FnMut(usize, f64)) {}
}

/// Bias `w` on the pairs of a correspondence set, zero elsewhere. Rows are
/// stored as sorted column lists indexed by row offsets.
#[derive(Debug, Clone)]
pub struct PairBias {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    w: f64,
}

impl PairBias {
    pub fn new(set: &CorrespondenceSet, w: f64) -> Result<Self> {
        Self::from_sorted_pairs(set.n as usize, set.pairs(), w)
    }

    /// `pairs` must be sorted and unique; `i == j` entries are allowed here
    /// so arbitrary test patterns can be expressed.
    pub fn from_sorted_pairs(n: usize, pairs: &[(u32, u32)], w: f64) -> Result<Self> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::invalid(format!(
                "bias increment must be finite and non-negative, got {w}"
            )));
        }
        if pairs.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::invalid("bias pairs must be strictly sorted"));
        }
        if pairs
            .iter()
            .any(|&(i, j)| i as usize >= n || j as usize >= n)
        {
            return Err(Error::invalid("bias pair index out of range"));
        }
        let mut offsets = vec![0usize; n + 1];
        for &(i, _) in pairs {
            offsets[i as usize + 1] += 1;
        }
        for r in 0..n {
            offsets[r + 1] += offsets[r];
        }
        let cols = pairs.iter().map(|&(_, j)| j).collect();
        Ok(Self {
            n,
            offsets,
            cols,
            w,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Dense N×N copy, for oracles on small inputs.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for &j in self.row(i) {
                b[i * self.n + j as usize] = self.w;
            }
        }
        b
    }
}

impl BiasProvider for PairBias {
    fn bias(&self, i: usize, j: usize) -> f64 {
        if self.row(i).binary_search(&(j as u32)).is_ok() {
            self.w
        } else {
            0.0
        }
    }

    fn for_each_in_row(&self, i: usize, cols: Range<usize>, f: &mut dyn FnMut(usize, f64)) {
        let row = self.row(i);
        let start = row.partition_point(|&j| (j as usize) < cols.start);
        for &j in &row[start..] {
            if j as usize >= cols.end {
                break;
            }
            f(j as usize, self.w);
        }
    }
}

fn kahan_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Reference attention with an explicit row-major N×N bias. Sums are
/// compensated; the returned output carries the full weight matrix.
pub fn dense_biased_attention(t: &AttentionTensors, bias: &[f64]) -> Result<AttentionOutput> {
    let n = t.n;
    if bias.len() != n * n {
        return Err(Error::invalid(format!(
            "dense bias has {} entries, expected {}",
            bias.len(),
            n * n
        )));
    }
    if !bias.iter().all(|b| b.is_finite()) {
        return Err(Error::invalid("dense bias contains non-finite values"));
    }
    let scale = 1.0 / (t.d_k as f64).sqrt();
    let mut values = vec![0.0; n * t.d_v];
    let mut weights = vec![0.0; n * n];
    values
        .par_chunks_mut(t.d_v)
        .zip(weights.par_chunks_mut(n))
        .enumerate()
        .for_each(|(i, (out, w))| {
            for j in 0..n {
                w[j] = (t.dot(i, j) + bias[i * n + j]) * scale;
            }
            let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (mut l, mut lc) = (0.0, 0.0);
            for x in w.iter_mut() {
                *x = (*x - m).exp();
                kahan_add(&mut l, &mut lc, *x);
            }
            let l = l + lc;
            for x in w.iter_mut() {
                *x /= l;
            }
            for (c, o) in out.iter_mut().enumerate() {
                let (mut s, mut sc) = (0.0, 0.0);
                for (j, &p) in w.iter().enumerate() {
                    kahan_add(&mut s, &mut sc, p * t.v_row(j)[c] as f64);
                }
                *o = s + sc;
            }
        });
    Ok(AttentionOutput {
        n,
        d_v: t.d_v,
        values,
        weights: Some(weights),
    })
}

/// Byte accounting for the blocked kernel's auxiliary buffers.
#[derive(Debug, Default)]
pub struct MemoryTracker {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl MemoryTracker {
    pub fn new() -> Self {
        Self::default()
    }

    fn alloc(&self, bytes: usize) {
        let now = self.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn free(&self, bytes: usize) {
        self.current.fetch_sub(bytes, Ordering::SeqCst);
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn current_bytes(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }
}

struct Tracked<'a> {
    buf: Vec<f64>,
    tracker: &'a MemoryTracker,
}

impl<'a> Tracked<'a> {
    fn zeros(len: usize, tracker: &'a MemoryTracker) -> Self {
        tracker.alloc(len * std::mem::size_of::<f64>());
        Self {
            buf: vec![0.0; len],
            tracker,
        }
    }
}

impl Drop for Tracked<'_> {
    fn drop(&mut self) {
        self.tracker
            .free(self.buf.len() * std::mem::size_of::<f64>());
    }
}

/// Blocked attention with the bias evaluated on the fly.
pub fn blocked_biased_attention(
    t: &AttentionTensors,
    provider: &dyn BiasProvider,
    block_size: usize,
) -> Result<AttentionOutput> {
    blocked_biased_attention_tracked(t, provider, block_size, &MemoryTracker::new())
}

/// Fills `tile` (rows × cols, row-major) with scaled biased logits.
fn logit_tile(
    t: &AttentionTensors,
    provider: &dyn BiasProvider,
    rows: Range<usize>,
    cols: Range<usize>,
    scale: f64,
    tile: &mut [f64],
) {
    let width = cols.len();
    for (r, i) in rows.enumerate() {
        let line = &mut tile[r * width..(r + 1) * width];
        for (c, j) in cols.clone().enumerate() {
            line[c] = t.dot(i, j);
        }
        provider.for_each_in_row(i, cols.clone(), &mut |j, b| line[j - cols.start] += b);
        for x in line.iter_mut() {
            *x *= scale;
        }
    }
}

/// Two-pass streaming kernel. The first pass keeps a running maximum and
/// denominator per row; the second accumulates normalized weights times `V`
/// straight into the output. Auxiliary memory is the two per-row vectors
/// plus one `block_size²` tile per worker lane, all reported to `tracker`.
/// Rows are split into contiguous lane ranges and each row is reduced in a
/// fixed key order, so the result does not depend on scheduling.
pub fn blocked_biased_attention_tracked(
    t: &AttentionTensors,
    provider: &dyn BiasProvider,
    block_size: usize,
    tracker: &MemoryTracker,
) -> Result<AttentionOutput> {
    if block_size == 0 {
        return Err(Error::invalid("block size must be at least 1"));
    }
    let n = t.n;
    let d_v = t.d_v;
    let scale = 1.0 / (t.d_k as f64).sqrt();
    let row_blocks = n.div_ceil(block_size);
    let lanes = rayon::current_num_threads().clamp(1, row_blocks);
    let blocks_per_lane = row_blocks.div_ceil(lanes);

    let mut row_max = Tracked::zeros(n, tracker);
    let mut row_sum = Tracked::zeros(n, tracker);
    let mut tiles: Vec<Tracked> = (0..lanes)
        .map(|_| Tracked::zeros(block_size * block_size, tracker))
        .collect();
    let mut values = vec![0.0; n * d_v];

    let lane_rows = blocks_per_lane * block_size;
    row_max
        .buf
        .par_chunks_mut(lane_rows)
        .zip(row_sum.buf.par_chunks_mut(lane_rows))
        .zip(values.par_chunks_mut(lane_rows * d_v))
        .zip(tiles.par_iter_mut())
        .enumerate()
        .for_each(|(lane, (((maxes, sums), out), tile))| {
            let lane_start = lane * lane_rows;
            let tile = &mut tile.buf;
            for b0 in (0..maxes.len()).step_by(block_size) {
                let rows = lane_start + b0..lane_start + (b0 + block_size).min(maxes.len());
                let nr = rows.len();
                let m = &mut maxes[b0..b0 + nr];
                let l = &mut sums[b0..b0 + nr];
                m.fill(f64::NEG_INFINITY);
                l.fill(0.0);
                for c0 in (0..n).step_by(block_size) {
                    let cols = c0..(c0 + block_size).min(n);
                    let nc = cols.len();
                    logit_tile(t, provider, rows.clone(), cols, scale, tile);
                    for r in 0..nr {
                        let line = &tile[r * nc..(r + 1) * nc];
                        let tile_max = line.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let new_max = m[r].max(tile_max);
                        let mut s = l[r] * (m[r] - new_max).exp();
                        for &x in line {
                            s += (x - new_max).exp();
                        }
                        m[r] = new_max;
                        l[r] = s;
                    }
                }
                let o = &mut out[b0 * d_v..(b0 + nr) * d_v];
                for c0 in (0..n).step_by(block_size) {
                    let cols = c0..(c0 + block_size).min(n);
                    let nc = cols.len();
                    logit_tile(t, provider, rows.clone(), cols.clone(), scale, tile);
                    for r in 0..nr {
                        let line = &tile[r * nc..(r + 1) * nc];
                        let orow = &mut o[r * d_v..(r + 1) * d_v];
                        let inv = 1.0 / l[r];
                        for (c, &x) in line.iter().enumerate() {
                            let p = (x - m[r]).exp() * inv;
                            for (acc, &vv) in orow.iter_mut().zip(t.v_row(c0 + c)) {
                                *acc += p * vv as f64;
                            }
                        }
                    }
                }
            }
        });
    drop(tiles);
    Ok(AttentionOutput {
        n,
        d_v,
        values,
        weights: None,
    })
}

/// Softmax weights of one row, computed without the N×N matrix.
pub fn attention_row(
    t: &AttentionTensors,
    provider: &dyn BiasProvider,
    i: usize,
) -> Result<Vec<f64>> {
    if i >= t.n {
        return Err(Error::invalid(format!(
            "row {i} out of range for n={}",
            t.n
        )));
    }
    let scale = 1.0 / (t.d_k as f64).sqrt();
    let mut w = vec![0.0; t.n];
    logit_tile(t, provider, i..i + 1, 0..t.n, scale, &mut w);
    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut l, mut lc) = (0.0, 0.0);
    for x in w.iter_mut() {
        *x = (*x - m).exp();
        kahan_add(&mut l, &mut lc, *x);
    }
    let l = l + lc;
    w.iter_mut().for_each(|x| *x /= l);
    Ok(w)
}

/// One attention row laid out as per-view latent images.
#[derive(Debug, Clone, PartialEq)]
pub struct RowImage {
    pub width: u32,
    pub height: u32,
    /// One row-major `width × height` plane per view.
    pub views: Vec<Vec<f64>>,
}

impl RowImage {
    pub fn total(&self) -> f64 {
        self.views.iter().flatten().sum()
    }

    /// Tiles the views into the grid's rows × cols mosaic.
    pub fn mosaic(&self, grid: &LatentGrid) -> (u32, u32, Vec<f64>) {
        let (mw, mh) = (self.width * grid.cols, self.height * grid.rows);
        let mut out = vec![0.0; (mw * mh) as usize];
        for (v, plane) in self.views.iter().enumerate() {
            let (r, c) = grid.tile_of(v as u32);
            for y in 0..self.height {
                for x in 0..self.width {
                    let dst = (r * self.height + y) * mw + c * self.width + x;
                    out[dst as usize] = plane[(y * self.width + x) as usize];
                }
            }
        }
        (mw, mh, out)
    }
}

pub fn attention_row_image(
    t: &AttentionTensors,
    provider: &dyn BiasProvider,
    i: usize,
    grid: &LatentGrid,
    scale: u32,
) -> Result<RowImage> {
    grid.check_scale(scale)?;
    if grid.len(scale) as usize != t.n {
        return Err(Error::invalid(format!(
            "grid has {} latent pixels at scale {scale} but tensors have n={}",
            grid.len(scale),
            t.n
        )));
    }
    let w = attention_row(t, provider, i)?;
    let (lw, lh) = grid.latent_size(scale);
    let plane = (lw * lh) as usize;
    let views = w.chunks(plane).map(<[f64]>::to_vec).collect();
    Ok(RowImage {
        width: lw,
        height: lh,
        views,
    })
}
