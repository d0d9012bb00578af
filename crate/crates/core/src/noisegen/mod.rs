//! View-correlated diffusion seed noise.
//!
//! A standard normal field is anchored in the UV space of the asset. Every
//! latent pixel is split into `s x s` subpixels whose corners are projected
//! into UV space; the field is sampled at each projected subpixel center and
//! averaged with the projected subpixel areas as weights. The sum is divided
//! by `sqrt(sum_i A_i^2 (1 + Cov_i))` with `Cov_i = max(A_texel / A_i - 1, 0)`,
//! which restores unit variance when several subpixels land in one texel.
//! Pixels whose UV footprint shrinks toward a single texel are blended with
//! independent white noise so that no texel is smeared over several pixels.

mod io;
mod philox;
mod stats;

use rayon::prelude::*;

pub use io::{read_mvcn, write_mvcn, NOISE_MAGIC};
pub use philox::{philox4x32_10, standard_normal};
pub use stats::{noise_statistics, NoiseStatistics};

use crate::error::{Error, Result};
use crate::geometry::{rasterize_gbuffer, Camera, GBuffer, Scene};
use crate::math::{smoothstep, Vec2};

const STREAM_TEXTURE: u32 = 0;
const STREAM_WHITE: u32 = 1;

/// UV-anchored i.i.d. standard normal field. Values are computed on demand
/// from `(seed, texel index)`, so lookups are order independent and the
/// texture never has to be stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseTexture {
    seed: u64,
    resolution: u32,
}

impl NoiseTexture {
    pub const MIN_RESOLUTION: u32 = 64;
    pub const MAX_RESOLUTION: u32 = 8192;

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    /// UV area of one texel.
    pub fn texel_area(&self) -> f64 {
        let r = self.resolution as f64;
        1.0 / (r * r)
    }

    #[inline]
    pub fn value(&self, texel: u64) -> f64 {
        standard_normal(
            [texel as u32, (texel >> 32) as u32, STREAM_TEXTURE, 0],
            philox::seed_key(self.seed),
        )
    }

    /// Nearest texel to `uv` with clamp addressing; row 0 is `v = 0`.
    #[inline]
    pub fn texel_index(&self, uv: Vec2) -> u64 {
        let r = self.resolution as f64;
        let max = self.resolution as i64 - 1;
        let x = ((uv.x * r).floor() as i64).clamp(0, max) as u64;
        let y = ((uv.y * r).floor() as i64).clamp(0, max) as u64;
        y * self.resolution as u64 + x
    }

    #[inline]
    pub fn sample_nearest(&self, uv: Vec2) -> f64 {
        self.value(self.texel_index(uv))
    }

    /// All texel values in row-major order.
    pub fn materialize(&self) -> Vec<f32> {
        let n = self.resolution as u64 * self.resolution as u64;
        (0..n)
            .into_par_iter()
            .map(|k| self.value(k) as f32)
            .collect()
    }
}

pub fn sample_noise_texture(seed: u64, resolution: u32) -> Result<NoiseTexture> {
    if !(NoiseTexture::MIN_RESOLUTION..=NoiseTexture::MAX_RESOLUTION).contains(&resolution) {
        return Err(Error::invalid(format!(
            "noise texture resolution {resolution} outside [{}, {}]",
            NoiseTexture::MIN_RESOLUTION,
            NoiseTexture::MAX_RESOLUTION
        )));
    }
    Ok(NoiseTexture { seed, resolution })
}

/// Independent standard normal keyed on `(seed, view, pixel)`, separate from
/// the texture stream.
#[inline]
pub fn white_noise(seed: u64, view: u32, pixel: u32) -> f64 {
    standard_normal([pixel, view, STREAM_WHITE, 0], philox::seed_key(seed))
}

/// Seed used for latent channel `channel`.
#[inline]
pub fn channel_seed(seed: u64, channel: u32) -> u64 {
    seed ^ channel as u64
}

/// One subpixel's contribution: footprint area `A_i`, sampled value `f_i`
/// and the texel it was sampled from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootprintSample {
    pub area: f64,
    pub value: f64,
    pub texel: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelFootprint {
    pub samples: Vec<FootprintSample>,
    pub texel_area: f64,
}

impl PixelFootprint {
    pub fn total_area(&self) -> f64 {
        self.samples.iter().map(|s| s.area).sum()
    }

    /// `Cov_i = max(A_texel / A_i - 1, 0)`, and 0 for degenerate subpixels.
    pub fn covariance(&self, i: usize) -> f64 {
        covariance_estimate(self.samples[i].area, self.texel_area)
    }

    pub fn is_degenerate(&self) -> bool {
        self.samples.iter().all(|s| s.area == 0.0)
    }
}

#[inline]
pub fn covariance_estimate(area: f64, texel_area: f64) -> f64 {
    if area > 0.0 {
        (texel_area / area - 1.0).max(0.0)
    } else {
        0.0
    }
}

/// Area-weighted sum `sum_i f_i A_i` over the covered subpixels of pixel `(x, y)`.
pub fn accumulate_footprint(
    texture: &NoiseTexture,
    gbuffer: &GBuffer,
    x: u32,
    y: u32,
) -> Result<(f64, PixelFootprint)> {
    if !gbuffer.covered(x, y) {
        return Err(Error::invalid(format!("pixel ({x}, {y}) is not covered")));
    }
    let samples: Vec<FootprintSample> = gbuffer
        .subpixels(x, y)
        .iter()
        .flatten()
        .map(|s| {
            let texel = texture.texel_index(s.uv_center);
            FootprintSample {
                area: s.area,
                value: texture.value(texel),
                texel,
            }
        })
        .collect();
    let raw = samples.iter().map(|s| s.value * s.area).sum();
    Ok((
        raw,
        PixelFootprint {
            samples,
            texel_area: texture.texel_area(),
        },
    ))
}

/// `sqrt(sum_i A_i^2 (1 + Cov_i))`; `None` when every `A_i` is zero.
pub fn normalization_factor(footprint: &PixelFootprint) -> Option<f64> {
    normalization_from_areas(
        footprint.samples.iter().map(|s| s.area),
        footprint.texel_area,
    )
}

fn normalization_from_areas(areas: impl Iterator<Item = f64>, texel_area: f64) -> Option<f64> {
    let sum: f64 = areas
        .filter(|&a| a > 0.0)
        .map(|a| a * a * (1.0 + covariance_estimate(a, texel_area)))
        .sum();
    (sum > 0.0).then(|| sum.sqrt())
}

/// Blend weight of the projected noise: 0 at or below one texel of footprint,
/// 1 from four texels on, smoothstep in between.
#[inline]
pub fn safeguard_alpha(total_area: f64, texel_area: f64) -> f64 {
    smoothstep((total_area - texel_area) / (3.0 * texel_area))
}

/// `sqrt(a) * projected + sqrt(1 - a) * white`, variance preserving for any `a`.
#[inline]
pub fn blend_safeguard(projected: f64, total_area: f64, white: f64, texel_area: f64) -> f64 {
    let alpha = safeguard_alpha(total_area, texel_area);
    if alpha >= 1.0 {
        projected
    } else if alpha <= 0.0 {
        white
    } else {
        alpha.sqrt() * projected + (1.0 - alpha).sqrt() * white
    }
}

/// Per-channel noise planes for one view, stored planar `[channel][y][x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseImage {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl NoiseImage {
    pub fn plane(&self, channel: u32) -> &[f32] {
        let n = (self.width * self.height) as usize;
        &self.data[channel as usize * n..(channel as usize + 1) * n]
    }
}

/// Texture lookups for one covered pixel, with the normalization folded in.
#[derive(Clone, Debug)]
struct PixelTaps {
    /// `(texel, A / norm)`; texels merged and sorted.
    taps: Vec<(u64, f64)>,
    alpha: f64,
}

/// Geometry-dependent part of the view noise: everything except the noise
/// values themselves. Evaluating it for many seeds only costs texel lookups.
#[derive(Clone, Debug)]
pub struct ViewNoisePlan {
    pub width: u32,
    pub height: u32,
    pub view: u32,
    resolution: u32,
    pixels: Vec<Option<PixelTaps>>,
}

impl ViewNoisePlan {
    /// Rasterizes `camera` directly at the latent resolution.
    pub fn new(
        scene: &Scene,
        camera: &Camera,
        view: u32,
        texture_resolution: u32,
        subpixel_grid: u32,
        latent_resolution: (u32, u32),
    ) -> Result<Self> {
        if subpixel_grid == 0 {
            return Err(Error::invalid("subpixel grid must be at least 1"));
        }
        // validates the resolution
        let probe = sample_noise_texture(0, texture_resolution)?;
        let latent_cam = camera.with_resolution(latent_resolution.0, latent_resolution.1)?;
        let gbuffer = rasterize_gbuffer(scene, &latent_cam, subpixel_grid);
        Ok(Self::from_gbuffer(&gbuffer, view, &probe))
    }

    pub fn from_gbuffer(gbuffer: &GBuffer, view: u32, texture: &NoiseTexture) -> Self {
        let texel_area = texture.texel_area();
        let mut pixels = Vec::with_capacity((gbuffer.width * gbuffer.height) as usize);
        for y in 0..gbuffer.height {
            for x in 0..gbuffer.width {
                if !gbuffer.covered(x, y) {
                    pixels.push(None);
                    continue;
                }
                let subs: Vec<_> = gbuffer.subpixels(x, y).iter().flatten().collect();
                let total: f64 = subs.iter().map(|s| s.area).sum();
                let alpha = safeguard_alpha(total, texel_area);
                let norm = normalization_from_areas(subs.iter().map(|s| s.area), texel_area);
                let mut taps: Vec<(u64, f64)> = match norm {
                    Some(norm) if alpha > 0.0 => subs
                        .iter()
                        .filter(|s| s.area > 0.0)
                        .map(|s| (texture.texel_index(s.uv_center), s.area / norm))
                        .collect(),
                    _ => Vec::new(),
                };
                taps.sort_by_key(|t| t.0);
                taps.dedup_by(|b, a| {
                    if a.0 == b.0 {
                        a.1 += b.1;
                        true
                    } else {
                        false
                    }
                });
                pixels.push(Some(PixelTaps { taps, alpha }));
            }
        }
        ViewNoisePlan {
            width: gbuffer.width,
            height: gbuffer.height,
            view,
            resolution: texture.resolution(),
            pixels,
        }
    }

    pub fn is_covered(&self, pixel: usize) -> bool {
        self.pixels[pixel].is_some()
    }

    /// Safeguard blend weight of a covered pixel.
    pub fn alpha(&self, pixel: usize) -> Option<f64> {
        self.pixels[pixel].as_ref().map(|p| p.alpha)
    }

    /// Normalized projection weights `(texel, A / norm)` of a covered pixel.
    pub fn taps(&self, pixel: usize) -> Option<&[(u64, f64)]> {
        self.pixels[pixel].as_ref().map(|p| p.taps.as_slice())
    }

    /// Noise value of one pixel for the given (channel) seed.
    #[inline]
    pub fn pixel_value(&self, seed: u64, pixel: usize) -> f64 {
        let texture = NoiseTexture {
            seed,
            resolution: self.resolution,
        };
        match &self.pixels[pixel] {
            None => white_noise(seed, self.view, pixel as u32),
            Some(p) => {
                let projected = || {
                    p.taps
                        .iter()
                        .map(|&(t, w)| texture.value(t) * w)
                        .sum::<f64>()
                };
                if p.alpha >= 1.0 {
                    projected()
                } else if p.alpha <= 0.0 {
                    white_noise(seed, self.view, pixel as u32)
                } else {
                    p.alpha.sqrt() * projected()
                        + (1.0 - p.alpha).sqrt() * white_noise(seed, self.view, pixel as u32)
                }
            }
        }
    }

    /// Exact covariance, over seeds, between pixel `p` of this view and pixel
    /// `q` of `other`. Both plans must share a texture resolution. The
    /// projected part correlates through shared texels, the white part only
    /// with itself.
    pub fn covariance(&self, p: usize, other: &ViewNoisePlan, q: usize) -> f64 {
        let white =
            |plan: &ViewNoisePlan, i: usize| 1.0 - plan.alpha(i).map_or(0.0, |a| a.clamp(0.0, 1.0));
        let same_pixel = self.view == other.view && p == q;
        let mut cov = if same_pixel { white(self, p) } else { 0.0 };
        if let (Some(a), Some(b)) = (&self.pixels[p], &other.pixels[q]) {
            let (wa, wb) = (a.alpha.clamp(0.0, 1.0), b.alpha.clamp(0.0, 1.0));
            if wa > 0.0 && wb > 0.0 {
                let (mut i, mut j) = (0, 0);
                let mut shared = 0.0;
                while i < a.taps.len() && j < b.taps.len() {
                    match a.taps[i].0.cmp(&b.taps[j].0) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            shared += a.taps[i].1 * b.taps[j].1;
                            i += 1;
                            j += 1;
                        }
                    }
                }
                cov += (wa * wb).sqrt() * shared;
            }
        }
        cov
    }

    pub fn variance(&self, p: usize) -> f64 {
        self.covariance(p, self, p)
    }

    /// One plane per channel, channel `c` using seed `seed ^ c`.
    pub fn evaluate(&self, seed: u64, channels: u32) -> NoiseImage {
        let n = (self.width * self.height) as usize;
        let mut data = Vec::with_capacity(n * channels as usize);
        for c in 0..channels {
            let s = channel_seed(seed, c);
            data.par_extend(
                (0..n)
                    .into_par_iter()
                    .map(|p| self.pixel_value(s, p) as f32),
            );
        }
        NoiseImage {
            width: self.width,
            height: self.height,
            channels,
            data,
        }
    }
}

/// Seed noise for one view at the latent resolution.
#[allow(clippy::too_many_arguments)]
pub fn generate_view_noise(
    scene: &Scene,
    camera: &Camera,
    view: u32,
    seed: u64,
    texture_resolution: u32,
    subpixel_grid: u32,
    latent_resolution: (u32, u32),
    channels: u32,
) -> Result<NoiseImage> {
    if channels == 0 {
        return Err(Error::invalid("noise needs at least one channel"));
    }
    let plan = ViewNoisePlan::new(
        scene,
        camera,
        view,
        texture_resolution,
        subpixel_grid,
        latent_resolution,
    )?;
    Ok(plan.evaluate(seed, channels))
}
