//! Inverse rendering: recovers albedo, roughness and normal textures from
//! target views by gradient descent through the shading chain
//! `bilinear fetch -> BRDF -> tonemap -> masked relative L2`.
//!
//! Texture parameters live in an unconstrained space: albedo is a sigmoid,
//! roughness `0.01 + 0.99 * sigmoid`, normals are normalized 3-vectors. Texels
//! are decoded before the bilinear fetch, so the forward pass here is the
//! same function [`crate::render::render`] evaluates on the decoded material.

mod check;
pub mod io;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rasterize_gbuffer, Camera, GBuffer, Scene};
use crate::render::io::ldr_interval;
use crate::render::scalar::Dual;
use crate::render::{
    light_visibility, shade_generic, surface_points, tonemap_value, Image, LightSet, Material,
    ShadingInputs, SurfacePoint, Taps, Texture2D, MIN_ROUGHNESS,
};

pub use check::{finite_difference_check, GradientSample, TextureKind};

#[cfg(test)]
mod tests;

/// Encoding clamp for the sigmoid-parameterized channels.
pub const PARAM_CLAMP: f64 = 5e-7;
/// Extra tolerance around 8-bit quantization intervals.
pub const QUANT_SLACK: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub epsilon: f64,
    /// Chebyshev distance, in pixels, from the silhouette inside which
    /// pixels get zero weight.
    pub margin: u32,
    pub cosine_power: f64,
    /// Per-view multipliers; empty means all ones.
    pub view_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            margin: 2,
            cosine_power: 1.0,
            view_weights: Vec::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("loss epsilon must be positive"));
        }
        if !(self.cosine_power >= 0.0 && self.cosine_power.is_finite()) {
            return Err(Error::invalid("cosine power must be non-negative"));
        }
        if self.view_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("view weights must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Tonemapped target values, each known to lie in `[lo, hi]`. Exact targets
/// have `lo == hi`; 8-bit targets carry their quantization interval, and
/// residuals inside it count as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub width: u32,
    pub height: u32,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Target {
    pub fn exact(image: &Image) -> Result<Self> {
        if image.channels != 3 {
            return Err(Error::invalid("targets must have 3 channels"));
        }
        if image.data.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err(Error::invalid("target values must lie in [0, 1)"));
        }
        Ok(Self {
            width: image.width,
            height: image.height,
            lo: image.data.clone(),
            hi: image.data.clone(),
        })
    }

    /// Target from raw 8-bit codes of a gamma-encoded LDR image.
    pub fn from_codes(width: u32, height: u32, codes: &[u8]) -> Result<Self> {
        if codes.len() != (width * height * 3) as usize {
            return Err(Error::invalid(
                "target code count does not match 3-channel image size",
            ));
        }
        let (lo, hi) = codes
            .iter()
            .map(|&b| {
                let (lo, hi) = ldr_interval(b);
                ((lo - QUANT_SLACK).max(0.0), hi + QUANT_SLACK)
            })
            .unzip();
        Ok(Self {
            width,
            height,
            lo,
            hi,
        })
    }

    #[inline]
    fn residual(&self, i: usize, t: f64) -> f64 {
        t - t.clamp(self.lo[i], self.hi[i])
    }
}

/// Masked relative L2 between a rendering and a target: the weighted mean
/// over pixels of `Σ_c e_c² / (T(r_c)² + ε)`. Returns the loss and whether
/// all weights were zero (loss defined as 0).
pub fn masked_relative_l2(
    rendered: &Image,
    target: &Target,
    weights: &[f64],
    epsilon: f64,
) -> Result<(f64, bool)> {
    if rendered.channels != 3 || rendered.width != target.width || rendered.height != target.height
    {
        return Err(Error::invalid("rendered image and target differ in shape"));
    }
    if weights.len() != (target.width * target.height) as usize {
        return Err(Error::invalid("weight mask size mismatch"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        den += w;
        for c in 0..3 {
            let t = tonemap_value(rendered.data[p * 3 + c]);
            let e = target.residual(p * 3 + c, t);
            num += w * e * e / (t * t + epsilon);
        }
    }
    if den == 0.0 {
        return Ok((0.0, true));
    }
    Ok((num / den, false))
}

/// Zero within `margin` pixels of any uncovered pixel, `max(n·v, 0)^power`
/// elsewhere on covered pixels, zero on background. Pixels outside the frame
/// do not count as uncovered.
pub fn build_weight_mask(gbuffer: &GBuffer, margin: u32, cosine_power: f64) -> Vec<f64> {
    let (w, h) = (gbuffer.width as i64, gbuffer.height as i64);
    let m = margin as i64;
    let covered = gbuffer.coverage_mask();
    let mut out = vec![0.0; covered.len()];
    for y in 0..h {
        for x in 0..w {
            let Some(px) = gbuffer.pixel(x as u32, y as u32) else {
                continue;
            };
            let near_edge = ((y - m).max(0)..=(y + m).min(h - 1)).any(|yy| {
                ((x - m).max(0)..=(x + m).min(w - 1)).any(|xx| !covered[(yy * w + xx) as usize])
            });
            if near_edge {
                continue;
            }
            let c = px.hit.shading_normal.dot(px.view_dir).max(0.0);
            out[(y * w + x) as usize] = if cosine_power == 0.0 {
                1.0
            } else {
                c.powf(cosine_power)
            };
        }
    }
    out
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(PARAM_CLAMP, 1.0 - PARAM_CLAMP);
    (p / (1.0 - p)).ln()
}

/// Unconstrained texture parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMaterial {
    pub albedo: Texture2D,
    pub roughness: Texture2D,
    pub normal: Texture2D,
}

impl LatentMaterial {
    pub fn encode(m: &Material) -> Self {
        let mut albedo = m.albedo.clone();
        albedo.data.iter_mut().for_each(|a| *a = logit(*a));
        let mut roughness = m.roughness.clone();
        roughness
            .data
            .iter_mut()
            .for_each(|r| *r = logit((*r - MIN_ROUGHNESS) / (1.0 - MIN_ROUGHNESS)));
        Self {
            albedo,
            roughness,
            normal: m.normal.clone(),
        }
    }

    pub fn decode(&self) -> Material {
        let mut albedo = self.albedo.clone();
        albedo.data.iter_mut().for_each(|u| *u = sigmoid(*u));
        let mut roughness = self.roughness.clone();
        roughness
            .data
            .iter_mut()
            .for_each(|u| *u = MIN_ROUGHNESS + (1.0 - MIN_ROUGHNESS) * sigmoid(*u));
        let mut normal = self.normal.clone();
        for n in normal.data.chunks_mut(3) {
            let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if l < 1e-12 {
                n.copy_from_slice(&[0.0, 0.0, 1.0]);
            } else {
                n.iter_mut().for_each(|x| *x /= l);
            }
        }
        Material {
            albedo,
            roughness,
            normal,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Texture2D| Texture2D {
            data: vec![0.0; t.data.len()],
            ..t.clone()
        };
        Self {
            albedo: z(&self.albedo),
            roughness: z(&self.roughness),
            normal: z(&self.normal),
        }
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [
            &mut self.albedo.data,
            &mut self.roughness.data,
            &mut self.normal.data,
        ]
    }

    fn slices(&self) -> [&Vec<f64>; 3] {
        [&self.albedo.data, &self.roughness.data, &self.normal.data]
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

#[derive(Clone, Debug)]
struct ActivePixel {
    pixel: u32,
    weight: f64,
    point: SurfacePoint,
    albedo: Taps,
    roughness: Taps,
    normal: Taps,
}

#[derive(Clone, Debug)]
struct ViewData {
    target: Target,
    active: Vec<ActivePixel>,
    /// Per active pixel, one flag per light; empty without shadows.
    visibility: Vec<bool>,
    weight_sum: f64,
}

/// Frozen relative-L2 denominators, per view and active pixel channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Denominators(pub Vec<Vec<f64>>);

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    /// Per requested view, its own normalized loss.
    pub per_view: Vec<f64>,
    pub gradient: LatentMaterial,
    pub denominators: Denominators,
    pub zero_weight: bool,
}

/// Precomputed views, masks and texel taps for a fixed scene, camera set,
/// light set and texture layout.
#[derive(Clone, Debug)]
pub struct InverseProblem {
    views: Vec<ViewData>,
    lights: LightSet,
    config: LossConfig,
    layout: [(u32, u32); 3],
}

struct PixelResult {
    loss: f64,
    grad: [f64; 7],
    denom: [f64; 3],
}

fn taps_match(t: &Texture2D, layout: (u32, u32)) -> bool {
    (t.width, t.height) == layout
}

impl InverseProblem {
    /// `layout` fixes texture resolutions; its values are not used.
    pub fn new(
        scene: &Scene,
        cameras: &[Camera],
        targets: Vec<Target>,
        lights: &LightSet,
        config: &LossConfig,
        shadows: bool,
        layout: &Material,
    ) -> Result<Self> {
        config.validate()?;
        if cameras.is_empty() || cameras.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} cameras but {} targets",
                cameras.len(),
                targets.len()
            )));
        }
        if !config.view_weights.is_empty() && config.view_weights.len() != cameras.len() {
            return Err(Error::invalid(
                "view weight count does not match view count",
            ));
        }
        let mut views = Vec::with_capacity(cameras.len());
        for (v, (cam, target)) in cameras.iter().zip(targets).enumerate() {
            if (cam.width, cam.height) != (target.width, target.height) {
                return Err(Error::invalid(format!(
                    "view {v}: target is {}x{}, camera is {}x{}",
                    target.width, target.height, cam.width, cam.height
                )));
            }
            let gb = rasterize_gbuffer(scene, cam, 1);
            let vw = config.view_weights.get(v).copied().unwrap_or(1.0);
            let weights = build_weight_mask(&gb, config.margin, config.cosine_power);
            let points = surface_points(scene, &gb);
            let active: Vec<ActivePixel> = points
                .iter()
                .zip(&weights)
                .enumerate()
                .filter_map(|(p, (pt, &w))| {
                    let pt = pt.as_ref()?;
                    (w * vw > 0.0).then(|| ActivePixel {
                        pixel: p as u32,
                        weight: w * vw,
                        point: *pt,
                        albedo: layout.albedo.taps(pt.uv),
                        roughness: layout.roughness.taps(pt.uv),
                        normal: layout.normal.taps(pt.uv),
                    })
                })
                .collect();
            let visibility = if shadows {
                active
                    .iter()
                    .flat_map(|a| light_visibility(scene, a.point.position, lights))
                    .collect()
            } else {
                Vec::new()
            };
            let weight_sum = active.iter().map(|a| a.weight).sum();
            views.push(ViewData {
                target,
                active,
                visibility,
                weight_sum,
            });
        }
        let dims = |t: &Texture2D| (t.width, t.height);
        Ok(Self {
            views,
            lights: lights.clone(),
            config: config.clone(),
            layout: [
                dims(&layout.albedo),
                dims(&layout.roughness),
                dims(&layout.normal),
            ],
        })
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn active_pixels(&self, view: usize) -> usize {
        self.views[view].active.len()
    }

    /// Texels reached with non-zero bilinear weight by some weighted pixel,
    /// for albedo, roughness and normal textures.
    pub fn coverage(&self) -> [Vec<bool>; 3] {
        let mut out = self.layout.map(|(w, h)| vec![false; (w * h) as usize]);
        for a in self.views.iter().flat_map(|v| &v.active) {
            for (k, taps) in [&a.albedo, &a.roughness, &a.normal].into_iter().enumerate() {
                for &(i, w) in taps.iter() {
                    if w > 0.0 {
                        out[k][i as usize] = true;
                    }
                }
            }
        }
        out
    }

    fn check_layout(&self, latent: &LatentMaterial) -> Result<()> {
        let ok = taps_match(&latent.albedo, self.layout[0])
            && taps_match(&latent.roughness, self.layout[1])
            && taps_match(&latent.normal, self.layout[2]);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "latent texture resolution differs from the problem layout",
            ))
        }
    }

    fn pixel(
        &self,
        view: &ViewData,
        k: usize,
        m: &Material,
        frozen: Option<&[f64]>,
    ) -> PixelResult {
        let a = &view.active[k];
        let mut x = [0.0; 7];
        for &(i, w) in &a.albedo {
            for c in 0..3 {
                x[c] += w * m.albedo.data[i as usize * 3 + c];
            }
        }
        for &(i, w) in &a.roughness {
            x[3] += w * m.roughness.data[i as usize];
        }
        for &(i, w) in &a.normal {
            for c in 0..3 {
                x[4 + c] += w * m.normal.data[i as usize * 3 + c];
            }
        }
        let d = |k: usize| Dual::<7>::var(x[k], k);
        let inputs = ShadingInputs {
            albedo: [d(0), d(1), d(2)],
            roughness: d(3),
            normal: [d(4), d(5), d(6)],
        };
        let nl = self.lights.directional.len();
        let vis = (!view.visibility.is_empty()).then(|| &view.visibility[k * nl..(k + 1) * nl]);
        let rad = shade_generic(&inputs, &a.point.frame, a.point.view_dir, &self.lights, vis);
        let mut out = PixelResult {
            loss: 0.0,
            grad: [0.0; 7],
            denom: [0.0; 3],
        };
        for c in 0..3 {
            let r = rad[c];
            let t = tonemap_value(r.v);
            let dt = 1.0 / ((1.0 + r.v) * (1.0 + r.v));
            let e = view.target.residual(a.pixel as usize * 3 + c, t);
            let den = frozen.map_or(t * t + self.config.epsilon, |f| f[k * 3 + c]);
            out.denom[c] = den;
            out.loss += a.weight * e * e / den;
            if e != 0.0 {
                let s = a.weight * 2.0 * e / den * dt;
                for j in 0..7 {
                    out.grad[j] += s * r.d[j];
                }
            }
        }
        out
    }

    /// Loss over `views` (normalized by their total weight) and its gradient
    /// with respect to the latent parameters. With `frozen`, the relative-L2
    /// denominators are taken from a previous evaluation instead of the
    /// current rendering.
    pub fn evaluate(
        &self,
        latent: &LatentMaterial,
        views: &[usize],
        frozen: Option<&Denominators>,
    ) -> Result<Evaluation> {
        self.check_layout(latent)?;
        let material = latent.decode();
        let mut grad_decoded = latent.zeros_like();
        let mut total = 0.0;
        let mut weight = 0.0;
        let mut per_view = Vec::with_capacity(views.len());
        let mut denominators = Vec::with_capacity(views.len());
        for (slot, &v) in views.iter().enumerate() {
            let view = self
                .views
                .get(v)
                .ok_or_else(|| Error::invalid(format!("view {v} out of range")))?;
            let fz = frozen.map(|f| f.0[slot].as_slice());
            let results: Vec<PixelResult> = (0..view.active.len())
                .into_par_iter()
                .map(|k| self.pixel(view, k, &material, fz))
                .collect();
            let mut view_loss = 0.0;
            let mut dens = Vec::with_capacity(results.len() * 3);
            for (k, r) in results.iter().enumerate() {
                if !r.grad.iter().all(|g| g.is_finite()) || !r.loss.is_finite() {
                    let p = view.active[k].pixel;
                    return Err(Error::Numerical(format!(
                        "non-finite gradient in view {v} at pixel ({}, {})",
                        p % view.target.width,
                        p / view.target.width
                    )));
                }
                view_loss += r.loss;
                dens.extend_from_slice(&r.denom);
                let a = &view.active[k];
                let [ga, gr, gn] = grad_decoded.slices_mut();
                for &(i, w) in &a.albedo {
                    for c in 0..3 {
                        ga[i as usize * 3 + c] += w * r.grad[c];
                    }
                }
                for &(i, w) in &a.roughness {
                    gr[i as usize] += w * r.grad[3];
                }
                for &(i, w) in &a.normal {
                    for c in 0..3 {
                        gn[i as usize * 3 + c] += w * r.grad[4 + c];
                    }
                }
            }
            per_view.push(if view.weight_sum > 0.0 {
                view_loss / view.weight_sum
            } else {
                0.0
            });
            total += view_loss;
            weight += view.weight_sum;
            denominators.push(dens);
        }
        let zero_weight = weight == 0.0;
        let scale = if zero_weight { 0.0 } else { 1.0 / weight };
        let mut gradient = grad_decoded;
        for s in gradient.slices_mut() {
            s.iter_mut().for_each(|g| *g *= scale);
        }
        // chain through the decode Jacobians
        for (g, &a) in gradient.albedo.data.iter_mut().zip(&material.albedo.data) {
            *g *= a * (1.0 - a);
        }
        for (g, &r) in gradient
            .roughness
            .data
            .iter_mut()
            .zip(&material.roughness.data)
        {
            let s = (r - MIN_ROUGHNESS) / (1.0 - MIN_ROUGHNESS);
            *g *= (1.0 - MIN_ROUGHNESS) * s * (1.0 - s);
        }
        for ((g, u), n) in gradient
            .normal
            .data
            .chunks_mut(3)
            .zip(latent.normal.data.chunks(3))
            .zip(material.normal.data.chunks(3))
        {
            let len = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            if len < 1e-12 {
                g.fill(0.0);
                continue;
            }
            let gn = g[0] * n[0] + g[1] * n[1] + g[2] * n[2];
            for c in 0..3 {
                g[c] = (g[c] - gn * n[c]) / len;
            }
        }
        Ok(Evaluation {
            loss: total * scale,
            per_view,
            gradient,
            denominators: Denominators(denominators),
            zero_weight,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Views per step.
    pub batch: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.01,
            batch: 3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

/// Adam state over the latent parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub latent: LatentMaterial,
    pub m: LatentMaterial,
    pub v: LatentMaterial,
    pub step: u64,
}

impl OptimState {
    pub fn new(initial: &Material) -> Self {
        let latent = LatentMaterial::encode(initial);
        let m = latent.zeros_like();
        Self {
            v: m.clone(),
            m,
            latent,
            step: 0,
        }
    }

    pub fn adam_step(&mut self, grad: &LatentMaterial, cfg: &OptimConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let [pu, pr, pn] = self.latent.slices_mut();
        let [mu, mr, mn] = self.m.slices_mut();
        let [vu, vr, vn] = self.v.slices_mut();
        for (((p, m), v), g) in [pu, pr, pn]
            .into_iter()
            .zip([mu, mr, mn])
            .zip([vu, vr, vn])
            .zip(grad.slices())
        {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    /// Loss of each view in the step's batch.
    pub views: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimStatus {
    Completed,
    /// Loss stayed above ten times the initial loss for 100 steps.
    Diverged {
        step: u64,
    },
}

#[derive(Clone, Debug)]
pub struct OptimOutcome {
    pub material: Material,
    pub state: OptimState,
    pub history: Vec<StepLog>,
    pub status: OptimStatus,
}

pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: usize = 100;

/// Deterministic minibatches: views are shuffled once per epoch and taken
/// in chunks of `batch`.
pub struct ViewSampler {
    rng: ChaCha8Rng,
    views: usize,
    batch: usize,
    queue: Vec<usize>,
}

impl ViewSampler {
    pub fn new(views: usize, batch: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            views,
            batch: batch.clamp(1, views),
            queue: Vec::new(),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            self.queue = (0..self.views).collect();
            self.queue.shuffle(&mut self.rng);
            self.queue.reverse();
        }
        let take = self.batch.min(self.queue.len());
        let mut b: Vec<usize> = (0..take).map(|_| self.queue.pop().unwrap()).collect();
        b.sort_unstable();
        b
    }
}

pub fn optimize(
    problem: &InverseProblem,
    initial: &Material,
    cfg: &OptimConfig,
) -> Result<OptimOutcome> {
    optimize_from(problem, OptimState::new(initial), cfg)
}

/// Runs `cfg.steps` Adam steps starting from `state`. Divergence stops the
/// run early and reports the state reached.
pub fn optimize_from(
    problem: &InverseProblem,
    mut state: OptimState,
    cfg: &OptimConfig,
) -> Result<OptimOutcome> {
    if cfg.batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let mut sampler = ViewSampler::new(problem.view_count(), cfg.batch, cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut status = OptimStatus::Completed;
    let mut initial_loss = None;
    let mut above = 0usize;
    for _ in 0..cfg.steps {
        let batch = sampler.next_batch();
        let eval = problem.evaluate(&state.latent, &batch, None)?;
        let reference = *initial_loss.get_or_insert(eval.loss);
        history.push(StepLog {
            step: state.step,
            loss: eval.loss,
            views: batch
                .iter()
                .copied()
                .zip(eval.per_view.iter().copied())
                .collect(),
        });
        if eval.loss > DIVERGENCE_FACTOR * reference {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                status = OptimStatus::Diverged { step: state.step };
                break;
            }
        } else {
            above = 0;
        }
        state.adam_step(&eval.gradient, cfg);
    }
    let material = state.latent.decode();
    Material::new(
        material.albedo.clone(),
        material.roughness.clone(),
        material.normal.clone(),
    )?;
    Ok(OptimOutcome {
        material,
        state,
        history,
        status,
    })
}

/// Peak signal-to-noise ratio (peak 1) over the selected texels of two
/// textures with equal layout.
pub fn psnr(a: &Texture2D, b: &Texture2D, texels: &[bool]) -> f64 {
    let c = a.channels as usize;
    let mut se = 0.0;
    let mut n = 0usize;
    for (i, _) in texels.iter().enumerate().filter(|(_, &t)| t) {
        for k in 0..c {
            let d = a.data[i * c + k] - b.data[i * c + k];
            se += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return f64::INFINITY;
    }
    -10.0 * (se / n as f64).log10()
}

/// Root-mean-square difference over all values of two equally shaped textures.
pub fn rms_difference(a: &Texture2D, b: &Texture2D) -> f64 {
    let se: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (se / a.data.len() as f64).sqrt()
}
