//! Forward shading: textured PBR material (albedo, roughness, tangent-space
//! normal), Lambert plus GGX-Smith specular under directional lights and a
//! constant ambient term, tonemapping and multi-view grids.

pub mod io;
pub mod scalar;

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rasterize_gbuffer, Camera, GBuffer, Ray, Scene, ShadingFrame};
use crate::math::{Vec2, Vec3};
use scalar::{Real, V3};


pub const F0: f64 = 0.04;
pub const MIN_ROUGHNESS: f64 = 0.01;
const FLOOR: f64 = 1e-6;

/// Row-major texture; row 0 is `v = 0`. Sampling is bilinear with
/// clamp-to-edge and texel centers at `(i + 0.5) / width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture2D {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f64>,
}

/// Four bilinear taps: texel index and weight.
pub type Taps = [(u32, f64); 4];

impl Texture2D {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("texture dimensions must be positive"));
        }
        if data.len() != (width * height * channels) as usize {
            return Err(Error::invalid(format!(
                "texture data has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("texture contains non-finite values"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn constant(width: u32, height: u32, value: &[f64]) -> Self {
        let data = (0..width * height)
            .flat_map(|_| value.iter().copied())
            .collect();
        Self {
            width,
            height,
            channels: value.len() as u32,
            data,
        }
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u32,
        f: impl Fn(f64, f64) -> Vec<f64>,
    ) -> Self {
        let mut data = Vec::with_capacity((width * height * channels) as usize);
        for y in 0..height {
            for x in 0..width {
                let v = f(
                    (x as f64 + 0.5) / width as f64,
                    (y as f64 + 0.5) / height as f64,
                );
                debug_assert_eq!(v.len(), channels as usize);
                data.extend(v);
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn texel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn texel(&self, index: u32) -> &[f64] {
        let c = self.channels as usize;
        &self.data[index as usize * c..(index as usize + 1) * c]
    }

    pub fn taps(&self, uv: Vec2) -> Taps {
        let fx = uv.x * self.width as f64 - 0.5;
        let fy = uv.y * self.height as f64 - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0).clamp(0.0, 1.0);
        let ty = (fy - y0).clamp(0.0, 1.0);
        let cx = |x: f64| x.clamp(0.0, self.width as f64 - 1.0) as u32;
        let cy = |y: f64| y.clamp(0.0, self.height as f64 - 1.0) as u32;
        let (xa, xb, ya, yb) = (cx(x0), cx(x0 + 1.0), cy(y0), cy(y0 + 1.0));
        let idx = |x: u32, y: u32| y * self.width + x;
        [
            (idx(xa, ya), (1.0 - tx) * (1.0 - ty)),
            (idx(xb, ya), tx * (1.0 - ty)),
            (idx(xa, yb), (1.0 - tx) * ty),
            (idx(xb, yb), tx * ty),
        ]
    }

    pub fn sample(&self, uv: Vec2) -> Vec<f64> {
        let mut out = vec![0.0; self.channels as usize];
        for (i, w) in self.taps(uv) {
            for (o, v) in out.iter_mut().zip(self.texel(i)) {
                *o += w * v;
            }
        }
        out
    }
}

/// Textured material. Normals are unit tangent-space vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub albedo: Texture2D,
    pub roughness: Texture2D,
    pub normal: Texture2D,
}

impl Material {
    pub fn new(albedo: Texture2D, roughness: Texture2D, normal: Texture2D) -> Result<Self> {
        if albedo.channels != 3 || roughness.channels != 1 || normal.channels != 3 {
            return Err(Error::invalid(
                "material needs 3-channel albedo, 1-channel roughness, 3-channel normal",
            ));
        }
        if albedo.data.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::invalid("albedo outside [0, 1]"));
        }
        if roughness
            .data
            .iter()
            .any(|&r| !(MIN_ROUGHNESS..=1.0).contains(&r))
        {
            return Err(Error::invalid(format!(
                "roughness outside [{MIN_ROUGHNESS}, 1]"
            )));
        }
        for t in normal.data.chunks(3) {
            let l = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
            if (l - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("normal texel has length {l}")));
            }
        }
        Ok(Self {
            albedo,
            roughness,
            normal,
        })
    }

    /// Uniform material with flat normals.
    pub fn uniform(resolution: u32, albedo: [f64; 3], roughness: f64) -> Result<Self> {
        Self::new(
            Texture2D::constant(resolution, resolution, &albedo),
            Texture2D::constant(resolution, resolution, &[roughness]),
            Texture2D::constant(resolution, resolution, &[0.0, 0.0, 1.0]),
        )
    }

    pub fn fetch(&self, uv: Vec2) -> ShadingInputs<f64> {
        let a = self.albedo.sample(uv);
        let r = self.roughness.sample(uv);
        let n = self.normal.sample(uv);
        ShadingInputs {
            albedo: [a[0], a[1], a[2]],
            roughness: r[0],
            normal: [n[0], n[1], n[2]],
        }
    }
}

/// Interpolated material values at a surface point. `normal` is the
/// tangent-space vector before renormalization.
#[derive(Clone, Copy, Debug)]
pub struct ShadingInputs<T> {
    pub albedo: [T; 3],
    pub roughness: T,
    pub normal: [T; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionalLight {
    /// Unit vector pointing toward the light.
    pub direction: Vec3,
    pub radiance: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LightSet {
    pub directional: Vec<DirectionalLight>,
    /// Constant environment radiance, applied to the diffuse lobe.
    pub ambient: [f64; 3],
}

impl LightSet {
    pub fn new(directional: Vec<DirectionalLight>, ambient: [f64; 3]) -> Result<Self> {
        let bad = |r: &[f64; 3]| r.iter().any(|&x| !(x.is_finite() && x >= 0.0));
        if bad(&ambient) || directional.iter().any(|l| bad(&l.radiance)) {
            return Err(Error::invalid(
                "light radiance must be finite and non-negative",
            ));
        }
        let directional = directional
            .into_iter()
            .map(|l| {
                if !(l.direction.is_finite() && l.direction.length() > 0.0) {
                    return Err(Error::invalid("light direction must be a non-zero vector"));
                }
                Ok(DirectionalLight {
                    direction: l.direction.normalized(),
                    ..l
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            directional,
            ambient,
        })
    }

    /// Every radiance multiplied by `exposure`.
    pub fn scaled(&self, exposure: f64) -> Self {
        let s = |r: [f64; 3]| r.map(|x| x * exposure);
        LightSet {
            directional: self
                .directional
                .iter()
                .map(|l| DirectionalLight {
                    direction: l.direction,
                    radiance: s(l.radiance),
                })
                .collect(),
            ambient: s(self.ambient),
        }
    }
}

/// Geometry of one shaded point, independent of the material.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub uv: Vec2,
    pub frame: ShadingFrame,
    /// Unit vector toward the viewer.
    pub view_dir: Vec3,
}

/// GGX normal distribution with `alpha = roughness²`.
fn ggx_d<T: Real>(alpha2: T, n_dot_h: T) -> T {
    let c = n_dot_h.floor_at(0.0);
    let t = c * c * (alpha2 - 1.0) + 1.0;
    alpha2 / (t * t * PI).floor_at(FLOOR)
}

/// Smith masking term for one direction.
fn smith_g1<T: Real>(alpha2: T, c: T) -> T {
    let s = (alpha2 + (-alpha2 + 1.0) * c * c).sqrt();
    c * 2.0 / (c + s).floor_at(FLOOR)
}

pub fn schlick_fresnel(v_dot_h: f64) -> f64 {
    F0 + (1.0 - F0) * (1.0 - v_dot_h.clamp(0.0, 1.0)).powi(5)
}

/// Specular BRDF value (without the cosine) for unit `n`, with `fresnel`
/// fixed by the caller.
pub fn specular_lobe<T: Real>(roughness: T, n: &V3<T>, v: Vec3, l: Vec3, fresnel: f64) -> T {
    let h = (v + l).normalized();
    let alpha = roughness * roughness;
    let alpha2 = alpha * alpha;
    let nl = n.dot(l).floor_at(0.0);
    let nv = n.dot(v).floor_at(FLOOR);
    let d = ggx_d(alpha2, n.dot(h));
    let g = smith_g1(alpha2, nl) * smith_g1(alpha2, nv);
    d * g * fresnel / (nl * nv * 4.0).floor_at(FLOOR)
}

/// Outgoing radiance toward `view_dir`. `visible[k]` gates light `k`
/// (shadowing); pass `None` to treat every light as unoccluded.
pub fn shade_generic<T: Real>(
    inputs: &ShadingInputs<T>,
    frame: &ShadingFrame,
    view_dir: Vec3,
    lights: &LightSet,
    visible: Option<&[bool]>,
) -> [T; 3] {
    let n = V3::combine(
        [frame.tangent, frame.bitangent, frame.normal],
        inputs.normal,
    )
    .normalized();
    let mut out = [T::cst(0.0); 3];
    for c in 0..3 {
        out[c] = inputs.albedo[c] * lights.ambient[c];
    }
    for (k, light) in lights.directional.iter().enumerate() {
        if visible.is_some_and(|v| !v[k]) {
            continue;
        }
        let l = light.direction;
        let nl = n.dot(l);
        if nl.value() <= 0.0 {
            continue;
        }
        let h = (view_dir + l).normalized();
        let spec = specular_lobe(
            inputs.roughness,
            &n,
            view_dir,
            l,
            schlick_fresnel(view_dir.dot(h)),
        );
        for c in 0..3 {
            out[c] = out[c] + (inputs.albedo[c] / PI + spec) * nl * light.radiance[c];
        }
    }
    out
}

pub fn shade(
    point: &SurfacePoint,
    material: &Material,
    lights: &LightSet,
    visible: Option<&[bool]>,
) -> [f64; 3] {
    shade_generic(
        &material.fetch(point.uv),
        &point.frame,
        point.view_dir,
        lights,
        visible,
    )
}

/// Shadow-ray visibility of each directional light from `p`.
pub fn light_visibility(scene: &Scene, p: Vec3, lights: &LightSet) -> Vec<bool> {
    lights
        .directional
        .iter()
        .map(|l| {
            scene
                .intersect(&Ray::new(p, l.direction), scene.epsilon(), f64::INFINITY)
                .is_none()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub shadows: bool,
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            shadows: false,
            background: [0.0; 3],
        }
    }
}

/// Row-major interleaved image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; (width * height * channels) as usize],
        }
    }

    pub fn filled(width: u32, height: u32, value: &[f64]) -> Self {
        let data = (0..width * height)
            .flat_map(|_| value.iter().copied())
            .collect();
        Self {
            width,
            height,
            channels: value.len() as u32,
            data,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f64] {
        let c = self.channels as usize;
        let i = (y * self.width + x) as usize * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f64] {
        let c = self.channels as usize;
        let i = (y * self.width + x) as usize * c;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }
}

/// Linear radiance, never clipped.
#[derive(Clone, Debug, PartialEq)]
pub struct HdrImage {
    pub color: Image,
    pub mask: Vec<bool>,
}

/// Tonemapped values in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LdrImage {
    pub color: Image,
    pub mask: Vec<bool>,
}

/// Per-pixel surface points of one view; `None` for background.
pub fn surface_points(scene: &Scene, gbuffer: &GBuffer) -> Vec<Option<SurfacePoint>> {
    gbuffer
        .pixels()
        .iter()
        .map(|p| {
            p.as_ref().map(|s| SurfacePoint {
                position: s.hit.position,
                uv: s.hit.uv,
                frame: scene.shading_frame(&s.hit),
                view_dir: s.view_dir,
            })
        })
        .collect()
}

pub fn render(
    scene: &Scene,
    camera: &Camera,
    material: &Material,
    lights: &LightSet,
    options: &RenderOptions,
) -> HdrImage {
    let gb = rasterize_gbuffer(scene, camera, 1);
    render_points(
        scene,
        camera,
        &surface_points(scene, &gb),
        material,
        lights,
        options,
    )
}

pub fn render_points(
    scene: &Scene,
    camera: &Camera,
    points: &[Option<SurfacePoint>],
    material: &Material,
    lights: &LightSet,
    options: &RenderOptions,
) -> HdrImage {
    let mut color = Image::new(camera.width, camera.height, 3);
    color
        .data
        .par_chunks_mut(3)
        .zip(points.par_iter())
        .for_each(|(px, p)| match p {
            None => px.copy_from_slice(&options.background),
            Some(p) => {
                let vis = options
                    .shadows
                    .then(|| light_visibility(scene, p.position, lights));
                px.copy_from_slice(&shade(p, material, lights, vis.as_deref()));
            }
        });
    HdrImage {
        color,
        mask: points.iter().map(Option::is_some).collect(),
    }
}

#[inline]
pub fn tonemap_value(x: f64) -> f64 {
    x / (1.0 + x)
}

#[inline]
pub fn tonemap_derivative(x: f64) -> f64 {
    1.0 / ((1.0 + x) * (1.0 + x))
}

/// Inverse of [`tonemap_value`] on `[0, 1)`.
pub fn inverse_tonemap(t: f64) -> f64 {
    t / (1.0 - t)
}

pub fn tonemap(hdr: &HdrImage) -> Result<LdrImage> {
    if let Some(x) = hdr
        .color
        .data
        .iter()
        .find(|x| !(x.is_finite() && **x >= 0.0))
    {
        return Err(Error::invalid(format!(
            "tonemap input must be finite and non-negative, got {x}"
        )));
    }
    let mut color = hdr.color.clone();
    color.data.iter_mut().for_each(|x| *x = tonemap_value(*x));
    Ok(LdrImage {
        color,
        mask: hdr.mask.clone(),
    })
}

/// Tiles equally sized images row-major into a `rows × cols` grid; unused
/// slots are filled with `background`.
pub fn assemble_grid(images: &[Image], rows: u32, cols: u32, background: &[f64]) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("no images to assemble"))?;
    if images.len() > (rows * cols) as usize {
        return Err(Error::invalid(format!(
            "{} images do not fit a {rows}x{cols} grid",
            images.len()
        )));
    }
    if images.iter().any(|im| !im.same_shape(first)) {
        return Err(Error::invalid(
            "grid images must share size and channel count",
        ));
    }
    if background.len() != first.channels as usize {
        return Err(Error::invalid("background does not match channel count"));
    }
    let (w, h) = (first.width, first.height);
    let mut grid = Image::filled(w * cols, h * rows, background);
    let c = first.channels as usize;
    for (k, im) in images.iter().enumerate() {
        let (r, q) = (k as u32 / cols, k as u32 % cols);
        for y in 0..h {
            let src = &im.data[(y * w) as usize * c..((y + 1) * w) as usize * c];
            let start = (((r * h + y) * grid.width + q * w) as usize) * c;
            grid.data[start..start + src.len()].copy_from_slice(src);
        }
    }
    Ok(grid)
}

/// Inverse of [`assemble_grid`] for the first `count` slots.
pub fn split_grid(grid: &Image, rows: u32, cols: u32, count: usize) -> Result<Vec<Image>> {
    if rows == 0 || cols == 0 || grid.width % cols != 0 || grid.height % rows != 0 {
        return Err(Error::invalid(format!(
            "{}x{} image cannot be split into a {rows}x{cols} grid",
            grid.width, grid.height
        )));
    }
    if count > (rows * cols) as usize {
        return Err(Error::invalid(format!(
            "{count} views do not fit a {rows}x{cols} grid"
        )));
    }
    let (w, h) = (grid.width / cols, grid.height / rows);
    let c = grid.channels as usize;
    Ok((0..count as u32)
        .map(|k| {
            let (r, q) = (k / cols, k % cols);
            let mut im = Image::new(w, h, grid.channels);
            for y in 0..h {
                let start = (((r * h + y) * grid.width + q * w) as usize) * c;
                im.data[(y * w) as usize * c..((y + 1) * w) as usize * c]
                    .copy_from_slice(&grid.data[start..start + w as usize * c]);
            }
            im
        })
        .collect())
}

/// Deterministic textured material used by the built-in scenes: smooth
/// multi-frequency albedo, a roughness pattern in `[0.16, 0.79]` and gentle
/// normal-map bumps.
pub fn procedural_material(resolution: u32) -> Material {
    let tau = 2.0 * PI;
    let albedo = Texture2D::from_fn(resolution, resolution, 3, |u, v| {
        let a = (tau * 3.0 * u).sin() * (tau * 2.0 * v).cos();
        let b = (tau * (5.0 * u + 3.0 * v)).sin();
        let c = (tau * 7.0 * v).cos();
        let d = (tau * 16.0 * u).sin() * (tau * 12.0 * v).sin();
        vec![
            (0.55 + 0.2 * a + 0.1 * c + 0.12 * d).clamp(0.0, 1.0),
            (0.45 + 0.15 * b - 0.1 * a - 0.1 * d).clamp(0.0, 1.0),
            (0.35 + 0.15 * c + 0.1 * b + 0.08 * d).clamp(0.0, 1.0),
        ]
    });
    let roughness = Texture2D::from_fn(resolution, resolution, 1, |u, v| {
        let fine = (tau * (10.0 * u + 8.0 * v)).sin();
        vec![
            0.475
                + 0.15 * (tau * 2.0 * u).cos() * (tau * 3.0 * v).sin()
                + 0.06 * (tau * 5.0 * (u - v)).sin()
                + 0.1 * fine,
        ]
    });
    let normal = Texture2D::from_fn(resolution, resolution, 3, |u, v| {
        let n = Vec3::new(
            0.15 * (tau * 6.0 * u).cos(),
            0.15 * (tau * 4.0 * v).sin(),
            1.0,
        )
        .normalized();
        vec![n.x, n.y, n.z]
    });
    Material {
        albedo,
        roughness,
        normal,
    }
}
