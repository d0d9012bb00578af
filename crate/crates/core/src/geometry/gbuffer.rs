use rayon::prelude::*;

use super::{Camera, HitRecord, Ray, Scene};
use crate::math::{triangle_area_2d, Vec2, Vec3};

/// Per-pixel primary-ray sample.
#[derive(Clone, Copy, Debug)]
pub struct PixelSample {
    pub hit: HitRecord,
    /// Unit vector from the surface point toward the camera.
    pub view_dir: Vec3,
}

/// UV-space footprint of one screen subpixel.
#[derive(Clone, Copy, Debug)]
pub struct Subpixel {
    /// UV of the projected subpixel center.
    pub uv_center: Vec2,
    /// Projected corners in order top-left, top-right, bottom-right, bottom-left.
    pub corners: [Vec2; 4],
    /// Quad area in UV space (sum of two triangle areas); zero when degenerate.
    pub area: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalSpace {
    Camera,
    World,
}

#[derive(Clone, Debug)]
pub struct GBuffer {
    pub width: u32,
    pub height: u32,
    pub subpixel_grid: u32,
    pixels: Vec<Option<PixelSample>>,
    subpixels: Vec<Option<Subpixel>>,
}

impl GBuffer {
    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> Option<&PixelSample> {
        self.pixels[(y * self.width + x) as usize].as_ref()
    }

    pub fn pixels(&self) -> &[Option<PixelSample>] {
        &self.pixels
    }

    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.pixel(x, y).is_some()
    }

    /// Subpixels of pixel `(x, y)` in row-major order; empty when uncovered.
    pub fn subpixels(&self, x: u32, y: u32) -> &[Option<Subpixel>] {
        let s2 = (self.subpixel_grid * self.subpixel_grid) as usize;
        let base = (y * self.width + x) as usize * s2;
        if self.pixels[(y * self.width + x) as usize].is_none() {
            return &[];
        }
        &self.subpixels[base..base + s2]
    }

    /// Sum of the UV footprint areas of a pixel's subpixels.
    pub fn footprint_area(&self, x: u32, y: u32) -> f64 {
        self.subpixels(x, y).iter().flatten().map(|s| s.area).sum()
    }

    pub fn coverage_mask(&self) -> Vec<bool> {
        self.pixels.iter().map(|p| p.is_some()).collect()
    }

    /// Normals encoded as `(n + 1) / 2` in 8 bits per channel; background is 0.
    pub fn encode_normals(&self, camera: &Camera, space: NormalSpace) -> Vec<u8> {
        let mut out = vec![0u8; (self.width * self.height * 3) as usize];
        for (i, p) in self.pixels.iter().enumerate() {
            if let Some(p) = p {
                let n = match space {
                    NormalSpace::Camera => camera.to_camera_space(p.hit.shading_normal),
                    NormalSpace::World => p.hit.shading_normal,
                };
                for c in 0..3 {
                    out[3 * i + c] = ((n[c] + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }

    /// Depth (ray distance) per pixel, `+inf` for background.
    pub fn depth(&self) -> Vec<f32> {
        self.pixels
            .iter()
            .map(|p| p.map_or(f32::INFINITY, |p| p.hit.t as f32))
            .collect()
    }
}

/// Casts one primary ray per pixel center and, for each of the `s x s`
/// subpixels, projects the subpixel's corners onto the plane of the triangle
/// hit through its center to obtain a UV quad.
pub fn rasterize_gbuffer(scene: &Scene, camera: &Camera, subpixel_grid: u32) -> GBuffer {
    assert!(subpixel_grid >= 1, "subpixel grid must be at least 1");
    let (w, h) = (camera.width, camera.height);
    let s = subpixel_grid;
    let s2 = (s * s) as usize;

    let rows: Vec<(Vec<Option<PixelSample>>, Vec<Option<Subpixel>>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut px = Vec::with_capacity(w as usize);
            let mut sub = Vec::with_capacity(w as usize * s2);
            for x in 0..w {
                let ray = camera.pixel_ray(x, y);
                match scene.trace(&ray) {
                    None => {
                        px.push(None);
                        sub.extend(std::iter::repeat(None).take(s2));
                    }
                    Some(hit) => {
                        px.push(Some(PixelSample {
                            hit,
                            view_dir: -ray.direction,
                        }));
                        for b in 0..s {
                            for a in 0..s {
                                sub.push(subpixel_footprint(scene, camera, x, y, a, b, s));
                            }
                        }
                    }
                }
            }
            (px, sub)
        })
        .collect();

    let mut pixels = Vec::with_capacity((w * h) as usize);
    let mut subpixels = Vec::with_capacity((w * h) as usize * s2);
    for (p, s) in rows {
        pixels.extend(p);
        subpixels.extend(s);
    }
    GBuffer {
        width: w,
        height: h,
        subpixel_grid: s,
        pixels,
        subpixels,
    }
}

fn subpixel_footprint(
    scene: &Scene,
    camera: &Camera,
    x: u32,
    y: u32,
    a: u32,
    b: u32,
    s: u32,
) -> Option<Subpixel> {
    let inv = 1.0 / s as f64;
    let x0 = x as f64 + a as f64 * inv;
    let y0 = y as f64 + b as f64 * inv;
    let center = camera.ray(x0 + 0.5 * inv, y0 + 0.5 * inv);
    let hit = scene.trace(&center)?;
    let tri = hit.triangle as usize;
    let mesh = scene.mesh();
    let ps = mesh.triangle_positions(tri);
    let uvs = mesh.triangle_uvs(tri);

    let corner_pts = [
        (x0, y0),
        (x0 + inv, y0),
        (x0 + inv, y0 + inv),
        (x0, y0 + inv),
    ];
    let mut corners = [Vec2::default(); 4];
    let mut degenerate = false;
    for (k, &(cx, cy)) in corner_pts.iter().enumerate() {
        match plane_uv(&camera.ray(cx, cy), ps, uvs, hit.geometric_normal) {
            Some(uv) => corners[k] = uv,
            None => degenerate = true,
        }
    }
    let area = if degenerate {
        0.0
    } else {
        triangle_area_2d(corners[0], corners[1], corners[2])
            + triangle_area_2d(corners[0], corners[2], corners[3])
    };
    Some(Subpixel {
        uv_center: hit.uv,
        corners,
        area,
    })
}

/// UV at the intersection of `ray` with the triangle's supporting plane,
/// extending the barycentric interpolation affinely beyond the triangle.
fn plane_uv(ray: &Ray, ps: [Vec3; 3], uvs: [Vec2; 3], n: Vec3) -> Option<Vec2> {
    let denom = ray.direction.dot(n);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (ps[0] - ray.origin).dot(n) / denom;
    if !(t > 0.0) || !t.is_finite() {
        return None;
    }
    let p = ray.at(t);
    let v0 = ps[1] - ps[0];
    let v1 = ps[2] - ps[0];
    let v2 = p - ps[0];
    let d00 = v0.dot(v0);
    let d01 = v0.dot(v1);
    let d11 = v1.dot(v1);
    let d20 = v2.dot(v0);
    let d21 = v2.dot(v1);
    let det = d00 * d11 - d01 * d01;
    if det <= 0.0 {
        return None;
    }
    let b1 = (d11 * d20 - d01 * d21) / det;
    let b2 = (d00 * d21 - d01 * d20) / det;
    let b0 = 1.0 - b1 - b2;
    Some(uvs[0] * b0 + uvs[1] * b1 + uvs[2] * b2)
}
