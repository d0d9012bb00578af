//! Exhaustive reference for [`compute_correspondences`](super::compute_correspondences).
//!
//! Every ray is intersected against every triangle, projections go through
//! explicit view and projection matrices, visibility is a depth test along
//! the camera ray toward the point, and neighborhoods are found by scanning
//! every latent pixel of the target view.

use super::{CorrespondenceOptions, CorrespondenceSet, LatentGrid, NeighborhoodSpec};
use crate::error::Result;
use crate::geometry::{intersect_brute_force, Camera, Mesh, Ray};
use crate::math::Vec3;

type Mat4 = [[f64; 4]; 4];

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..4).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    m
}

/// World to clip transform, OpenGL convention (camera looks down -z).
fn view_projection(cam: &Camera) -> Mat4 {
    let f = (cam.target - cam.origin).normalized();
    let s = f.cross(cam.up).normalized();
    let u = s.cross(f);
    let o = cam.origin;
    let view: Mat4 = [
        [s.x, s.y, s.z, -s.dot(o)],
        [u.x, u.y, u.z, -u.dot(o)],
        [-f.x, -f.y, -f.z, f.dot(o)],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let t = (0.5 * cam.fov_y).tan();
    let aspect = cam.width as f64 / cam.height as f64;
    let proj: Mat4 = [
        [1.0 / (t * aspect), 0.0, 0.0, 0.0],
        [0.0, 1.0 / t, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
    ];
    mat_mul(&proj, &view)
}

/// Continuous pixel coordinates of `p`, or `None` behind the camera.
fn project(m: &Mat4, cam: &Camera, p: Vec3) -> Option<(f64, f64)> {
    let h = [p.x, p.y, p.z, 1.0];
    let clip: Vec<f64> = (0..4)
        .map(|r| (0..4).map(|k| m[r][k] * h[k]).sum())
        .collect();
    if clip[3] <= 0.0 {
        return None;
    }
    let (nx, ny) = (clip[0] / clip[3], clip[1] / clip[3]);
    Some((
        0.5 * (nx + 1.0) * cam.width as f64,
        0.5 * (1.0 - ny) * cam.height as f64,
    ))
}

fn center_ray(cam: &Camera, px: f64, py: f64) -> Ray {
    let f = (cam.target - cam.origin).normalized();
    let s = f.cross(cam.up).normalized();
    let u = s.cross(f);
    let t = (0.5 * cam.fov_y).tan();
    let aspect = cam.width as f64 / cam.height as f64;
    let nx = 2.0 * px / cam.width as f64 - 1.0;
    let ny = 1.0 - 2.0 * py / cam.height as f64;
    Ray::new(
        cam.origin,
        (f + s * (nx * t * aspect) + u * (ny * t)).normalized(),
    )
}

/// True iff the first surface along the camera ray toward `p` is not
/// nearer than `p` itself (up to `eps`).
pub fn depth_test_visible(mesh: &Mesh, cam: &Camera, p: Vec3, eps: f64) -> bool {
    let d = p - cam.origin;
    let len = d.length();
    let ray = Ray::new(cam.origin, d / len);
    intersect_brute_force(mesh, &ray, eps, len - eps).is_none()
}

pub fn brute_force_correspondences(
    mesh: &Mesh,
    cameras: &[Camera],
    grid: &LatentGrid,
    neighborhoods: &NeighborhoodSpec,
    scale: u32,
    options: CorrespondenceOptions,
) -> Result<CorrespondenceSet> {
    grid.check_scale(scale)?;
    let eps = mesh.ray_epsilon();
    let factor = LatentGrid::factor(scale) as f64;
    let (w, h) = grid.latent_size(scale);
    let radius = neighborhoods.radius(scale) as i64;
    let matrices: Vec<Mat4> = cameras.iter().map(view_projection).collect();

    let mut pairs = Vec::new();
    for vb in 0..grid.views {
        let cam_b = &cameras[vb as usize];
        for y in 0..h {
            for x in 0..w {
                let j = grid.flat_index(vb, x, y, scale);
                let ray = center_ray(cam_b, (x as f64 + 0.5) * factor, (y as f64 + 0.5) * factor);
                let Some(hit) = intersect_brute_force(mesh, &ray, 0.0, f64::INFINITY) else {
                    continue;
                };
                let p = hit.position;
                for va in 0..grid.views {
                    if va == vb && !options.same_view {
                        continue;
                    }
                    let cam_a = &cameras[va as usize];
                    let Some((qx, qy)) = project(&matrices[va as usize], cam_a, p) else {
                        continue;
                    };
                    let inside = qx >= 0.0
                        && qy >= 0.0
                        && qx < cam_a.width as f64
                        && qy < cam_a.height as f64;
                    if !inside || !depth_test_visible(mesh, cam_a, p, eps) {
                        continue;
                    }
                    let cx = (qx / factor).floor() as i64;
                    let cy = (qy / factor).floor() as i64;
                    for iy in 0..h {
                        for ix in 0..w {
                            let cheb = (ix as i64 - cx).abs().max((iy as i64 - cy).abs());
                            let i = grid.flat_index(va, ix, iy, scale);
                            if cheb <= radius && i != j {
                                pairs.push((i, j));
                            }
                        }
                    }
                }
            }
        }
    }
    CorrespondenceSet::from_pairs(scale, grid.len(scale), pairs)
}
