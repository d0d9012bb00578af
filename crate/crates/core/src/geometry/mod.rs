//! Meshes, ray casting, cameras and G-buffer rasterization.

mod bvh;
mod camera;
mod gbuffer;
mod mesh;
mod obj;
pub mod scenes;

use std::sync::Arc;

pub use bvh::{intersect_brute_force, Bvh};
pub use camera::{generate_orbit_cameras, orbit_azimuth, Camera, Projection};
pub use gbuffer::{rasterize_gbuffer, GBuffer, NormalSpace, PixelSample, Subpixel};
pub use mesh::{Mesh, ShadingFrame, TangentFrame};
pub use obj::{load_obj, parse_obj};

use crate::error::Result;
use crate::math::{Vec2, Vec3};

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray { origin, direction }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Surface intersection.
#[derive(Clone, Copy, Debug)]
pub struct HitRecord {
    pub position: Vec3,
    pub shading_normal: Vec3,
    pub geometric_normal: Vec3,
    pub uv: Vec2,
    pub triangle: u32,
    pub t: f64,
    pub barycentrics: [f64; 3],
}

/// A mesh together with its acceleration structure and ray epsilon.
#[derive(Clone, Debug)]
pub struct Scene {
    bvh: Bvh,
    epsilon: f64,
}

/// Builds the acceleration structure for `mesh`.
pub fn build_bvh(mesh: Mesh) -> Result<Scene> {
    Scene::new(mesh)
}

impl Scene {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let epsilon = mesh.ray_epsilon();
        let bvh = Bvh::build(Arc::new(mesh))?;
        Ok(Scene { bvh, epsilon })
    }

    pub fn mesh(&self) -> &Mesh {
        self.bvh.mesh()
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    /// Scale-relative ray epsilon: `1e-4` times the bounding radius.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<HitRecord> {
        self.bvh.intersect(ray, t_min, t_max)
    }

    /// First hit of a camera ray.
    pub fn trace(&self, ray: &Ray) -> Option<HitRecord> {
        self.bvh.intersect(ray, 0.0, f64::INFINITY)
    }

    /// Shadow-ray test between two points with the scene epsilon at both ends.
    pub fn segment_occluded(&self, from: Vec3, to: Vec3) -> bool {
        let d = to - from;
        let len = d.length();
        if len <= 2.0 * self.epsilon {
            return false;
        }
        let ray = Ray::new(from, d / len);
        self.bvh.occluded(&ray, self.epsilon, len - self.epsilon)
    }

    pub fn shading_frame(&self, hit: &HitRecord) -> ShadingFrame {
        ShadingFrame::new(
            hit.shading_normal,
            self.mesh().tangent(hit.triangle as usize),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_triangle() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![Vec3::new(0.0, 0.0, 1.0); 3],
            vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
                Vec2::new(0.0, 1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn empty_mesh_rejected() {
        assert!(Mesh::new(vec![], vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn single_triangle_hit_and_barycentrics() {
        let scene = build_bvh(unit_triangle()).unwrap();
        assert_eq!(scene.bvh().leaf_count(), 1);
        let c = Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0);
        let ray = Ray::new(c + Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, -1.0));
        let hit = scene.trace(&ray).expect("hit");
        assert_eq!(hit.triangle, 0);
        assert!((hit.t - 2.0).abs() < 1e-12);
        assert!((hit.uv.x - 1.0 / 3.0).abs() < 1e-12 && (hit.uv.y - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let scene = build_bvh(unit_triangle()).unwrap();
        let ray = Ray::new(Vec3::new(-1.0, 0.2, 1.0), Vec3::new(1.0, 0.0, 0.0));
        assert!(scene.trace(&ray).is_none());
    }

    #[test]
    fn self_intersection_excluded_by_epsilon() {
        let scene = build_bvh(unit_triangle()).unwrap();
        let ray = Ray::new(Vec3::new(0.2, 0.2, 0.0), Vec3::new(0.0, 0.0, -1.0));
        assert!(scene.intersect(&ray, 1e-4, f64::INFINITY).is_none());
        let back = Ray::new(Vec3::new(0.2, 0.2, 0.0), Vec3::new(0.0, 0.0, 1.0));
        assert!(scene.intersect(&back, 1e-4, f64::INFINITY).is_none());
    }

    #[test]
    fn bvh_matches_brute_force_on_sphere() {
        let mesh = scenes::uv_sphere(1.0, 25, 11);
        assert!(mesh.triangle_count() >= 450 && mesh.triangle_count() <= 550);
        let scene = Scene::new(mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits = 0;
        for _ in 0..10_000 {
            let o = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let target = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let ray = Ray::new(o, (target - o).normalized());
            let a = scene.intersect(&ray, 1e-6, f64::INFINITY);
            let b = intersect_brute_force(scene.mesh(), &ray, 1e-6, f64::INFINITY);
            match (a, b) {
                (Some(a), Some(b)) => {
                    hits += 1;
                    assert_eq!(a.t, b.t);
                    assert_eq!(a.triangle, b.triangle);
                }
                (None, None) => {}
                (a, b) => panic!("mismatch {a:?} vs {b:?}"),
            }
        }
        assert!(hits > 1000);
    }
}
