use crate::error::{Error, Result};
use crate::math::Vec3;

use super::Ray;

/// Pinhole camera. Pixel coordinates run from the top-left image corner,
/// x to the right and y downward; pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub origin: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
    forward: Vec3,
    right: Vec3,
    up_ortho: Vec3,
    tan_half: f64,
}

/// Result of projecting a world point into a camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    /// Continuous pixel coordinates and depth along the viewing axis.
    Front {
        x: f64,
        y: f64,
        depth: f64,
    },
    Behind,
}

impl Camera {
    pub fn new(
        origin: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let fwd = target - origin;
        if fwd.length() == 0.0 || !fwd.is_finite() {
            return Err(Error::invalid("camera origin and target coincide"));
        }
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(Error::invalid(format!(
                "field of view {fov_y} rad outside (0, pi)"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera resolution must be positive"));
        }
        let forward = fwd.normalized();
        let right = forward.cross(up);
        if right.length() < 1e-9 {
            return Err(Error::invalid(
                "camera up vector is parallel to the view direction",
            ));
        }
        let right = right.normalized();
        let up_ortho = right.cross(forward);
        Ok(Camera {
            origin,
            target,
            up: up.normalized(),
            fov_y,
            width,
            height,
            forward,
            right,
            up_ortho,
            tan_half: (0.5 * fov_y).tan(),
        })
    }

    /// Same pose, different resolution.
    pub fn with_resolution(&self, width: u32, height: u32) -> Result<Self> {
        Camera::new(self.origin, self.target, self.up, self.fov_y, width, height)
    }

    pub fn forward(&self) -> Vec3 {
        self.forward
    }

    pub fn right(&self) -> Vec3 {
        self.right
    }

    pub fn up_vector(&self) -> Vec3 {
        self.up_ortho
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// World-space point on the image plane at unit distance for pixel coordinates `(x, y)`.
    pub fn image_plane_point(&self, x: f64, y: f64) -> Vec3 {
        let sx = (2.0 * x / self.width as f64 - 1.0) * self.tan_half * self.aspect();
        let sy = (1.0 - 2.0 * y / self.height as f64) * self.tan_half;
        self.origin + self.forward + self.right * sx + self.up_ortho * sy
    }

    /// Primary ray through continuous pixel coordinates.
    pub fn ray(&self, x: f64, y: f64) -> Ray {
        let p = self.image_plane_point(x, y);
        Ray::new(self.origin, (p - self.origin).normalized())
    }

    /// Ray through the center of pixel `(i, j)`.
    pub fn pixel_ray(&self, i: u32, j: u32) -> Ray {
        self.ray(i as f64 + 0.5, j as f64 + 0.5)
    }

    pub fn project_point(&self, p: Vec3) -> Projection {
        let d = p - self.origin;
        let depth = d.dot(self.forward);
        if depth <= 0.0 {
            return Projection::Behind;
        }
        let sx = d.dot(self.right) / depth;
        let sy = d.dot(self.up_ortho) / depth;
        let x = (sx / (self.tan_half * self.aspect()) + 1.0) * 0.5 * self.width as f64;
        let y = (1.0 - sy / self.tan_half) * 0.5 * self.height as f64;
        Projection::Front { x, y, depth }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    /// Camera-space direction with x right, y up and z toward the viewer.
    pub fn to_camera_space(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            v.dot(self.right),
            v.dot(self.up_ortho),
            -v.dot(self.forward),
        )
    }
}

/// Cameras on a circle around `center` at uniform azimuth steps of `360 / count`
/// degrees, all looking at `center`. Azimuth 0 lies on the +z axis.
pub fn generate_orbit_cameras(
    count: usize,
    elevation: f64,
    radius: f64,
    fov_y: f64,
    resolution: (u32, u32),
    center: Vec3,
) -> Result<Vec<Camera>> {
    if !(1..=64).contains(&count) {
        return Err(Error::invalid(format!(
            "orbit view count {count} outside [1, 64]"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid(format!(
            "orbit radius must be positive, got {radius}"
        )));
    }
    if elevation.abs() >= 0.5 * std::f64::consts::PI - 1e-6 {
        return Err(Error::invalid(
            "orbit elevation must be strictly between -90 and 90 degrees",
        ));
    }
    (0..count)
        .map(|k| {
            let az = orbit_azimuth(k, count);
            let dir = Vec3::new(
                elevation.cos() * az.sin(),
                elevation.sin(),
                elevation.cos() * az.cos(),
            );
            Camera::new(
                center + dir * radius,
                center,
                Vec3::new(0.0, 1.0, 0.0),
                fov_y,
                resolution.0,
                resolution.1,
            )
        })
        .collect()
}

/// Azimuth of camera `k` in radians.
pub fn orbit_azimuth(k: usize, count: usize) -> f64 {
    2.0 * std::f64::consts::PI * k as f64 / count as f64
}
