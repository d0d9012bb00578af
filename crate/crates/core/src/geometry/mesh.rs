use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

/// Indexed triangle mesh with one position, normal and UV per vertex.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<Vec2>,
    pub triangles: Vec<[u32; 3]>,
    tangents: Vec<TangentFrame>,
}

/// Per-triangle tangent derived from the UV parameterization. `handedness`
/// is the sign that turns `cross(n, t)` into the UV bitangent.
#[derive(Clone, Copy, Debug)]
pub struct TangentFrame {
    pub tangent: Vec3,
    pub handedness: f64,
}

impl Mesh {
    pub fn new(
        positions: Vec<Vec3>,
        normals: Vec<Vec3>,
        uvs: Vec<Vec2>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::invalid("mesh has no triangles"));
        }
        let n = positions.len();
        if normals.len() != n || uvs.len() != n {
            return Err(Error::invalid(format!(
                "vertex attribute count mismatch: {} positions, {} normals, {} uvs",
                n,
                normals.len(),
                uvs.len()
            )));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(Error::invalid(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
        }
        for (i, nrm) in normals.iter().enumerate() {
            if !nrm.is_finite() || (nrm.length() - 1.0).abs() > 1e-4 {
                return Err(Error::invalid(format!(
                    "vertex normal {i} is not unit length"
                )));
            }
        }
        if positions.iter().any(|p| !p.is_finite())
            || uvs.iter().any(|t| !t.x.is_finite() || !t.y.is_finite())
        {
            return Err(Error::invalid("non-finite vertex data"));
        }
        let mut mesh = Mesh {
            positions,
            normals,
            uvs,
            triangles,
            tangents: Vec::new(),
        };
        mesh.tangents = (0..mesh.triangles.len())
            .map(|t| mesh.compute_tangent(t))
            .collect();
        Ok(mesh)
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    #[inline]
    pub fn triangle_positions(&self, tri: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[tri];
        [
            self.positions[a as usize],
            self.positions[b as usize],
            self.positions[c as usize],
        ]
    }

    #[inline]
    pub fn triangle_uvs(&self, tri: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[tri];
        [
            self.uvs[a as usize],
            self.uvs[b as usize],
            self.uvs[c as usize],
        ]
    }

    #[inline]
    pub fn tangent(&self, tri: usize) -> TangentFrame {
        self.tangents[tri]
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for p in &self.positions {
            lo = lo.min(*p);
            hi = hi.max(*p);
        }
        (lo, hi)
    }

    /// Radius of the sphere around the bounding box center enclosing the box.
    pub fn bounding_radius(&self) -> f64 {
        let (lo, hi) = self.bounds();
        0.5 * (hi - lo).length()
    }

    pub fn center(&self) -> Vec3 {
        let (lo, hi) = self.bounds();
        (lo + hi) * 0.5
    }

    /// Ray epsilon used for self-intersection and shadow tests.
    pub fn ray_epsilon(&self) -> f64 {
        1e-4 * self.bounding_radius()
    }

    fn compute_tangent(&self, tri: usize) -> TangentFrame {
        let [p0, p1, p2] = self.triangle_positions(tri);
        let [t0, t1, t2] = self.triangle_uvs(tri);
        let (e1, e2) = (p1 - p0, p2 - p0);
        let (d1, d2) = (t1 - t0, t2 - t0);
        let det = d1.x * d2.y - d1.y * d2.x;
        let ng = e1.cross(e2);
        if det.abs() < 1e-20 || ng.length() == 0.0 {
            return TangentFrame {
                tangent: any_perpendicular(if ng.length() > 0.0 {
                    ng.normalized()
                } else {
                    Vec3::new(0.0, 0.0, 1.0)
                }),
                handedness: 1.0,
            };
        }
        let t = (e1 * d2.y - e2 * d1.y) / det;
        let b = (e2 * d1.x - e1 * d2.x) / det;
        let n = ng.normalized();
        let handedness = if n.cross(t).dot(b) < 0.0 { -1.0 } else { 1.0 };
        TangentFrame {
            tangent: t.normalized(),
            handedness,
        }
    }
}

pub(crate) fn any_perpendicular(n: Vec3) -> Vec3 {
    let a = if n.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    n.cross(a).normalized()
}

/// Orthonormal shading frame (tangent, bitangent, normal) at a hit point.
#[derive(Clone, Copy, Debug)]
pub struct ShadingFrame {
    pub tangent: Vec3,
    pub bitangent: Vec3,
    pub normal: Vec3,
}

impl ShadingFrame {
    /// Gram-Schmidt of the triangle tangent against the shading normal.
    pub fn new(normal: Vec3, frame: TangentFrame) -> Self {
        let mut t = frame.tangent - normal * normal.dot(frame.tangent);
        if t.length() < 1e-9 {
            t = any_perpendicular(normal);
        }
        let t = t.normalized();
        let b = normal.cross(t) * frame.handedness;
        ShadingFrame {
            tangent: t,
            bitangent: b,
            normal,
        }
    }

    #[inline]
    pub fn to_world(&self, v: [f64; 3]) -> Vec3 {
        self.tangent * v[0] + self.bitangent * v[1] + self.normal * v[2]
    }
}
