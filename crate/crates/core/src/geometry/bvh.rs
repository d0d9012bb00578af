//! Binned-SAH bounding volume hierarchy over a triangle mesh.

use std::sync::Arc;

use super::{HitRecord, Mesh, Ray};
use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

const LEAF_SIZE: usize = 4;
const BINS: usize = 12;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    const EMPTY: Aabb = Aabb {
        lo: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        hi: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    fn grow(&mut self, p: Vec3) {
        self.lo = self.lo.min(p);
        self.hi = self.hi.max(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.min(o.lo);
        self.hi = self.hi.max(o.hi);
    }

    fn area(&self) -> f64 {
        let d = self.hi - self.lo;
        if d.x < 0.0 {
            return 0.0;
        }
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    /// Slab test; returns the entry distance if the box overlaps `(t_min, t_max)`.
    #[inline]
    fn hit(&self, origin: Vec3, inv_dir: Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let mut t0 = t_min;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut near = (self.lo[a] - origin[a]) * inv_dir[a];
            let mut far = (self.hi[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN from 0 * inf: treat as unbounded along this axis
            if near.is_nan() || far.is_nan() {
                continue;
            }
            // widen slightly so hits exactly on a face are not lost
            far *= 1.0 + 4.0 * f64::EPSILON;
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    bounds: Aabb,
    /// First primitive index for leaves, first child index for interior nodes.
    start: u32,
    /// Primitive count; zero for interior nodes.
    count: u32,
}

/// Acceleration structure shared by everything that casts rays.
#[derive(Clone, Debug)]
pub struct Bvh {
    mesh: Arc<Mesh>,
    nodes: Vec<Node>,
    prims: Vec<u32>,
}

impl Bvh {
    pub fn build(mesh: Arc<Mesh>) -> Result<Self> {
        if mesh.triangles.is_empty() {
            return Err(Error::invalid(
                "cannot build an acceleration structure for an empty mesh",
            ));
        }
        let n = mesh.triangle_count();
        let mut boxes = Vec::with_capacity(n);
        let mut centroids = Vec::with_capacity(n);
        for t in 0..n {
            let mut b = Aabb::EMPTY;
            for p in mesh.triangle_positions(t) {
                b.grow(p);
            }
            centroids.push((b.lo + b.hi) * 0.5);
            boxes.push(b);
        }
        let mut bvh = Bvh {
            mesh,
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            prims: (0..n as u32).collect(),
        };
        bvh.nodes.push(Node {
            bounds: Aabb::EMPTY,
            start: 0,
            count: n as u32,
        });
        bvh.subdivide(0, &boxes, &centroids);
        Ok(bvh)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.count > 0).count()
    }

    fn subdivide(&mut self, node: usize, boxes: &[Aabb], centroids: &[Vec3]) {
        let start = self.nodes[node].start as usize;
        let count = self.nodes[node].count as usize;
        let mut bounds = Aabb::EMPTY;
        let mut cbounds = Aabb::EMPTY;
        for &p in &self.prims[start..start + count] {
            bounds.merge(&boxes[p as usize]);
            cbounds.grow(centroids[p as usize]);
        }
        self.nodes[node].bounds = bounds;
        if count <= LEAF_SIZE {
            return;
        }

        let mut best: Option<(usize, usize, f64)> = None;
        for axis in 0..3 {
            let lo = cbounds.lo[axis];
            let extent = cbounds.hi[axis] - lo;
            if extent <= 0.0 {
                continue;
            }
            let mut bin_boxes = [Aabb::EMPTY; BINS];
            let mut bin_counts = [0usize; BINS];
            for &p in &self.prims[start..start + count] {
                let b = bin_index(centroids[p as usize][axis], lo, extent);
                bin_boxes[b].merge(&boxes[p as usize]);
                bin_counts[b] += 1;
            }
            for split in 1..BINS {
                let (mut lb, mut rb) = (Aabb::EMPTY, Aabb::EMPTY);
                let (mut lc, mut rc) = (0, 0);
                for b in 0..split {
                    lb.merge(&bin_boxes[b]);
                    lc += bin_counts[b];
                }
                for b in split..BINS {
                    rb.merge(&bin_boxes[b]);
                    rc += bin_counts[b];
                }
                if lc == 0 || rc == 0 {
                    continue;
                }
                let cost = lb.area() * lc as f64 + rb.area() * rc as f64;
                if best.map_or(true, |(_, _, c)| cost < c) {
                    best = Some((axis, split, cost));
                }
            }
        }

        let mid = match best {
            Some((axis, split, _)) => {
                let lo = cbounds.lo[axis];
                let extent = cbounds.hi[axis] - lo;
                let slice = &mut self.prims[start..start + count];
                let mut i = 0;
                for j in 0..slice.len() {
                    if bin_index(centroids[slice[j] as usize][axis], lo, extent) < split {
                        slice.swap(i, j);
                        i += 1;
                    }
                }
                start + i
            }
            // all centroids coincide: split the range in half
            None => start + count / 2,
        };

        let left = self.nodes.len();
        self.nodes.push(Node {
            bounds: Aabb::EMPTY,
            start: start as u32,
            count: (mid - start) as u32,
        });
        self.nodes.push(Node {
            bounds: Aabb::EMPTY,
            start: mid as u32,
            count: (start + count - mid) as u32,
        });
        self.nodes[node].start = left as u32;
        self.nodes[node].count = 0;
        self.subdivide(left, boxes, centroids);
        self.subdivide(left + 1, boxes, centroids);
    }

    /// Nearest hit with `t` in the open interval `(t_min, t_max)`.
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<HitRecord> {
        let inv = Vec3::new(
            1.0 / ray.direction.x,
            1.0 / ray.direction.y,
            1.0 / ray.direction.z,
        );
        let mut best: Option<(usize, f64, f64, f64)> = None;
        let mut t_best = t_max;
        self.nodes[0].bounds.hit(ray.origin, inv, t_min, t_best)?;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(idx) = stack.pop() {
            let node = self.nodes[idx as usize];
            if node.bounds.hit(ray.origin, inv, t_min, t_best).is_none() {
                continue;
            }
            if node.count > 0 {
                for &p in &self.prims[node.start as usize..(node.start + node.count) as usize] {
                    if let Some((t, b1, b2)) = intersect_triangle(&self.mesh, p as usize, ray) {
                        let closer =
                            t < t_best || (t == t_best && best.is_some_and(|b| (p as usize) < b.0));
                        if t > t_min && closer {
                            t_best = t;
                            best = Some((p as usize, t, b1, b2));
                        }
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = self.nodes[l as usize]
                    .bounds
                    .hit(ray.origin, inv, t_min, t_best);
                let dr = self.nodes[r as usize]
                    .bounds
                    .hit(ray.origin, inv, t_min, t_best);
                // push the farther child first so the nearer one is visited first
                match (dl, dr) {
                    (Some(a), Some(b)) => {
                        let (near, far) = if a <= b { (l, r) } else { (r, l) };
                        stack.push(far);
                        stack.push(near);
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        best.map(|(tri, t, b1, b2)| make_hit(&self.mesh, tri, ray, t, b1, b2))
    }

    /// True if anything is hit in `(t_min, t_max)`.
    pub fn occluded(&self, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        let inv = Vec3::new(
            1.0 / ray.direction.x,
            1.0 / ray.direction.y,
            1.0 / ray.direction.z,
        );
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(idx) = stack.pop() {
            let node = self.nodes[idx as usize];
            if node.bounds.hit(ray.origin, inv, t_min, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                for &p in &self.prims[node.start as usize..(node.start + node.count) as usize] {
                    if let Some((t, _, _)) = intersect_triangle(&self.mesh, p as usize, ray) {
                        if t > t_min && t < t_max {
                            return true;
                        }
                    }
                }
            } else {
                stack.push(node.start);
                stack.push(node.start + 1);
            }
        }
        false
    }
}

#[inline]
fn bin_index(c: f64, lo: f64, extent: f64) -> usize {
    (((c - lo) / extent * BINS as f64) as usize).min(BINS - 1)
}

/// Möller-Trumbore; returns `(t, b1, b2)` for any `t` along the line, edges inclusive.
#[inline]
pub(crate) fn intersect_triangle(mesh: &Mesh, tri: usize, ray: &Ray) -> Option<(f64, f64, f64)> {
    let [p0, p1, p2] = mesh.triangle_positions(tri);
    let e1 = p1 - p0;
    let e2 = p2 - p0;
    let pv = ray.direction.cross(e2);
    let det = e1.dot(pv);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tv = ray.origin - p0;
    let b1 = tv.dot(pv) * inv_det;
    if !(0.0..=1.0).contains(&b1) {
        return None;
    }
    let qv = tv.cross(e1);
    let b2 = ray.direction.dot(qv) * inv_det;
    if b2 < 0.0 || b1 + b2 > 1.0 {
        return None;
    }
    let t = e2.dot(qv) * inv_det;
    Some((t, b1, b2))
}

pub(crate) fn make_hit(mesh: &Mesh, tri: usize, ray: &Ray, t: f64, b1: f64, b2: f64) -> HitRecord {
    let [i0, i1, i2] = mesh.triangles[tri];
    let b0 = 1.0 - b1 - b2;
    let [p0, p1, p2] = mesh.triangle_positions(tri);
    let uv = mesh.uvs[i0 as usize] * b0 + mesh.uvs[i1 as usize] * b1 + mesh.uvs[i2 as usize] * b2;
    let n = mesh.normals[i0 as usize] * b0
        + mesh.normals[i1 as usize] * b1
        + mesh.normals[i2 as usize] * b2;
    let geometric_normal = (p1 - p0).cross(p2 - p0).normalized();
    HitRecord {
        position: ray.at(t),
        shading_normal: n.normalized(),
        geometric_normal,
        uv: Vec2::new(uv.x, uv.y),
        triangle: tri as u32,
        t,
        barycentrics: [b0, b1, b2],
    }
}

/// Exhaustive nearest-hit search over every triangle. Used as an oracle.
pub fn intersect_brute_force(mesh: &Mesh, ray: &Ray, t_min: f64, t_max: f64) -> Option<HitRecord> {
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for tri in 0..mesh.triangle_count() {
        if let Some((t, b1, b2)) = intersect_triangle(mesh, tri, ray) {
            if t > t_min && t < best.map_or(t_max, |b| b.1) {
                best = Some((tri, t, b1, b2));
            }
        }
    }
    best.map(|(tri, t, b1, b2)| make_hit(mesh, tri, ray, t, b1, b2))
}
