//! Procedural test assets.

use super::Mesh;
use crate::math::{Vec2, Vec3};

/// Latitude-longitude sphere centered at the origin. `u` follows longitude,
/// `v` runs from the +y pole (0) to the -y pole (1); the seam column is
/// duplicated so UVs never wrap.
pub fn uv_sphere(radius: f64, segments: u32, rings: u32) -> Mesh {
    assert!(segments >= 3 && rings >= 2);
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    for i in 0..=rings {
        let theta = std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..=segments {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
            let n = Vec3::new(
                theta.sin() * phi.sin(),
                theta.cos(),
                theta.sin() * phi.cos(),
            );
            positions.push(n * radius);
            normals.push(n);
            uvs.push(Vec2::new(
                j as f64 / segments as f64,
                i as f64 / rings as f64,
            ));
        }
    }
    let idx = |i: u32, j: u32| i * (segments + 1) + j;
    let mut triangles = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            if i != 0 {
                triangles.push([a, b, d]);
            }
            if i != rings - 1 {
                triangles.push([d, b, c]);
            }
        }
    }
    Mesh::new(positions, normals, uvs, triangles).expect("sphere construction is valid")
}

/// Square of half-size `half` in the z = 0 plane facing +z, UV mapped affinely
/// with v = 0 along the top (+y) edge.
pub fn quad(half: f64) -> Mesh {
    let positions = vec![
        Vec3::new(-half, half, 0.0),
        Vec3::new(half, half, 0.0),
        Vec3::new(half, -half, 0.0),
        Vec3::new(-half, -half, 0.0),
    ];
    let uvs = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(1.0, 0.0),
        Vec2::new(1.0, 1.0),
        Vec2::new(0.0, 1.0),
    ];
    Mesh::new(
        positions,
        vec![Vec3::new(0.0, 0.0, 1.0); 4],
        uvs,
        vec![[0, 3, 2], [0, 2, 1]],
    )
    .expect("quad construction is valid")
}

/// Axis-aligned cube with each face tessellated into `subdiv x subdiv` quads
/// and laid out in a 3x2 UV atlas. `gutter` is the empty UV margin kept
/// around every chart.
pub fn cube(half: f64, subdiv: u32, gutter: f64) -> Mesh {
    assert!(subdiv >= 1);
    let faces: [(Vec3, Vec3, Vec3); 6] = [
        (
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.0, -1.0, 0.0),
        ),
        (
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, -1.0, 0.0),
        ),
        (
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ),
        (
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
        ),
        (
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
        ),
        (
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
        ),
    ];
    let (cw, ch) = (1.0 / 3.0, 0.5);
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    for (f, &(n, su, sv)) in faces.iter().enumerate() {
        let origin = Vec2::new((f % 3) as f64 * cw + gutter, (f / 3) as f64 * ch + gutter);
        let size = Vec2::new(cw - 2.0 * gutter, ch - 2.0 * gutter);
        let base = positions.len() as u32;
        for j in 0..=subdiv {
            for i in 0..=subdiv {
                let s = i as f64 / subdiv as f64;
                let t = j as f64 / subdiv as f64;
                positions.push((n + su * (2.0 * s - 1.0) + sv * (2.0 * t - 1.0)) * half);
                normals.push(n);
                uvs.push(Vec2::new(origin.x + s * size.x, origin.y + t * size.y));
            }
        }
        let idx = |i: u32, j: u32| base + j * (subdiv + 1) + i;
        for j in 0..subdiv {
            for i in 0..subdiv {
                triangles.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
            }
        }
    }
    Mesh::new(positions, normals, uvs, triangles).expect("cube construction is valid")
}
