//! Minimal Wavefront OBJ reader: `v`, `vt`, `vn` and `f` records only.

use std::collections::HashMap;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut v = Vec::new();
    let mut vt = Vec::new();
    let mut vn = Vec::new();
    // (position, uv, normal) per corner, normal optional
    let mut faces: Vec<[(usize, usize, Option<usize>); 3]> = Vec::new();

    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += line.len() as u64;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            offset: line_offset,
            message,
        };
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        let tag = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        let floats = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n {
                return Err(err(format!("`{tag}` needs {n} values")));
            }
            rest[..n]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| err(format!("bad number `{s}`")))
                })
                .collect()
        };
        match tag {
            "v" => {
                let f = floats(3)?;
                v.push(Vec3::new(f[0], f[1], f[2]));
            }
            "vt" => {
                let f = floats(2)?;
                vt.push(Vec2::new(f[0], f[1]));
            }
            "vn" => {
                let f = floats(3)?;
                vn.push(Vec3::new(f[0], f[1], f[2]));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(err("face needs at least 3 corners".into()));
                }
                let mut corners = Vec::with_capacity(rest.len());
                for c in &rest {
                    corners.push(parse_corner(c, v.len(), vt.len(), vn.len()).map_err(&err)?);
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            other => return Err(err(format!("unsupported record `{other}`"))),
        }
    }
    if faces.is_empty() {
        return Err(Error::invalid(format!("{}: no faces", path.display())));
    }

    // Smooth normals for corners without `vn`, accumulated per position.
    let mut smooth = vec![Vec3::ZERO; v.len()];
    for f in &faces {
        let n = (v[f[1].0] - v[f[0].0]).cross(v[f[2].0] - v[f[0].0]);
        for c in f {
            smooth[c.0] += n;
        }
    }

    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::with_capacity(faces.len());
    let mut remap: HashMap<(usize, usize, Option<usize>), u32> = HashMap::new();
    for f in &faces {
        let mut tri = [0u32; 3];
        for (k, c) in f.iter().enumerate() {
            tri[k] = *remap.entry(*c).or_insert_with(|| {
                positions.push(v[c.0]);
                uvs.push(vt[c.1]);
                let n = match c.2 {
                    Some(i) => vn[i],
                    None => smooth[c.0],
                };
                normals.push(if n.length() > 0.0 {
                    n.normalized()
                } else {
                    Vec3::new(0.0, 0.0, 1.0)
                });
                (positions.len() - 1) as u32
            });
        }
        triangles.push(tri);
    }
    Mesh::new(positions, normals, uvs, triangles)
}

fn parse_corner(
    s: &str,
    nv: usize,
    nvt: usize,
    nvn: usize,
) -> std::result::Result<(usize, usize, Option<usize>), String> {
    let mut it = s.split('/');
    let resolve = |tok: Option<&str>,
                   count: usize,
                   what: &str|
     -> std::result::Result<Option<usize>, String> {
        match tok {
            None | Some("") => Ok(None),
            Some(t) => {
                let i: i64 = t.parse().map_err(|_| format!("bad {what} index `{t}`"))?;
                let idx = if i < 0 { count as i64 + i } else { i - 1 };
                if idx < 0 || idx as usize >= count {
                    return Err(format!("{what} index {i} out of range"));
                }
                Ok(Some(idx as usize))
            }
        }
    };
    let p = resolve(it.next(), nv, "vertex")?.ok_or("missing vertex index")?;
    let t = resolve(it.next(), nvt, "texcoord")?
        .ok_or_else(|| format!("corner `{s}` has no texcoord index"))?;
    let n = resolve(it.next(), nvn, "normal")?;
    Ok((p, t, n))
}
