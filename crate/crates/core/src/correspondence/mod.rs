//! Cross-view latent pixel correspondences by ray casting and reprojection.
//!
//! For a latent pixel `j` the ray through its image-space patch center hits
//! the surface at `p`. `p` is projected into every other view; if `p` and
//! that camera see each other, every latent pixel `i` whose square
//! neighborhood contains the projection gets the pair `(i, j)`, meaning
//! `i` should attend more strongly to `j`.

mod io;
pub mod oracle;

use rayon::prelude::*;

pub use io::{decode_mvcb, encode_mvcb, read_mvcb, write_mvcb, BIAS_MAGIC, BIAS_VERSION};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Projection, Ray, Scene};
use crate::math::Vec3;

/// Number of attention scales addressed by the correspondence machinery.
pub const SCALES: u32 = 4;

/// Latent layout of a set of views. Flat indices are view-major:
/// `view * (w * h) + y * w + x` at each scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentGrid {
    pub views: u32,
    pub rows: u32,
    pub cols: u32,
    pub image_width: u32,
    pub image_height: u32,
}

impl LatentGrid {
    pub fn new(
        views: u32,
        rows: u32,
        cols: u32,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        if views == 0 {
            return Err(Error::invalid("latent grid needs at least one view"));
        }
        if rows * cols < views {
            return Err(Error::invalid(format!(
                "{rows}x{cols} grid cannot hold {views} views"
            )));
        }
        if image_width % 8 != 0 || image_height % 8 != 0 || image_width == 0 || image_height == 0 {
            return Err(Error::invalid(
                "image resolution must be a positive multiple of 8",
            ));
        }
        Ok(LatentGrid {
            views,
            rows,
            cols,
            image_width,
            image_height,
        })
    }

    /// Image pixels per latent pixel side at `scale` (1-based): 8, 16, 32, 64.
    pub fn factor(scale: u32) -> u32 {
        8 << (scale - 1)
    }

    pub fn check_scale(&self, scale: u32) -> Result<()> {
        if !(1..=SCALES).contains(&scale) {
            return Err(Error::invalid(format!(
                "scale {scale} outside 1..={SCALES}"
            )));
        }
        let f = Self::factor(scale);
        if self.image_width % f != 0 || self.image_height % f != 0 {
            return Err(Error::invalid(format!(
                "image {}x{} not divisible by the scale-{scale} factor {f}",
                self.image_width, self.image_height
            )));
        }
        Ok(())
    }

    pub fn latent_size(&self, scale: u32) -> (u32, u32) {
        let f = Self::factor(scale);
        (self.image_width / f, self.image_height / f)
    }

    /// Total number of latent pixels `N` at `scale`.
    pub fn len(&self, scale: u32) -> u32 {
        let (w, h) = self.latent_size(scale);
        self.views * w * h
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn flat_index(&self, view: u32, x: u32, y: u32, scale: u32) -> u32 {
        let (w, h) = self.latent_size(scale);
        view * w * h + y * w + x
    }

    #[inline]
    pub fn unflatten(&self, index: u32, scale: u32) -> (u32, u32, u32) {
        let (w, h) = self.latent_size(scale);
        let view = index / (w * h);
        let r = index % (w * h);
        (view, r % w, r / w)
    }

    /// Position of a view's tile in the assembled grid (row-major slots).
    pub fn tile_of(&self, view: u32) -> (u32, u32) {
        (view / self.cols, view % self.cols)
    }
}

/// Square neighborhood side per scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighborhoodSpec {
    pub sides: [u32; SCALES as usize],
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        NeighborhoodSpec {
            sides: [9, 5, 3, 1],
        }
    }
}

impl NeighborhoodSpec {
    pub fn new(sides: [u32; SCALES as usize]) -> Result<Self> {
        if sides.iter().any(|s| s % 2 == 0) {
            return Err(Error::invalid(format!(
                "neighborhood sides must be odd, got {sides:?}"
            )));
        }
        Ok(NeighborhoodSpec { sides })
    }

    /// Chebyshev radius at `scale`.
    pub fn radius(&self, scale: u32) -> u32 {
        self.sides[(scale - 1) as usize] / 2
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorrespondenceOptions {
    /// Also pair latent pixels within the same view.
    pub same_view: bool,
}

/// Ordered pairs `(i, j)` of flat latent indices at one scale, sorted and unique.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrespondenceSet {
    pub scale: u32,
    pub n: u32,
    pairs: Vec<(u32, u32)>,
}

impl CorrespondenceSet {
    /// Sorts and deduplicates; rejects out-of-range indices and `i == j`.
    pub fn from_pairs(scale: u32, n: u32, mut pairs: Vec<(u32, u32)>) -> Result<Self> {
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n || i == j) {
            return Err(Error::invalid(format!(
                "invalid pair ({i}, {j}) for N = {n}"
            )));
        }
        pairs.par_sort_unstable();
        pairs.dedup();
        Ok(CorrespondenceSet { scale, n, pairs })
    }

    pub(crate) fn from_sorted_unchecked(scale: u32, n: u32, pairs: Vec<(u32, u32)>) -> Self {
        CorrespondenceSet { scale, n, pairs }
    }

    pub fn empty(scale: u32, n: u32) -> Self {
        CorrespondenceSet {
            scale,
            n,
            pairs: Vec::new(),
        }
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: u32, j: u32) -> bool {
        self.pairs.binary_search(&(i, j)).is_ok()
    }
}

/// Ray through the image-space center of latent pixel `(x, y)` at `scale`.
pub fn latent_center_ray(camera: &Camera, x: u32, y: u32, scale: u32) -> Ray {
    let f = LatentGrid::factor(scale) as f64;
    camera.ray((x as f64 + 0.5) * f, (y as f64 + 0.5) * f)
}

/// True iff `p` projects in front of `camera` inside its frustum and the
/// segment between them is unoccluded.
pub fn mutually_visible(scene: &Scene, p: Vec3, camera: &Camera) -> bool {
    match camera.project_point(p) {
        Projection::Behind => false,
        Projection::Front { x, y, .. } => {
            camera.contains(x, y) && !scene.segment_occluded(p, camera.origin)
        }
    }
}

/// Latent cell containing image point `(x, y)`.
#[inline]
pub(crate) fn latent_cell(x: f64, y: f64, factor: u32) -> (i64, i64) {
    (
        (x / factor as f64).floor() as i64,
        (y / factor as f64).floor() as i64,
    )
}

pub fn compute_correspondences(
    scene: &Scene,
    cameras: &[Camera],
    grid: &LatentGrid,
    neighborhoods: &NeighborhoodSpec,
    scale: u32,
    options: CorrespondenceOptions,
) -> Result<CorrespondenceSet> {
    if cameras.len() < 2 {
        return Err(Error::invalid("correspondences need at least two views"));
    }
    if cameras.len() != grid.views as usize {
        return Err(Error::invalid(format!(
            "{} cameras for a grid of {} views",
            cameras.len(),
            grid.views
        )));
    }
    grid.check_scale(scale)?;
    for c in cameras {
        if (c.width, c.height) != (grid.image_width, grid.image_height) {
            return Err(Error::invalid(
                "camera resolution differs from the latent grid image size",
            ));
        }
    }
    let (w, h) = grid.latent_size(scale);
    let radius = neighborhoods.radius(scale) as i64;
    let factor = LatentGrid::factor(scale);
    let n = grid.len(scale);

    let per_source: Vec<Vec<(u32, u32)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let (vb, x, y) = grid.unflatten(j, scale);
            let ray = latent_center_ray(&cameras[vb as usize], x, y, scale);
            let Some(hit) = scene.trace(&ray) else {
                return Vec::new();
            };
            let mut out = Vec::new();
            for (va, cam) in cameras.iter().enumerate() {
                let va = va as u32;
                if va == vb && !options.same_view {
                    continue;
                }
                let Projection::Front { x: qx, y: qy, .. } = cam.project_point(hit.position) else {
                    continue;
                };
                if !cam.contains(qx, qy) || scene.segment_occluded(hit.position, cam.origin) {
                    continue;
                }
                let (cx, cy) = latent_cell(qx, qy, factor);
                let x0 = (cx - radius).max(0);
                let x1 = (cx + radius).min(w as i64 - 1);
                let y0 = (cy - radius).max(0);
                let y1 = (cy + radius).min(h as i64 - 1);
                for iy in y0..=y1 {
                    for ix in x0..=x1 {
                        let i = grid.flat_index(va, ix as u32, iy as u32, scale);
                        if i != j {
                            out.push((i, j));
                        }
                    }
                }
            }
            out
        })
        .collect();
    let pairs: Vec<(u32, u32)> = per_source.into_iter().flatten().collect();
    CorrespondenceSet::from_pairs(scale, n, pairs)
}

/// Correspondences at every scale the image resolution supports.
pub fn compute_all_scales(
    scene: &Scene,
    cameras: &[Camera],
    grid: &LatentGrid,
    neighborhoods: &NeighborhoodSpec,
    options: CorrespondenceOptions,
) -> Result<Vec<CorrespondenceSet>> {
    (1..=SCALES)
        .filter(|&s| grid.check_scale(s).is_ok())
        .map(|s| compute_correspondences(scene, cameras, grid, neighborhoods, s, options))
        .collect()
}
