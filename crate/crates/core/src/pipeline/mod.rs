//! File-based orchestration of the workflow: conditioning renders, seed
//! noise and attention-bias artifacts for the external diffusion stage, and
//! reconstruction of textures from the enhanced grid it returns.
//!
//! Every stage writes into one output directory and pins what it wrote in
//! `manifest.txt`. Reconstruction refuses to run if the configuration or
//! the conditioning grid changed since rendering.

mod config;
mod manifest;
pub mod selftest;

use std::path::{Path, PathBuf};

pub use config::{default_grid, PipelineConfig, MAX_BIAS_WEIGHT, MAX_VIEWS};
pub use manifest::{hash_file, sha256_hex, ManifestEntry, RunManifest, MANIFEST_NAME};
pub use selftest::{cmd_selftest, CheckResult, SelftestReport};

use crate::correspondence::{
    compute_all_scales, write_mvcb, CorrespondenceOptions, CorrespondenceSet, LatentGrid, SCALES,
};
use crate::error::{Error, Result};
use crate::geometry::{
    generate_orbit_cameras, load_obj, rasterize_gbuffer, scenes, Camera, Mesh, NormalSpace, Scene,
};
use crate::invrender::io::{loss_csv, write_checkpoint, write_material};
use crate::invrender::{optimize, InverseProblem, OptimOutcome, OptimStatus, Target};
use crate::noisegen::{channel_seed, white_noise, write_mvcn, NoiseImage, ViewNoisePlan};
use crate::render::io::{
    read_ldr_png, read_linear_png, read_pfm, write_ldr_png, write_linear_png, write_pfm,
};
use crate::render::{
    assemble_grid, procedural_material, render, split_grid, tonemap, Image, LightSet, Material,
    RenderOptions, Texture2D,
};

pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const COLOR_GRID: &str = "color_grid.png";
pub const NORMAL_GRID: &str = "normal_grid.png";
pub const GRID_SIDECAR: &str = "grid.txt";
pub const NOISE_GRID: &str = "noise/grid.mvcn";
pub const BIAS_SIDECAR: &str = "bias/bias.txt";

pub fn view_pfm(view: u32) -> String {
    format!("views/view_{view:02}.pfm")
}

pub fn view_noise(view: u32) -> String {
    format!("noise/view_{view:02}.mvcn")
}

pub fn scale_bias(scale: u32) -> String {
    format!("bias/scale_{scale}.mvcb")
}

/// Where the mesh comes from: a built-in scene or an OBJ file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SceneSource {
    Sphere,
    Cube,
    Obj(PathBuf),
}

impl SceneSource {
    /// `builtin:sphere`, `builtin:cube`, or a path to an OBJ file.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "builtin:sphere" => Ok(SceneSource::Sphere),
            "builtin:cube" => Ok(SceneSource::Cube),
            s if s.starts_with("builtin:") => {
                Err(Error::invalid(format!("unknown built-in scene {s:?}")))
            }
            s => Ok(SceneSource::Obj(PathBuf::from(s))),
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        match self {
            SceneSource::Sphere => Ok(scenes::uv_sphere(1.0, 64, 32)),
            SceneSource::Cube => Ok(scenes::cube(0.8, 4, 0.02)),
            SceneSource::Obj(p) => load_obj(p),
        }
    }
}

/// Scene, cameras, lights and initial material derived from a config.
#[derive(Clone, Debug)]
pub struct Setup {
    pub config: PipelineConfig,
    pub scene: Scene,
    pub cameras: Vec<Camera>,
    pub lights: LightSet,
    pub material: Material,
}

impl Setup {
    pub fn new(config: &PipelineConfig, source: &SceneSource) -> Result<Self> {
        config.validate()?;
        let scene = Scene::new(source.mesh()?)?;
        let cameras = orbit_cameras(config, scene.mesh())?;
        let material = load_material(config)?;
        Ok(Setup {
            config: config.clone(),
            scene,
            cameras,
            lights: config.light_set()?,
            material,
        })
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions {
            shadows: self.config.shadows,
            ..RenderOptions::default()
        }
    }

    fn rows_cols(&self) -> (u32, u32) {
        (self.config.grid_rows, self.config.grid_cols)
    }
}

/// Orbit around the mesh center. With `camera_distance = 0` the distance
/// is chosen so the bounding sphere fills about 85% of the field of view.
pub fn orbit_cameras(config: &PipelineConfig, mesh: &Mesh) -> Result<Vec<Camera>> {
    let fov = config.camera_fov_deg.to_radians();
    let distance = if config.camera_distance > 0.0 {
        config.camera_distance
    } else {
        mesh.bounding_radius() / (0.85 * 0.5 * fov).sin()
    };
    generate_orbit_cameras(
        config.views as usize,
        config.camera_elevation_deg.to_radians(),
        distance,
        fov,
        (config.image_width, config.image_height),
        mesh.center(),
    )
}

fn texture_from_image(image: Image) -> Texture2D {
    Texture2D {
        width: image.width,
        height: image.height,
        channels: image.channels,
        data: image.data,
    }
}

/// Textures named in the config, or the procedural material when none are.
pub fn load_material(config: &PipelineConfig) -> Result<Material> {
    let (a, r, n) = (&config.albedo, &config.roughness, &config.normal);
    if a.is_none() && r.is_none() && n.is_none() {
        return Ok(procedural_material(config.texture_resolution));
    }
    let (Some(a), Some(r), Some(n)) = (a, r, n) else {
        return Err(Error::invalid(
            "albedo, roughness and normal textures must be given together",
        ));
    };
    let albedo = texture_from_image(read_linear_png(a)?);
    let roughness = texture_from_image(read_pfm(r)?);
    let mut normal = texture_from_image(read_linear_png(n)?);
    for px in normal.data.chunks_mut(3) {
        px.iter_mut().for_each(|x| *x = 2.0 * *x - 1.0);
        let len = (px[0] * px[0] + px[1] * px[1] + px[2] * px[2]).sqrt();
        if len < 1e-6 {
            px.copy_from_slice(&[0.0, 0.0, 1.0]);
        } else {
            px.iter_mut().for_each(|x| *x /= len);
        }
    }
    Material::new(albedo, roughness, normal)
        .map_err(|e| Error::invalid(format!("{}: {e}", a.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the config snapshot and records it for `stage`.
fn snapshot_config(
    setup: &Setup,
    out: &Path,
    manifest: &mut RunManifest,
    stage: &str,
) -> Result<()> {
    let text = setup.config.to_text();
    let path = out.join(CONFIG_SNAPSHOT);
    if let Some(entry) = manifest.entry(CONFIG_SNAPSHOT) {
        if entry.sha256 != sha256_hex(text.as_bytes()) && entry.stage != stage {
            return Err(Error::invalid(format!(
                "{}: configuration differs from the one recorded by stage {}; use a fresh output directory",
                path.display(),
                entry.stage
            )));
        }
    }
    write_text(&path, &text)?;
    if manifest
        .entry(CONFIG_SNAPSHOT)
        .is_none_or(|e| e.stage == stage)
    {
        manifest.record(out, stage, CONFIG_SNAPSHOT)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RenderReport {
    pub files: Vec<PathBuf>,
    /// Tonemapped per-view images as written to the color grid.
    pub views: Vec<Image>,
}

/// Renders every view, writes the tonemapped color grid (gamma PNG), the
/// camera-space normal grid, per-view HDR radiance as PFM and a grid
/// sidecar.
pub fn cmd_render(setup: &Setup, out: &Path) -> Result<RenderReport> {
    const STAGE: &str = "render";
    create_dir(&out.join("views"))?;
    let mut manifest = RunManifest::load(out)?;
    manifest.begin_stage(STAGE);
    snapshot_config(setup, out, &mut manifest, STAGE)?;

    let (rows, cols) = setup.rows_cols();
    let opts = setup.render_options();
    let mut color = Vec::new();
    let mut normals = Vec::new();
    let mut written = Vec::new();
    for (v, cam) in setup.cameras.iter().enumerate() {
        let hdr = render(&setup.scene, cam, &setup.material, &setup.lights, &opts);
        let rel = view_pfm(v as u32);
        write_pfm(&out.join(&rel), &hdr.color)?;
        manifest.record(out, STAGE, &rel)?;
        written.push(rel);
        color.push(tonemap(&hdr)?.color);
        let gb = rasterize_gbuffer(&setup.scene, cam, 1);
        let bytes = gb.encode_normals(cam, NormalSpace::Camera);
        normals.push(Image {
            width: cam.width,
            height: cam.height,
            channels: 3,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        });
    }
    write_ldr_png(
        &out.join(COLOR_GRID),
        &assemble_grid(&color, rows, cols, &[0.0; 3])?,
    )?;
    write_linear_png(
        &out.join(NORMAL_GRID),
        &assemble_grid(&normals, rows, cols, &[0.0; 3])?,
    )?;
    let c = &setup.config;
    write_text(
        &out.join(GRID_SIDECAR),
        &format!(
            "views = {}\nrows = {rows}\ncols = {cols}\ntile_width = {}\ntile_height = {}\nlatent_width = {}\nlatent_height = {}\n",
            c.views, c.image_width, c.image_height, c.latent_width, c.latent_height
        ),
    )?;
    for rel in [COLOR_GRID, NORMAL_GRID, GRID_SIDECAR] {
        manifest.record(out, STAGE, rel)?;
        written.push(rel.to_string());
    }
    manifest.save(out)?;
    Ok(RenderReport {
        files: written.iter().map(|r| out.join(r)).collect(),
        views: color,
    })
}

/// Seed noise per view at the latent resolution, one MVCN file per view
/// holding all channels, plus the same planes assembled into the latent
/// grid. Padding slots receive independent white noise.
pub fn cmd_noise(setup: &Setup, out: &Path) -> Result<Vec<NoiseImage>> {
    const STAGE: &str = "noise";
    create_dir(&out.join("noise"))?;
    let mut manifest = RunManifest::load(out)?;
    manifest.begin_stage(STAGE);
    snapshot_config(setup, out, &mut manifest, STAGE)?;
    let c = &setup.config;
    let mut images = Vec::with_capacity(setup.cameras.len());
    for (v, cam) in setup.cameras.iter().enumerate() {
        let plan = ViewNoisePlan::new(
            &setup.scene,
            cam,
            v as u32,
            c.noise_resolution,
            c.subpixel_grid,
            (c.latent_width, c.latent_height),
        )?;
        let image = plan.evaluate(c.noise_seed, c.noise_channels);
        let rel = view_noise(v as u32);
        write_mvcn(&out.join(&rel), &image)?;
        manifest.record(out, STAGE, &rel)?;
        images.push(image);
    }
    write_mvcn(&out.join(NOISE_GRID), &assemble_noise_grid(&images, c)?)?;
    manifest.record(out, STAGE, NOISE_GRID)?;
    manifest.save(out)?;
    Ok(images)
}

/// Per-view planes tiled into the `rows x cols` latent grid.
pub fn assemble_noise_grid(images: &[NoiseImage], c: &PipelineConfig) -> Result<NoiseImage> {
    let (lw, lh) = (c.latent_width, c.latent_height);
    let (rows, cols) = (c.grid_rows, c.grid_cols);
    if images.len() > (rows * cols) as usize {
        return Err(Error::invalid("more noise images than grid slots"));
    }
    let (gw, gh) = (lw * cols, lh * rows);
    let plane = (gw * gh) as usize;
    let mut data = vec![0f32; plane * c.noise_channels as usize];
    for slot in 0..rows * cols {
        let (r, q) = (slot / cols, slot % cols);
        for ch in 0..c.noise_channels {
            for y in 0..lh {
                for x in 0..lw {
                    let value = match images.get(slot as usize) {
                        Some(im) => im.plane(ch)[(y * lw + x) as usize],
                        None => {
                            white_noise(channel_seed(c.noise_seed, ch), slot, y * lw + x) as f32
                        }
                    };
                    data[ch as usize * plane + ((r * lh + y) * gw + q * lw + x) as usize] = value;
                }
            }
        }
    }
    Ok(NoiseImage {
        width: gw,
        height: gh,
        channels: c.noise_channels,
        data,
    })
}

/// Correspondence pairs at every scale, one MVCB file each, and a sidecar
/// with the bias weight and grid layout. A single view has no cross-view
/// pairs and gets empty sets.
pub fn cmd_bias(setup: &Setup, out: &Path) -> Result<Vec<CorrespondenceSet>> {
    const STAGE: &str = "bias";
    create_dir(&out.join("bias"))?;
    let mut manifest = RunManifest::load(out)?;
    manifest.begin_stage(STAGE);
    snapshot_config(setup, out, &mut manifest, STAGE)?;
    let c = &setup.config;
    let grid = LatentGrid::new(
        c.views,
        c.grid_rows,
        c.grid_cols,
        c.image_width,
        c.image_height,
    )?;
    let options = CorrespondenceOptions {
        same_view: c.same_view_pairs,
    };
    let sets = if c.views >= 2 || c.same_view_pairs {
        compute_all_scales(
            &setup.scene,
            &setup.cameras,
            &grid,
            &c.neighborhood,
            options,
        )?
    } else {
        (1..=SCALES)
            .filter(|&s| grid.check_scale(s).is_ok())
            .map(|s| CorrespondenceSet::empty(s, grid.len(s)))
            .collect()
    };
    let mut sidecar = format!(
        "w = {:?}\nviews = {}\nrows = {}\ncols = {}\nimage_width = {}\nimage_height = {}\n",
        c.bias_weight, c.views, c.grid_rows, c.grid_cols, c.image_width, c.image_height
    );
    for set in &sets {
        let rel = scale_bias(set.scale);
        write_mvcb(&out.join(&rel), set)?;
        manifest.record(out, STAGE, &rel)?;
        let (w, h) = grid.latent_size(set.scale);
        sidecar.push_str(&format!(
            "scale_{} = {w}x{h} {} pairs\n",
            set.scale,
            set.len()
        ));
    }
    write_text(&out.join(BIAS_SIDECAR), &sidecar)?;
    manifest.record(out, STAGE, BIAS_SIDECAR)?;
    manifest.save(out)?;
    Ok(sets)
}

pub const RECONSTRUCT_DIR: &str = "reconstruct";

#[derive(Clone, Debug)]
pub struct ReconstructReport {
    pub outcome: OptimOutcome,
    pub problem: InverseProblem,
    pub files: Vec<PathBuf>,
}

/// Splits the enhanced grid into per-view targets and optimizes the
/// material to match them. `enhanced` defaults to the conditioning grid in
/// `out`. Textures, the loss log and a checkpoint go to `out/reconstruct`.
/// A diverged run still writes its checkpoint and then fails with a
/// numerical error.
pub fn cmd_reconstruct(
    setup: &Setup,
    out: &Path,
    enhanced: Option<&Path>,
) -> Result<ReconstructReport> {
    const STAGE: &str = "reconstruct";
    let mut manifest = RunManifest::load(out)?;
    let snapshot = manifest.verify(out, CONFIG_SNAPSHOT)?;
    if hash_file(&snapshot)? != sha256_hex(setup.config.to_text().as_bytes()) {
        return Err(Error::invalid(format!(
            "{}: configuration differs from the one used to render",
            snapshot.display()
        )));
    }
    let conditioning = manifest.verify(out, COLOR_GRID)?;
    let enhanced = enhanced.map_or(conditioning.clone(), Path::to_path_buf);
    let (grid, codes) = read_ldr_png(&enhanced)?;
    let c = &setup.config;
    let (rows, cols) = setup.rows_cols();
    if (grid.width, grid.height, grid.channels) != (c.image_width * cols, c.image_height * rows, 3)
    {
        return Err(Error::invalid(format!(
            "{}: enhanced grid is {}x{} with {} channels, expected {}x{} RGB",
            enhanced.display(),
            grid.width,
            grid.height,
            grid.channels,
            c.image_width * cols,
            c.image_height * rows
        )));
    }
    let code_grid = Image {
        data: codes.iter().map(|&b| b as f64).collect(),
        ..grid
    };
    let targets = split_grid(&code_grid, rows, cols, c.views as usize)?
        .into_iter()
        .map(|im| {
            let codes: Vec<u8> = im.data.iter().map(|&b| b as u8).collect();
            Target::from_codes(im.width, im.height, &codes)
        })
        .collect::<Result<Vec<_>>>()?;

    let problem = InverseProblem::new(
        &setup.scene,
        &setup.cameras,
        targets,
        &setup.lights,
        &c.loss,
        c.shadows,
        &setup.material,
    )?;
    let outcome = optimize(&problem, &setup.material, &c.optim)?;

    manifest.begin_stage(STAGE);
    let dir = out.join(RECONSTRUCT_DIR);
    create_dir(&dir)?;
    let mut rels = Vec::new();
    let checkpoint = format!("{RECONSTRUCT_DIR}/checkpoint.mvck");
    write_checkpoint(&out.join(&checkpoint), &outcome.state)?;
    rels.push(checkpoint);
    let csv = format!("{RECONSTRUCT_DIR}/loss.csv");
    write_text(
        &out.join(&csv),
        &loss_csv(&outcome.history, problem.view_count()),
    )?;
    rels.push(csv);
    if outcome.status == OptimStatus::Completed {
        for p in write_material(&dir, &outcome.material)? {
            let name = p
                .file_name()
                .expect("texture file name")
                .to_string_lossy()
                .into_owned();
            rels.push(format!("{RECONSTRUCT_DIR}/{name}"));
        }
    }
    for rel in &rels {
        manifest.record(out, STAGE, rel)?;
    }
    manifest.save(out)?;
    if let OptimStatus::Diverged { step } = outcome.status {
        return Err(Error::Numerical(format!(
            "optimization diverged at step {step}; state written to {}",
            out.join(&rels[0]).display()
        )));
    }
    Ok(ReconstructReport {
        files: rels.iter().map(|r| out.join(r)).collect(),
        outcome,
        problem,
    })
}
