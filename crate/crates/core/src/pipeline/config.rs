//! Plain-text `key = value` configuration. Blank lines and `#` comments are
//! ignored; unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::correspondence::NeighborhoodSpec;
use crate::error::{Error, Result};
use crate::invrender::{LossConfig, OptimConfig};
use crate::math::Vec3;
use crate::render::{DirectionalLight, LightSet};

pub const MAX_VIEWS: u32 = 16;
pub const MAX_BIAS_WEIGHT: f64 = 3.5;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub views: u32,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub latent_width: u32,
    pub latent_height: u32,
    pub noise_seed: u64,
    pub noise_channels: u32,
    pub subpixel_grid: u32,
    pub noise_resolution: u32,
    pub bias_weight: f64,
    pub neighborhood: NeighborhoodSpec,
    pub same_view_pairs: bool,
    /// Recorded for the diffusion stage only.
    pub cfg_scale: f64,
    pub tile_scale: f64,
    pub noise_strength: f64,
    pub camera_elevation_deg: f64,
    pub camera_fov_deg: f64,
    /// Orbit radius; 0 frames the bounding sphere automatically.
    pub camera_distance: f64,
    pub texture_resolution: u32,
    pub albedo: Option<PathBuf>,
    pub roughness: Option<PathBuf>,
    pub normal: Option<PathBuf>,
    pub lights: Vec<DirectionalLight>,
    pub ambient: [f64; 3],
    pub shadows: bool,
    pub loss: LossConfig,
    pub optim: OptimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            views: 9,
            grid_rows: 3,
            grid_cols: 3,
            image_width: 512,
            image_height: 512,
            latent_width: 64,
            latent_height: 64,
            noise_seed: 0,
            noise_channels: 4,
            subpixel_grid: 4,
            noise_resolution: 1024,
            bias_weight: 1.5,
            neighborhood: NeighborhoodSpec::default(),
            same_view_pairs: false,
            cfg_scale: 7.5,
            tile_scale: 1.0,
            noise_strength: 1.0,
            camera_elevation_deg: 20.0,
            camera_fov_deg: 50.0,
            camera_distance: 0.0,
            texture_resolution: 256,
            albedo: None,
            roughness: None,
            normal: None,
            lights: default_lights(),
            ambient: [0.1; 3],
            shadows: true,
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

fn default_lights() -> Vec<DirectionalLight> {
    vec![
        DirectionalLight {
            direction: Vec3::new(0.4, 0.7, 0.6).normalized(),
            radiance: [2.5; 3],
        },
        DirectionalLight {
            direction: Vec3::new(-0.7, 0.2, 0.5).normalized(),
            radiance: [1.2; 3],
        },
        DirectionalLight {
            direction: Vec3::new(0.1, -0.6, -0.8).normalized(),
            radiance: [1.5; 3],
        },
    ]
}

/// Smallest near-square grid holding `views` tiles.
pub fn default_grid(views: u32) -> (u32, u32) {
    let cols = (views as f64).sqrt().ceil() as u32;
    let rows = views.div_ceil(cols.max(1));
    (rows.max(1), cols.max(1))
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| Error::invalid(format!("line {line}: cannot parse {key} = {v:?}"))),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::invalid(format!(
                    "line {line}: {key} expects true or false, got {v:?}"
                ))),
            },
        }
    }

    fn floats(&mut self, key: &str) -> Result<Option<(usize, Vec<f64>)>> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        if v.trim().is_empty() {
            return Ok(Some((line, Vec::new())));
        }
        let xs = v
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| {
                Error::invalid(format!(
                    "line {line}: {key} expects comma-separated numbers"
                ))
            })?;
        Ok(Some((line, xs)))
    }

    fn path(&mut self, key: &str, base: &Path) -> Option<PathBuf> {
        self.take(key)
            .filter(|(_, v)| !v.is_empty())
            .map(|(_, v)| base.join(v))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::InvalidInput(m) => Error::invalid(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Parses config text; relative texture paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", k + 1)))?;
            let key = key.trim().to_string();
            if map
                .insert(key.clone(), (k + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::invalid(format!(
                    "line {}: duplicate key {key}",
                    k + 1
                )));
            }
        }
        let mut e = Entries { map };
        let d = PipelineConfig::default();

        let views = e.parse("views", d.views)?;
        let (rows, cols) = default_grid(views);
        let mut c = PipelineConfig {
            views,
            grid_rows: e.parse("grid_rows", rows)?,
            grid_cols: e.parse("grid_cols", cols)?,
            image_width: e.parse("image_width", d.image_width)?,
            image_height: e.parse("image_height", d.image_height)?,
            latent_width: 0,
            latent_height: 0,
            noise_seed: e.parse("noise_seed", d.noise_seed)?,
            noise_channels: e.parse("noise_channels", d.noise_channels)?,
            subpixel_grid: e.parse("subpixel_grid", d.subpixel_grid)?,
            noise_resolution: e.parse("noise_resolution", d.noise_resolution)?,
            bias_weight: e.parse("bias_w", d.bias_weight)?,
            neighborhood: d.neighborhood,
            same_view_pairs: e.bool("same_view_pairs", d.same_view_pairs)?,
            cfg_scale: e.parse("cfg_scale", d.cfg_scale)?,
            tile_scale: e.parse("tile_scale", d.tile_scale)?,
            noise_strength: e.parse("noise_strength", d.noise_strength)?,
            camera_elevation_deg: e.parse("camera_elevation_deg", d.camera_elevation_deg)?,
            camera_fov_deg: e.parse("camera_fov_deg", d.camera_fov_deg)?,
            camera_distance: e.parse("camera_distance", d.camera_distance)?,
            texture_resolution: e.parse("texture_resolution", d.texture_resolution)?,
            albedo: e.path("albedo", base),
            roughness: e.path("roughness", base),
            normal: e.path("normal", base),
            lights: d.lights,
            ambient: d.ambient,
            shadows: e.bool("shadows", d.shadows)?,
            loss: LossConfig {
                epsilon: e.parse("loss_epsilon", d.loss.epsilon)?,
                margin: e.parse("loss_margin", d.loss.margin)?,
                cosine_power: e.parse("loss_cosine_power", d.loss.cosine_power)?,
                view_weights: Vec::new(),
            },
            optim: OptimConfig {
                steps: e.parse("steps", d.optim.steps)?,
                learning_rate: e.parse("learning_rate", d.optim.learning_rate)?,
                batch: e.parse("batch", d.optim.batch)?,
                seed: e.parse("optim_seed", d.optim.seed)?,
                ..d.optim
            },
        };
        c.latent_width = e.parse("latent_width", c.image_width / 8)?;
        c.latent_height = e.parse("latent_height", c.image_height / 8)?;
        if let Some((line, xs)) = e.floats("neighborhood")? {
            let sides: [u32; 4] = xs
                .iter()
                .map(|&x| x as u32)
                .collect::<Vec<_>>()
                .try_into()
                .map_err(|_| {
                    Error::invalid(format!("line {line}: neighborhood expects 4 sides"))
                })?;
            c.neighborhood = NeighborhoodSpec::new(sides)?;
        }
        if let Some((line, xs)) = e.floats("ambient")? {
            c.ambient = xs
                .try_into()
                .map_err(|_| Error::invalid(format!("line {line}: ambient expects 3 values")))?;
        }
        if let Some((_, xs)) = e.floats("view_weights")? {
            c.loss.view_weights = xs;
        }
        if let Some((line, v)) = e.take("lights") {
            c.lights = parse_lights(&v).map_err(|m| Error::invalid(format!("line {line}: {m}")))?;
        }
        if let Some((key, (line, _))) = e.map.into_iter().next() {
            return Err(Error::invalid(format!("line {line}: unknown key {key}")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(1..=MAX_VIEWS).contains(&self.views) {
            return bad(format!(
                "views must be in [1, {MAX_VIEWS}], got {}",
                self.views
            ));
        }
        if self.grid_rows == 0
            || self.grid_cols == 0
            || self.grid_rows * self.grid_cols < self.views
        {
            return bad(format!(
                "a {}x{} grid cannot hold {} views",
                self.grid_rows, self.grid_cols, self.views
            ));
        }
        if !(0.0..=MAX_BIAS_WEIGHT).contains(&self.bias_weight) {
            return bad(format!(
                "bias_w must lie in [0, {MAX_BIAS_WEIGHT}], got {}",
                self.bias_weight
            ));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        if self.image_width % 8 != 0 || self.image_height % 8 != 0 {
            return bad(format!(
                "image size {}x{} is not a multiple of 8",
                self.image_width, self.image_height
            ));
        }
        if (self.latent_width * 8, self.latent_height * 8) != (self.image_width, self.image_height)
        {
            return bad(format!(
                "latent size {}x{} must be the image size divided by 8",
                self.latent_width, self.latent_height
            ));
        }
        if self.noise_channels == 0 || self.subpixel_grid == 0 {
            return bad("noise_channels and subpixel_grid must be positive".into());
        }
        if !self.noise_resolution.is_power_of_two() || !(64..=4096).contains(&self.noise_resolution)
        {
            return bad(format!(
                "noise_resolution must be a power of two in [64, 4096], got {}",
                self.noise_resolution
            ));
        }
        if self.texture_resolution == 0 {
            return bad("texture_resolution must be positive".into());
        }
        if !(self.camera_fov_deg > 0.0 && self.camera_fov_deg < 180.0) {
            return bad("camera_fov_deg must lie in (0, 180)".into());
        }
        if !(self.camera_distance >= 0.0) {
            return bad("camera_distance must be non-negative".into());
        }
        if self.ambient.iter().any(|a| !(*a >= 0.0)) {
            return bad("ambient radiance must be non-negative".into());
        }
        if !self.loss.view_weights.is_empty() && self.loss.view_weights.len() != self.views as usize
        {
            return bad(format!(
                "{} view weights for {} views",
                self.loss.view_weights.len(),
                self.views
            ));
        }
        self.loss.validate()?;
        if self.optim.batch == 0 || !(self.optim.learning_rate > 0.0) {
            return bad("batch and learning_rate must be positive".into());
        }
        self.light_set().map(|_| ())
    }

    pub fn light_set(&self) -> Result<LightSet> {
        LightSet::new(self.lights.clone(), self.ambient)
    }

    /// Canonical text form listing every key; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let list = |xs: &[f64]| {
            xs.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        kv("views", self.views.to_string());
        kv("grid_rows", self.grid_rows.to_string());
        kv("grid_cols", self.grid_cols.to_string());
        kv("image_width", self.image_width.to_string());
        kv("image_height", self.image_height.to_string());
        kv("latent_width", self.latent_width.to_string());
        kv("latent_height", self.latent_height.to_string());
        kv("noise_seed", self.noise_seed.to_string());
        kv("noise_channels", self.noise_channels.to_string());
        kv("subpixel_grid", self.subpixel_grid.to_string());
        kv("noise_resolution", self.noise_resolution.to_string());
        kv("bias_w", format!("{:?}", self.bias_weight));
        kv(
            "neighborhood",
            self.neighborhood
                .sides
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("same_view_pairs", self.same_view_pairs.to_string());
        kv("cfg_scale", format!("{:?}", self.cfg_scale));
        kv("tile_scale", format!("{:?}", self.tile_scale));
        kv("noise_strength", format!("{:?}", self.noise_strength));
        kv(
            "camera_elevation_deg",
            format!("{:?}", self.camera_elevation_deg),
        );
        kv("camera_fov_deg", format!("{:?}", self.camera_fov_deg));
        kv("camera_distance", format!("{:?}", self.camera_distance));
        kv("texture_resolution", self.texture_resolution.to_string());
        kv("albedo", path(&self.albedo));
        kv("roughness", path(&self.roughness));
        kv("normal", path(&self.normal));
        kv(
            "lights",
            self.lights
                .iter()
                .map(|l| {
                    let d = l.direction;
                    list(&[d.x, d.y, d.z, l.radiance[0], l.radiance[1], l.radiance[2]])
                })
                .collect::<Vec<_>>()
                .join("; "),
        );
        kv("ambient", list(&self.ambient));
        kv("shadows", self.shadows.to_string());
        kv("loss_epsilon", format!("{:?}", self.loss.epsilon));
        kv("loss_margin", self.loss.margin.to_string());
        kv("loss_cosine_power", format!("{:?}", self.loss.cosine_power));
        kv("view_weights", list(&self.loss.view_weights));
        kv("steps", self.optim.steps.to_string());
        kv("learning_rate", format!("{:?}", self.optim.learning_rate));
        kv("batch", self.optim.batch.to_string());
        kv("optim_seed", self.optim.seed.to_string());
        s
    }
}

/// `dx,dy,dz,r,g,b` per light, lights separated by `;`. An empty value
/// means no directional lights.
fn parse_lights(v: &str) -> std::result::Result<Vec<DirectionalLight>, String> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let xs: Vec<f64> = item
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format!("bad light {item:?}"))?;
            if xs.len() != 6 {
                return Err(format!(
                    "light {item:?} needs 6 values: direction and radiance"
                ));
            }
            Ok(DirectionalLight {
                direction: Vec3::new(xs[0], xs[1], xs[2]),
                radiance: [xs[3], xs[4], xs[5]],
            })
        })
        .collect()
}
