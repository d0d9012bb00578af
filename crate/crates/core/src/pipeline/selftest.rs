//! Quick internal consistency checks on a built-in sphere.

use std::fmt;

use super::PipelineConfig;
use crate::correspondence::oracle::brute_force_correspondences;
use crate::correspondence::{compute_correspondences, CorrespondenceOptions, LatentGrid};
use crate::error::Result;
use crate::geometry::{generate_orbit_cameras, scenes, Scene};
use crate::invrender::{
    finite_difference_check, InverseProblem, LatentMaterial, LossConfig, Target, TextureKind,
};
use crate::math::Vec3;
use crate::noisegen::{noise_statistics, ViewNoisePlan};
use crate::render::{procedural_material, render, tonemap, Material, RenderOptions};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

fn noise_check(config: &PipelineConfig) -> Result<CheckResult> {
    let scene = Scene::new(scenes::uv_sphere(1.0, 48, 24))?;
    let cams = generate_orbit_cameras(4, 0.35, 2.8, 0.9, (256, 256), Vec3::ZERO)?;
    let plans = cams
        .iter()
        .enumerate()
        .map(|(v, c)| {
            ViewNoisePlan::new(
                &scene,
                c,
                v as u32,
                config.noise_resolution,
                config.subpixel_grid,
                (32, 32),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let s = noise_statistics(&plans, 2000);
    Ok(CheckResult {
        name: "noise statistics".into(),
        passed: s.passes(0.05, 0.02, 0.05, 5.0),
        detail: format!(
            "{} pixels, exact variance [{:.4}, {:.4}], pooled mean {:.4}, pooled variance {:.4}, pooled rho {:.4}",
            s.pixels, s.exact_variance.0, s.exact_variance.1, s.pooled_mean, s.pooled_variance, s.pooled_rho
        ),
    })
}

fn correspondence_check() -> Result<CheckResult> {
    let scene = Scene::new(scenes::uv_sphere(1.0, 32, 16))?;
    let cams = generate_orbit_cameras(3, 0.3, 3.0, 0.8, (128, 128), Vec3::ZERO)?;
    let grid = LatentGrid::new(3, 2, 2, 128, 128)?;
    let spec = Default::default();
    let mut detail = Vec::new();
    let mut passed = true;
    for scale in 1..=2 {
        let fast = compute_correspondences(
            &scene,
            &cams,
            &grid,
            &spec,
            scale,
            CorrespondenceOptions::default(),
        )?;
        let slow = brute_force_correspondences(
            scene.mesh(),
            &cams,
            &grid,
            &spec,
            scale,
            CorrespondenceOptions::default(),
        )?;
        passed &= fast == slow;
        detail.push(format!(
            "scale {scale}: {} vs {} pairs",
            fast.len(),
            slow.len()
        ));
    }
    Ok(CheckResult {
        name: "correspondence oracle".into(),
        passed,
        detail: detail.join(", "),
    })
}

fn gradient_check() -> Result<CheckResult> {
    let scene = Scene::new(scenes::uv_sphere(1.0, 32, 16))?;
    let lights = PipelineConfig::default().light_set()?;
    let cams = generate_orbit_cameras(3, 0.3, 3.0, 0.8, (40, 40), Vec3::ZERO)?;
    let truth = procedural_material(16);
    let targets = cams
        .iter()
        .map(|c| {
            Target::exact(
                &tonemap(&render(
                    &scene,
                    c,
                    &truth,
                    &lights,
                    &RenderOptions::default(),
                ))?
                .color,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let init = Material::uniform(16, [0.4, 0.5, 0.6], 0.5)?;
    let problem = InverseProblem::new(
        &scene,
        &cams,
        targets,
        &lights,
        &LossConfig::default(),
        false,
        &init,
    )?;
    let latent = LatentMaterial::encode(&init);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for kind in TextureKind::ALL {
        let h = if kind == TextureKind::Normal {
            1e-4
        } else {
            1e-3
        };
        let samples = finite_difference_check(&problem, &latent, kind, 10, h, 1)?;
        count += samples.len();
        worst = samples
            .iter()
            .map(|s| s.relative_error())
            .fold(worst, f64::max);
    }
    Ok(CheckResult {
        name: "gradient check".into(),
        passed: count == 30 && worst < 1e-3,
        detail: format!("{count} samples, worst relative error {worst:.2e}"),
    })
}

/// Runs the noise statistics, correspondence oracle and gradient checks.
/// Noise settings (texture resolution, subpixel grid) come from `config`.
pub fn cmd_selftest(config: &PipelineConfig) -> Result<SelftestReport> {
    Ok(SelftestReport {
        checks: vec![
            noise_check(config)?,
            correspondence_check()?,
            gradient_check()?,
        ],
    })
}
