use super::io::*;
use super::*;
use crate::geometry::{generate_orbit_cameras, scenes, Camera};
use crate::math::Vec3;
use crate::render::io::encode_ldr;
use crate::render::{render, tonemap, DirectionalLight, RenderOptions};
use std::path::Path;

fn lights() -> LightSet {
    LightSet::new(
        vec![
            DirectionalLight {
                direction: Vec3::new(0.4, 0.7, 0.6),
                radiance: [2.5, 2.5, 2.5],
            },
            DirectionalLight {
                direction: Vec3::new(-0.8, 0.1, 0.5),
                radiance: [0.8, 0.9, 1.1],
            },
        ],
        [0.08, 0.08, 0.08],
    )
    .unwrap()
}

fn material(res: u32) -> Material {
    let albedo = Texture2D::from_fn(res, res, 3, |u, v| {
        vec![
            0.5 + 0.35 * (9.0 * u).sin(),
            0.45 + 0.3 * (7.0 * v).cos(),
            0.3 + 0.2 * (5.0 * (u + v)).sin(),
        ]
    });
    let rough = Texture2D::from_fn(res, res, 1, |u, v| {
        vec![0.4 + 0.2 * (6.0 * u).cos() * (4.0 * v).sin()]
    });
    let normal = Texture2D::from_fn(res, res, 3, |u, v| {
        let n = Vec3::new(0.2 * (11.0 * u).sin(), 0.2 * (13.0 * v).cos(), 1.0).normalized();
        vec![n.x, n.y, n.z]
    });
    Material::new(albedo, rough, normal).unwrap()
}

fn sphere() -> Scene {
    Scene::new(scenes::uv_sphere(1.0, 32, 16)).unwrap()
}

fn exact_targets(scene: &Scene, cams: &[Camera], m: &Material, l: &LightSet) -> Vec<Target> {
    cams.iter()
        .map(|c| {
            Target::exact(
                &tonemap(&render(scene, c, m, l, &RenderOptions::default()))
                    .unwrap()
                    .color,
            )
            .unwrap()
        })
        .collect()
}

fn quantized_targets(scene: &Scene, cams: &[Camera], m: &Material, l: &LightSet) -> Vec<Target> {
    cams.iter()
        .map(|c| {
            let ldr = tonemap(&render(scene, c, m, l, &RenderOptions::default()))
                .unwrap()
                .color;
            let codes: Vec<u8> = ldr.data.iter().map(|&t| encode_ldr(t)).collect();
            Target::from_codes(ldr.width, ldr.height, &codes).unwrap()
        })
        .collect()
}

#[test]
fn single_pixel_loss_arithmetic() {
    let rendered = Image::filled(1, 1, &[1.0, 1.0, 1.0]);
    let target = Target::exact(&Image::filled(1, 1, &[0.25, 0.25, 0.25])).unwrap();
    let (loss, zero) = masked_relative_l2(&rendered, &target, &[1.0], 0.01).unwrap();
    assert!(!zero);
    assert!((loss - 3.0 * 0.0625 / 0.26).abs() < 1e-15);
    let (loss, zero) = masked_relative_l2(&rendered, &target, &[0.0], 0.01).unwrap();
    assert!(zero && loss == 0.0);
    assert!(masked_relative_l2(&rendered, &target, &[1.0, 1.0], 0.01).is_err());
}

#[test]
fn quantized_target_has_dead_zone() {
    let t = Target::from_codes(1, 1, &[128, 128, 128]).unwrap();
    let (lo, hi) = crate::render::io::ldr_interval(128);
    assert_eq!(t.residual(0, 0.5 * (lo + hi)), 0.0);
    assert!(t.residual(0, hi + 0.01) > 0.0);
    assert!(t.residual(0, lo - 0.01) < 0.0);
}

#[test]
fn weight_mask_cases() {
    let plane = Scene::new(scenes::quad(1.0)).unwrap();
    let cam = Camera::new(
        Vec3::new(0.0, 0.0, 200.0),
        Vec3::ZERO,
        Vec3::new(0.0, 1.0, 0.0),
        0.005,
        16,
        16,
    )
    .unwrap();
    let w = build_weight_mask(&rasterize_gbuffer(&plane, &cam, 1), 0, 1.0);
    assert!(w.iter().all(|&x| x > 1.0 - 1e-5));

    let s = Scene::new(scenes::uv_sphere(1.0, 64, 32)).unwrap();
    let cam = Camera::new(
        Vec3::new(0.0, 0.0, 4.0),
        Vec3::ZERO,
        Vec3::new(0.0, 1.0, 0.0),
        0.7,
        64,
        64,
    )
    .unwrap();
    let gb = rasterize_gbuffer(&s, &cam, 1);
    let w = build_weight_mask(&gb, 2, 1.0);
    let covered = gb.coverage_mask();
    let row = 32usize;
    let first = (0..64).find(|&x| covered[row * 64 + x]).unwrap();
    assert_eq!(w[row * 64 + first], 0.0);
    assert_eq!(w[row * 64 + first + 1], 0.0);
    assert!(w[row * 64 + first + 4] > 0.0);
    // every zero-weight covered pixel has background within distance 2
    for y in 0..64i64 {
        for x in 0..64i64 {
            let i = (y * 64 + x) as usize;
            let near = (-2..=2).any(|dy| {
                (-2..=2).any(|dx| {
                    let (xx, yy) = (x + dx, y + dy);
                    (0..64).contains(&xx)
                        && (0..64).contains(&yy)
                        && !covered[(yy * 64 + xx) as usize]
                })
            });
            assert_eq!(covered[i] && !near, w[i] > 0.0, "({x},{y})");
        }
    }
    // limb darkening toward the silhouette
    let center = 32;
    for x in center..64 {
        let (a, b) = (w[row * 64 + x], w[row * 64 + x + 1]);
        if b > 0.0 {
            assert!(b <= a);
        }
    }
}

#[test]
fn encode_decode_round_trip() {
    let m = material(16);
    let back = LatentMaterial::encode(&m).decode();
    for (a, b) in [
        (&m.albedo, &back.albedo),
        (&m.roughness, &back.roughness),
        (&m.normal, &back.normal),
    ] {
        assert!(a
            .data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| (x - y).abs() < 1e-6));
    }
    let extreme = Material::uniform(2, [0.0, 1.0, 0.5], 1.0).unwrap();
    let back = LatentMaterial::encode(&extreme).decode();
    assert!(extreme
        .albedo
        .data
        .iter()
        .zip(&back.albedo.data)
        .all(|(x, y)| (x - y).abs() <= 1e-6));
    assert!(Material::new(back.albedo, back.roughness, back.normal).is_ok());
}

#[test]
fn self_render_targets_are_a_fixed_point() {
    let scene = sphere();
    let l = lights();
    let m = material(32);
    let cams = generate_orbit_cameras(4, 0.3, 3.0, 0.8, (48, 48), Vec3::ZERO).unwrap();
    let decoded = LatentMaterial::encode(&m).decode();
    let p = InverseProblem::new(
        &scene,
        &cams,
        exact_targets(&scene, &cams, &decoded, &l),
        &l,
        &LossConfig::default(),
        false,
        &m,
    )
    .unwrap();
    let e = p
        .evaluate(&LatentMaterial::encode(&m), &[0, 1, 2, 3], None)
        .unwrap();
    assert_eq!(e.loss, 0.0);
    for g in e.gradient.slices() {
        assert!(g.iter().all(|x| x.abs() <= 1e-8));
    }
    let out = optimize(
        &p,
        &m,
        &OptimConfig {
            steps: 200,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(out.history.iter().all(|h| h.loss < 1e-6));
    assert_eq!(out.state.latent, LatentMaterial::encode(&m));
}

#[test]
fn quantized_self_render_is_a_fixed_point() {
    let scene = sphere();
    let l = lights();
    let m = material(32);
    let cams = generate_orbit_cameras(9, 0.3, 3.0, 0.8, (64, 64), Vec3::ZERO).unwrap();
    let targets = quantized_targets(&scene, &cams, &m, &l);
    let p = InverseProblem::new(
        &scene,
        &cams,
        targets,
        &l,
        &LossConfig::default(),
        false,
        &m,
    )
    .unwrap();
    let out = optimize(
        &p,
        &m,
        &OptimConfig {
            steps: 50,
            ..Default::default()
        },
    )
    .unwrap();
    for (a, b) in [
        (&m.albedo, &out.material.albedo),
        (&m.roughness, &out.material.roughness),
        (&m.normal, &out.material.normal),
    ] {
        assert!(rms_difference(a, b) < 1e-3);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let scene = sphere();
    let l = lights();
    let truth = material(16);
    let init = Material::uniform(16, [0.4, 0.5, 0.6], 0.5).unwrap();
    let cams = generate_orbit_cameras(3, 0.3, 3.0, 0.8, (40, 40), Vec3::ZERO).unwrap();
    let p = InverseProblem::new(
        &scene,
        &cams,
        exact_targets(&scene, &cams, &truth, &l),
        &l,
        &LossConfig::default(),
        false,
        &init,
    )
    .unwrap();
    let latent = LatentMaterial::encode(&init);
    // normals use a smaller step: a 1e-3 step can move some pixel's n·l
    // across zero, where the clamped cosine has a kink
    for (kind, h) in [
        (TextureKind::Albedo, 1e-3),
        (TextureKind::Roughness, 1e-3),
        (TextureKind::Normal, 1e-4),
    ] {
        let samples = finite_difference_check(&p, &latent, kind, 32, h, 21).unwrap();
        assert_eq!(samples.len(), 32, "{kind:?}");
        for s in &samples {
            assert!(s.relative_error() < 1e-3, "{s:?}");
        }
    }
}

#[test]
fn directional_albedo_perturbation() {
    let scene = sphere();
    let l = lights();
    let truth = material(16);
    let init = Material::uniform(16, [0.4, 0.5, 0.6], 0.5).unwrap();
    let cams = generate_orbit_cameras(3, 0.3, 3.0, 0.8, (40, 40), Vec3::ZERO).unwrap();
    let p = InverseProblem::new(
        &scene,
        &cams,
        exact_targets(&scene, &cams, &truth, &l),
        &l,
        &LossConfig::default(),
        false,
        &init,
    )
    .unwrap();
    let latent = LatentMaterial::encode(&init);
    let base = p.evaluate(&latent, &[0, 1, 2], None).unwrap();
    let cover = p.coverage();
    let t = cover[0].iter().position(|&c| c).unwrap() + 40;
    assert!(cover[0][t]);
    let delta = 1e-3;
    let mut moved = latent.clone();
    moved.albedo.data[t * 3] += delta;
    let changed = p
        .evaluate(&moved, &[0, 1, 2], Some(&base.denominators))
        .unwrap()
        .loss;
    let predicted = base.gradient.albedo.data[t * 3] * delta;
    assert!(
        ((changed - base.loss) - predicted).abs() < 1e-3 * predicted.abs(),
        "{} vs {predicted}",
        changed - base.loss
    );
}

#[test]
fn roughness_gradient_vanishes_without_specular_light() {
    let scene = sphere();
    let ambient = LightSet::new(vec![], [1.0, 1.0, 1.0]).unwrap();
    let truth = material(16);
    let init = Material::uniform(16, [0.4, 0.5, 0.6], 0.5).unwrap();
    let cams = generate_orbit_cameras(2, 0.3, 3.0, 0.8, (32, 32), Vec3::ZERO).unwrap();
    let targets = exact_targets(&scene, &cams, &truth, &ambient);
    let p = InverseProblem::new(
        &scene,
        &cams,
        targets,
        &ambient,
        &LossConfig::default(),
        false,
        &init,
    )
    .unwrap();
    let e = p
        .evaluate(&LatentMaterial::encode(&init), &[0, 1], None)
        .unwrap();
    assert!(e.loss > 0.0);
    assert!(e.gradient.roughness.data.iter().all(|&g| g == 0.0));
    assert!(e.gradient.normal.data.iter().all(|&g| g == 0.0));
    assert!(e.gradient.albedo.data.iter().any(|&g| g != 0.0));
}

#[test]
fn zero_weight_view_contributes_nothing() {
    let scene = sphere();
    let l = lights();
    let truth = material(16);
    let init = Material::uniform(16, [0.4, 0.5, 0.6], 0.5).unwrap();
    let cams = generate_orbit_cameras(2, 0.3, 3.0, 0.8, (32, 32), Vec3::ZERO).unwrap();
    let cfg = LossConfig {
        view_weights: vec![1.0, 0.0],
        ..Default::default()
    };
    let p = InverseProblem::new(
        &scene,
        &cams,
        exact_targets(&scene, &cams, &truth, &l),
        &l,
        &cfg,
        false,
        &init,
    )
    .unwrap();
    assert_eq!(p.active_pixels(1), 0);
    let e = p
        .evaluate(&LatentMaterial::encode(&init), &[1], None)
        .unwrap();
    assert!(e.zero_weight && e.loss == 0.0);
    assert!(e
        .gradient
        .slices()
        .iter()
        .all(|g| g.iter().all(|&x| x == 0.0)));
}

#[test]
fn single_view_leaves_unseen_texels_untouched() {
    let scene = Scene::new(scenes::cube(1.0, 2, 0.05)).unwrap();
    let l = lights();
    let truth = material(32);
    let init = Material::uniform(32, [0.4, 0.5, 0.6], 0.5).unwrap();
    let cam = Camera::new(
        Vec3::new(0.5, 0.7, 4.0),
        Vec3::ZERO,
        Vec3::new(0.0, 1.0, 0.0),
        0.8,
        48,
        48,
    )
    .unwrap();
    let cams = [cam];
    let p = InverseProblem::new(
        &scene,
        &cams,
        exact_targets(&scene, &cams, &truth, &l),
        &l,
        &LossConfig::default(),
        false,
        &init,
    )
    .unwrap();
    let out = optimize(
        &p,
        &init,
        &OptimConfig {
            steps: 30,
            batch: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let cover = p.coverage();
    let start = LatentMaterial::encode(&init);
    let unseen = cover[0].iter().filter(|&&c| !c).count();
    assert!(unseen > 100);
    for (t, &c) in cover[0].iter().enumerate() {
        if !c {
            assert_eq!(
                &out.state.latent.albedo.data[t * 3..t * 3 + 3],
                &start.albedo.data[t * 3..t * 3 + 3]
            );
        }
    }
    assert!(out.history.last().unwrap().loss < out.history[0].loss);
}

#[test]
fn loss_trends_down_on_a_well_posed_problem() {
    let scene = sphere();
    let l = lights();
    let truth = material(16);
    let init = Material::uniform(16, [0.5, 0.5, 0.5], 0.5).unwrap();
    let cams = generate_orbit_cameras(6, 0.3, 3.0, 0.8, (48, 48), Vec3::ZERO).unwrap();
    let p = InverseProblem::new(
        &scene,
        &cams,
        exact_targets(&scene, &cams, &truth, &l),
        &l,
        &LossConfig::default(),
        false,
        &init,
    )
    .unwrap();
    let out = optimize(
        &p,
        &init,
        &OptimConfig {
            steps: 300,
            learning_rate: 0.03,
            batch: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(out.status, OptimStatus::Completed);
    let smoothed: Vec<f64> = out
        .history
        .chunks(50)
        .map(|c| c.iter().map(|h| h.loss).sum::<f64>() / c.len() as f64)
        .collect();
    assert!(smoothed.windows(2).all(|w| w[1] <= w[0]), "{smoothed:?}");
    assert!(smoothed.last().unwrap() < &(0.1 * smoothed[0]));
}

#[test]
fn runs_are_deterministic() {
    let scene = sphere();
    let l = lights();
    let truth = material(16);
    let init = Material::uniform(16, [0.5, 0.5, 0.5], 0.5).unwrap();
    let cams = generate_orbit_cameras(4, 0.3, 3.0, 0.8, (32, 32), Vec3::ZERO).unwrap();
    let p = InverseProblem::new(
        &scene,
        &cams,
        exact_targets(&scene, &cams, &truth, &l),
        &l,
        &LossConfig::default(),
        false,
        &init,
    )
    .unwrap();
    let cfg = OptimConfig {
        steps: 20,
        batch: 2,
        seed: 9,
        ..Default::default()
    };
    let a = optimize(&p, &init, &cfg).unwrap();
    let b = optimize(&p, &init, &cfg).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.history, b.history);
}

#[test]
fn view_sampler_covers_each_epoch() {
    let mut s = ViewSampler::new(7, 3, 5);
    for _ in 0..4 {
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }
}

#[test]
fn huge_steps_are_reported_as_divergence() {
    let scene = sphere();
    let l = lights();
    let truth = material(16);
    let mut near = truth.clone();
    near.albedo
        .data
        .iter_mut()
        .for_each(|a| *a = (*a * 0.999).clamp(0.0, 1.0));
    let cams = generate_orbit_cameras(2, 0.3, 3.0, 0.8, (24, 24), Vec3::ZERO).unwrap();
    let p = InverseProblem::new(
        &scene,
        &cams,
        exact_targets(&scene, &cams, &truth, &l),
        &l,
        &LossConfig::default(),
        false,
        &near,
    )
    .unwrap();
    let out = optimize(
        &p,
        &near,
        &OptimConfig {
            steps: 400,
            learning_rate: 50.0,
            batch: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(
        matches!(out.status, OptimStatus::Diverged { .. }),
        "{:?}",
        out.history.last()
    );
    assert!(Material::new(
        out.material.albedo,
        out.material.roughness,
        out.material.normal
    )
    .is_ok());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let scene = sphere();
    let l = lights();
    let m = material(8);
    let cams = generate_orbit_cameras(2, 0.3, 3.0, 0.8, (16, 16), Vec3::ZERO).unwrap();
    let mut targets = exact_targets(&scene, &cams, &m, &l);
    assert!(InverseProblem::new(
        &scene,
        &cams[..1],
        targets.clone(),
        &l,
        &LossConfig::default(),
        false,
        &m
    )
    .is_err());
    targets[1] = Target::exact(&Image::filled(8, 8, &[0.5; 3])).unwrap();
    assert!(InverseProblem::new(
        &scene,
        &cams,
        targets,
        &l,
        &LossConfig::default(),
        false,
        &m
    )
    .is_err());
    let targets = exact_targets(&scene, &cams, &m, &l);
    let p = InverseProblem::new(
        &scene,
        &cams,
        targets,
        &l,
        &LossConfig::default(),
        false,
        &m,
    )
    .unwrap();
    let other = LatentMaterial::encode(&material(4));
    assert!(p.evaluate(&other, &[0], None).is_err());
    assert!(LossConfig {
        epsilon: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn checkpoint_and_csv() {
    let mut state = OptimState::new(&material(4));
    state.step = 17;
    state.m.albedo.data[3] = 0.25;
    state.v.normal.data[1] = 1e-9;
    let bytes = encode_checkpoint(&state);
    assert_eq!(decode_checkpoint(&bytes, Path::new("c")).unwrap(), state);
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 1], Path::new("c")),
        Err(Error::Parse { .. })
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_checkpoint(&bad, Path::new("c")),
        Err(Error::Parse { offset: 0, .. })
    ));
    let csv = loss_csv(
        &[
            StepLog {
                step: 0,
                loss: 0.5,
                views: vec![(1, 0.25)],
            },
            StepLog {
                step: 1,
                loss: 0.125,
                views: vec![(0, 0.125)],
            },
        ],
        2,
    );
    assert_eq!(
        csv,
        "step,loss,view_0,view_1\n0,5e-1,,2.5e-1\n1,1.25e-1,1.25e-1,\n"
    );
    let dir = tempfile::tempdir().unwrap();
    let paths = write_material(dir.path(), &material(4)).unwrap();
    assert!(paths.iter().all(|p| p.exists()));
}
