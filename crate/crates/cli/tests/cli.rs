use std::path::Path;
use std::process::{Command, Output};

fn mvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        format!(
            "# small run\nviews = 4\nimage_width = 64\nimage_height = 64\ntexture_resolution = 32\n\
             noise_resolution = 256\n{extra}"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_workflow_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "steps = 10\n");
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    for cmd in ["render", "noise", "bias", "reconstruct"] {
        let o = mvc(&[
            cmd,
            "--config",
            &cfg,
            "--scene",
            "builtin:sphere",
            "--out",
            out,
        ]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let manifest = std::fs::read_to_string(Path::new(out).join("manifest.txt")).unwrap();
    for stage in ["render", "noise", "bias", "reconstruct"] {
        assert!(manifest.contains(&format!("stage {stage} ")), "{manifest}");
    }
    assert!(Path::new(out).join("reconstruct/albedo.png").exists());
}

#[test]
fn obj_scene_path_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let obj = dir.path().join("tri.obj");
    std::fs::write(
        &obj,
        "v -1 -1 0\nv 1 -1 0\nv 1 1 0\nv -1 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\nf 1/1/1 3/3/1 4/4/1\n",
    )
    .unwrap();
    let cfg = write_config(dir.path(), "camera_elevation_deg = 0\n");
    let o = mvc(&[
        "render",
        "--config",
        &cfg,
        "--scene",
        obj.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("color_grid.png"));
}

#[test]
fn input_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();

    let o = mvc(&[
        "render",
        "--config",
        "/no/such.cfg",
        "--scene",
        "builtin:sphere",
        "--out",
        d,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such.cfg"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "");
    let o = mvc(&[
        "render",
        "--config",
        &cfg,
        "--scene",
        "/no/mesh.obj",
        "--out",
        d,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/mesh.obj"));

    let bad = write_config(dir.path(), "bias_w = 4\n");
    let o = mvc(&[
        "bias",
        "--config",
        &bad,
        "--scene",
        "builtin:sphere",
        "--out",
        d,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bias_w"));

    let o = mvc(&["render", "--scene", "builtin:sphere"]);
    assert_eq!(o.status.code(), Some(2));

    // reconstruct without a prior render
    let cfg = write_config(dir.path(), "");
    let o = mvc(&[
        "reconstruct",
        "--config",
        &cfg,
        "--scene",
        "builtin:sphere",
        "--out",
        d,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest"), "{}", stderr(&o));
}

#[test]
fn corrupt_enhanced_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let d = dir.path().to_str().unwrap();
    assert!(mvc(&[
        "render",
        "--config",
        &cfg,
        "--scene",
        "builtin:cube",
        "--out",
        d
    ])
    .status
    .success());
    let bogus = dir.path().join("bogus.png");
    std::fs::write(&bogus, b"not a png").unwrap();
    let o = mvc(&[
        "reconstruct",
        "--config",
        &cfg,
        "--scene",
        "builtin:cube",
        "--out",
        d,
        "--enhanced",
        bogus.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "learning_rate = 50\nsteps = 400\n");
    let d = dir.path().to_str().unwrap();
    assert!(mvc(&[
        "render",
        "--config",
        &cfg,
        "--scene",
        "builtin:sphere",
        "--out",
        d
    ])
    .status
    .success());
    // a slightly brighter copy of the conditioning grid
    let grid = image::open(dir.path().join("color_grid.png"))
        .unwrap()
        .into_rgb8();
    let brighter = image::RgbImage::from_fn(grid.width(), grid.height(), |x, y| {
        image::Rgb(
            grid.get_pixel(x, y)
                .0
                .map(|c| if c > 0 { c.saturating_add(3) } else { 0 }),
        )
    });
    let path = dir.path().join("enhanced.png");
    brighter.save(&path).unwrap();
    let o = mvc(&[
        "reconstruct",
        "--config",
        &cfg,
        "--scene",
        "builtin:sphere",
        "--out",
        d,
        "--enhanced",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn selftest_passes() {
    let o = mvc(&["selftest"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        3,
        "{text}"
    );
}
