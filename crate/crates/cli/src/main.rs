use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvc_core::invrender::psnr;
use mvc_core::pipeline::{
    cmd_bias, cmd_noise, cmd_reconstruct, cmd_render, cmd_selftest, PipelineConfig, SceneSource,
    Setup,
};
use mvc_core::Result;

/// Multi-view consistent noise, attention-bias and texture reconstruction
/// tooling around an external diffusion stage.
#[derive(Parser)]
#[command(name = "mvc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: PathBuf,
    /// OBJ mesh, or builtin:sphere / builtin:cube
    #[arg(long)]
    scene: String,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render the conditioning color and normal grids
    Render(Common),
    /// Write per-view seed noise (MVCN)
    Noise(Common),
    /// Write per-scale correspondence pairs (MVCB)
    Bias(Common),
    /// Recover textures from an enhanced grid
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Enhanced grid PNG; defaults to the conditioning grid in --out
        #[arg(long)]
        enhanced: Option<PathBuf>,
    },
    /// Run the built-in consistency checks
    Selftest {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn setup(c: &Common) -> Result<Setup> {
    let config = PipelineConfig::load(&c.config)?;
    Setup::new(&config, &SceneSource::parse(&c.scene)?)
}

fn list(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Render(c) => {
            let report = cmd_render(&setup(&c)?, &c.out)?;
            list(&report.files);
        }
        Command::Noise(c) => {
            let s = setup(&c)?;
            let images = cmd_noise(&s, &c.out)?;
            println!(
                "{} views, {} channels",
                images.len(),
                s.config.noise_channels
            );
        }
        Command::Bias(c) => {
            for set in cmd_bias(&setup(&c)?, &c.out)? {
                println!(
                    "scale {}: {} latent pixels, {} pairs",
                    set.scale,
                    set.n,
                    set.len()
                );
            }
        }
        Command::Reconstruct { common, enhanced } => {
            let s = setup(&common)?;
            let r = cmd_reconstruct(&s, &common.out, enhanced.as_deref())?;
            let first = r.outcome.history.first().map_or(0.0, |h| h.loss);
            let last = r.outcome.history.last().map_or(0.0, |h| h.loss);
            println!(
                "{} steps, loss {first:.4e} -> {last:.4e}",
                r.outcome.history.len()
            );
            let cover = r.problem.coverage();
            let m = &r.outcome.material;
            println!(
                "change vs initial (PSNR dB): albedo {:.2}, roughness {:.2}",
                psnr(&m.albedo, &s.material.albedo, &cover[0]),
                psnr(&m.roughness, &s.material.roughness, &cover[1])
            );
            list(&r.files);
        }
        Command::Selftest { config } => {
            let config = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::default(),
            };
            let report = cmd_selftest(&config)?;
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mvc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
