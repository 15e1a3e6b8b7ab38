//! Command-line driver for the reflection-privacy testbed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reflight::config::{parse_defenses, parse_objects, parse_scenes, PipelineConfig};
use reflight::pipeline;

#[derive(Parser)]
#[command(
    name = "reflight",
    about = "Synthetic testbed for reflection-based privacy in AR lighting reconstruction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Plain-text key=value config file applied before flag overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Scene selection: a, b, c, d, comma list, or "all".
    #[arg(long)]
    scene: Option<String>,
    /// Object selection: sphere, mirror, or "both".
    #[arg(long)]
    object: Option<String>,
    /// Defense selection: none, ipc2s, r2, comma list, or "auto".
    #[arg(long)]
    defense: Option<String>,
    /// External detector command (line-oriented JSON protocol).
    #[arg(long)]
    detector_cmd: Option<String>,
    /// Mark the environment dynamic; forces the restricted-rendering fallback.
    #[arg(long)]
    dynamic: bool,
    /// Use the mobile sensor resolutions (1280x960 RGB, 256x192 depth,
    /// 2048 cubemap faces).
    #[arg(long)]
    paper_res: bool,
}

impl CommonOpts {
    fn build_config(&self) -> reflight::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(s) = &self.scene {
            cfg.scenes = parse_scenes(s)?;
        }
        if let Some(o) = &self.object {
            cfg.objects = parse_objects(o)?;
        }
        if let Some(d) = &self.defense {
            cfg.defenses = parse_defenses(d)?;
        }
        if let Some(cmd) = &self.detector_cmd {
            cfg.detector_cmd = Some(cmd.clone());
        }
        if self.dynamic {
            cfg.policy.dynamic_environment = true;
        }
        if self.paper_res {
            cfg.paper_res = true;
            cfg.cubemap_resolution = 2048;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write scene and trajectory definitions.
    Generate(CommonOpts),
    /// Simulate the RGB-D capture into session directories.
    Capture(CommonOpts),
    /// Fuse frames and build the undefended environment map.
    Reconstruct(CommonOpts),
    /// Run detection, blurring, and the point-cloud color swap.
    Defend(CommonOpts),
    /// Render the reflective objects for every defense variant.
    Render(CommonOpts),
    /// Unwrap reflections and run the extraction attack.
    Attack(CommonOpts),
    /// Aggregate attack and quality results into reports.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Evaluate acceptance thresholds; nonzero exit on failure.
        #[arg(long)]
        check: bool,
    },
    /// Run every stage in order.
    Pipeline {
        #[command(flatten)]
        common: CommonOpts,
        /// Evaluate acceptance thresholds; nonzero exit on failure.
        #[arg(long)]
        check: bool,
    },
}

fn per_scene(
    cfg: &PipelineConfig,
    stage: impl Fn(&PipelineConfig, &std::path::Path) -> reflight::Result<()>,
) -> reflight::Result<()> {
    for &id in &cfg.scenes {
        stage(cfg, &cfg.scene_dir(id))?;
    }
    Ok(())
}

fn run() -> reflight::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(c) => {
            pipeline::stage_generate(&c.build_config()?)?;
        }
        Command::Capture(c) => per_scene(&c.build_config()?, pipeline::stage_capture)?,
        Command::Reconstruct(c) => per_scene(&c.build_config()?, pipeline::stage_reconstruct)?,
        Command::Defend(c) => per_scene(&c.build_config()?, pipeline::stage_defend)?,
        Command::Render(c) => per_scene(&c.build_config()?, pipeline::stage_render)?,
        Command::Attack(c) => per_scene(&c.build_config()?, pipeline::stage_attack)?,
        Command::Evaluate { common, check } => {
            let report = pipeline::stage_evaluate(&common.build_config()?, check)?;
            if check && !report.all_checks_pass() {
                return Ok(false);
            }
        }
        Command::Pipeline { common, check } => {
            let report = pipeline::run_pipeline(&common.build_config()?, check)?;
            if check && !report.all_checks_pass() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("[reflight] acceptance checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("[reflight] error: {e}");
            ExitCode::FAILURE
        }
    }
}
