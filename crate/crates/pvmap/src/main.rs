use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pvmap::commands::{self, Flags};
use pvmap::{CliResult, Config};

/// Maps PV plant modules from drone images and a point cloud.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Exit with status 2 when fusion leaves irreparable sectors.
    #[arg(long, global = true)]
    strict: bool,

    /// Also write fused.json, lifted.json and global.json from `run`.
    #[arg(long, global = true)]
    keep_intermediates: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene with ground truth and `<preset>.cfg`.
    Simulate {
        #[arg(long, default_value = "pp2-desk")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    FuseDetections,
    Infer,
    Lift,
    Match,
    Optimize,
    Evaluate,
    RenderOverlay,
    /// All stages in one go.
    Run,
}

fn config(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.pipeline = cfg.pipeline.with_seed(seed);
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let flags = Flags {
        strict: cli.strict,
        keep_intermediates: cli.keep_intermediates,
    };
    if let Command::Simulate { preset, out } = &cli.command {
        return commands::simulate(preset, cli.seed.unwrap_or(0), out);
    }
    let cfg = config(cli)?;
    match cli.command {
        Command::Simulate { .. } => unreachable!(),
        Command::FuseDetections => commands::fuse_detections(&cfg),
        Command::Infer => commands::infer(&cfg),
        Command::Lift => commands::lift(&cfg),
        Command::Match => commands::match_structures(&cfg, flags),
        Command::Optimize => commands::optimize(&cfg),
        Command::Evaluate => commands::evaluate_model(&cfg),
        Command::RenderOverlay => commands::render_overlay(&cfg),
        Command::Run => commands::run(&cfg, flags).map(|out| {
            let m = &out.optimized.model;
            log::info!("mapped {} modules on {} benches", m.modules.len(), m.benches.len());
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
