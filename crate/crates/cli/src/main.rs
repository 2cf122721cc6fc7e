use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sepstream_core::workflow::{cmd_diffuse, cmd_run, cmd_validate};
use sepstream_core::{AngleOrigin, Error, ErrorClass, Property, RunConfig};

static STOP: AtomicBool = AtomicBool::new(false);

/// In-situ particle trajectory assembly and separatrix diffusion analysis.
#[derive(Parser, Debug)]
#[command(name = "sepstream", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate, stream, assemble trajectories and export diffusion series.
    Run {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Seed for every species' source.
        #[arg(long)]
        seed: Option<u64>,
        /// Trajectory workers per species.
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Recompute diffusion series from a stored trajectory file.
    Diffuse {
        /// Trajectory file written by `run`.
        #[arg(long)]
        trajectory: PathBuf,
        /// Configuration supplying geometry and diffusion settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Check a configuration and print derived sizes without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct AnalysisArgs {
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Region selector: quadrant=Q (1-4 or all) or angles=LO,HI (radians, `pi` suffix allowed). Repeatable.
    #[arg(long = "regions", value_name = "SELECTOR")]
    regions: Vec<String>,
    /// Angle origin for region selection.
    #[arg(long, value_parser = ["xpoint", "horizontal"])]
    origin: Option<String>,
    /// Properties to analyse, comma separated (psi, E, vPar, r).
    #[arg(long, value_delimiter = ',')]
    properties: Vec<String>,
}

impl AnalysisArgs {
    fn apply(&self, cfg: &mut RunConfig) -> anyhow::Result<()> {
        if let Some(dir) = &self.out_dir {
            cfg.output.dir = dir.clone();
        }
        if !self.regions.is_empty() {
            cfg.diffusion.regions = self.regions.clone();
        }
        if let Some(origin) = &self.origin {
            cfg.diffusion.origin = origin.parse::<AngleOrigin>().map_err(Error::from)?;
        }
        if !self.properties.is_empty() {
            cfg.diffusion.properties = self
                .properties
                .iter()
                .map(|p| p.parse::<Property>().map_err(Error::from))
                .collect::<Result<_, _>>()?;
        }
        Ok(())
    }
}

fn load(path: &Path, seed: Option<u64>, workers: Option<usize>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.sources.iter_mut().for_each(|s| s.seed = seed);
    }
    if let Some(w) = workers {
        cfg.pipeline.worker_count = w;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            analysis,
        } => {
            let mut cfg = load(&config, seed, workers)?;
            analysis.apply(&mut cfg)?;
            ctrlc::set_handler(|| STOP.store(true, Ordering::SeqCst)).context("installing interrupt handler")?;
            let report = cmd_run(&cfg, &STOP)?;
            for s in &report.species {
                println!(
                    "{}: {} particles tracked over {} steps, peak retained {} / bound {}",
                    s.species, s.seed_count, s.steps, s.peak_retained, s.retention_bound
                );
                println!("  trajectory {}", s.trajectory.display());
                println!("  series     {}", s.csv.display());
            }
            println!("finished in {:.2} s", report.wall_s);
        }
        Command::Diffuse {
            trajectory,
            config,
            analysis,
        } => {
            let mut cfg = match &config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            let default_dir = trajectory.parent().map(PathBuf::from).unwrap_or_default();
            if config.is_none() {
                cfg.output.dir = default_dir;
            }
            analysis.apply(&mut cfg)?;
            let out = cmd_diffuse(&trajectory, &cfg.diffusion, cfg.geometry, &cfg.output.dir)?;
            println!(
                "{}: {} regions × {} properties × {} steps",
                out.series.species,
                out.series.regions.len(),
                out.series.properties.len(),
                out.series.steps
            );
            println!("  {}", out.csv.display());
            println!("  {}", out.json.display());
        }
        Command::Validate { config, seed, workers } => {
            let cfg = load(&config, seed, workers)?;
            let report = cmd_validate(&cfg);
            if !report.is_valid() {
                let lines: Vec<String> = report.issues.iter().map(|(f, m)| format!("  {f}: {m}")).collect();
                return Err(Error::Config(format!("invalid configuration:\n{}", lines.join("\n"))).into());
            }
            println!("configuration ok ({} regions, digest {})", report.regions, &report.config_digest[..16]);
            for e in &report.estimates {
                println!(
                    "{}: {} steps, ~{:.0} seed particles, largest frame {} records",
                    e.species, e.steps, e.seed_estimate, e.max_frame_records
                );
                println!(
                    "  retained bound ~{:.0} records ({:.1} MiB), trajectory file ~{:.1} MiB",
                    e.retained_bound_records,
                    e.retained_bound_bytes / 1048576.0,
                    e.trajectory_bytes / 1048576.0
                );
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::class) {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Integrity) => 3,
        Some(ErrorClass::Io) => 4,
        Some(ErrorClass::Interrupted) => 130,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEPSTREAM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match err.downcast_ref::<Error>() {
                Some(e) => eprintln!("error: {e}"),
                None => eprintln!("error: {err:#}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
