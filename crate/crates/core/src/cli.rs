use std::ffi::OsString;
use std::path::{Path, PathBuf};

use bpl_core::config::{load_config, ExperimentConfig};
use bpl_core::detection::Plane;
use bpl_core::io;
use bpl_core::pipeline::{self, exit, PipelineError};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O or internal error
  2  usage error
  3  configuration error (unreadable file, parse error, invalid values)
  4  data error (malformed or missing scans, no signal, no scans found)
  5  convergence failure (bootstrap failure rate above 10%)";

#[derive(Parser, Debug)]
#[command(name = "bpl", version, about = "Simulate and analyze path-entangled photon pairs", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic image-plane (2f-2f) scans, one per fixed path.
    SimulateImage(Common),
    /// Synthetic Fourier-plane (f-f) scans.
    SimulateFourier(Common),
    /// Fit peaks in image scans and fringe metrics in Fourier scans.
    Analyze(WithScans),
    /// Joint probabilities, Schmidt coefficients and concurrence with bootstrap errors.
    Report(WithScans),
    /// simulate-image, simulate-fourier, analyze and report in one run.
    Pipeline(Common),
}

#[derive(ValueEnum, Clone, Copy, Debug, Default)]
enum Format {
    #[default]
    Tsv,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration file.
    #[arg(value_name = "CONFIG", conflicts_with = "config")]
    config_path: Option<PathBuf>,
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; overrides the configuration's [noise] seed.
    #[arg(long, env = "BPL_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct WithScans {
    #[command(flatten)]
    common: Common,
    /// Directory of scan files (default: <out>/scans).
    #[arg(long)]
    scans: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, u64), CliError> {
        let path = self
            .config
            .as_ref()
            .or(self.config_path.as_ref())
            .ok_or_else(|| CliError::Usage("a configuration file is required (CONFIG or --config)".into()))?;
        let cfg = load_config(path).map_err(PipelineError::from)?;
        let seed = self.seed.unwrap_or(cfg.noise.seed);
        Ok((cfg, seed))
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

fn simulate(c: &Common, plane: Plane) -> Result<(), CliError> {
    let (cfg, seed) = c.load()?;
    let scans = pipeline::simulate(&cfg, plane, seed)?;
    pipeline::write_simulation(&c.out, &scans)?;
    println!("wrote {} {plane} scan(s) to {}", scans.len(), c.out.join("scans").display());
    Ok(())
}

fn load_dir(w: &WithScans) -> Result<(PathBuf, Vec<pipeline::NamedScan>), CliError> {
    let dir = w.scans.clone().unwrap_or_else(|| w.common.out.join("scans"));
    let (scans, warnings) = pipeline::load_scans(&dir)?;
    for warning in warnings {
        eprintln!("warning: {warning}");
    }
    Ok((dir, scans))
}

fn print_file(path: &Path) {
    if let Ok(text) = std::fs::read_to_string(path) {
        print!("{text}");
    }
}

fn analyze(w: &WithScans) -> Result<(), CliError> {
    let (cfg, _) = w.common.load()?;
    let (dir, scans) = load_dir(w)?;
    let analysis = pipeline::analyze_scans(&cfg, &scans, &dir)?;
    pipeline::write_analysis(&w.common.out, &analysis)?;
    if let Some(f) = &analysis.fits {
        println!("fitted {} image scan(s): {}", f.fits.len(), w.common.out.join("fits.tsv").display());
    }
    if !analysis.fringes.is_empty() {
        print_file(&w.common.out.join("fringes.txt"));
    }
    Ok(())
}

fn report(w: &WithScans) -> Result<(), CliError> {
    let (cfg, seed) = w.common.load()?;
    let (dir, scans) = load_dir(w)?;
    let r = pipeline::report_scans(&cfg, &scans, seed, &dir)?;
    pipeline::write_report(&w.common.out, &r)?;
    print!("{}", io::format_report(&r));
    Ok(())
}

fn run_pipeline(c: &Common) -> Result<(), CliError> {
    let (cfg, seed) = c.load()?;
    let run = pipeline::run_pipeline(&cfg, seed)?;
    pipeline::write_run(&c.out, &run)?;
    print!("{}", io::format_report(&run.report));
    print!("{}", io::format_fringes(&run.analysis.fringes));
    Ok(())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::SimulateImage(c) => simulate(c, Plane::Image),
        Command::SimulateFourier(c) => simulate(c, Plane::Fourier),
        Command::Analyze(w) => analyze(w),
        Command::Report(w) => report(w),
        Command::Pipeline(c) => run_pipeline(c),
    };
    match result {
        Ok(()) => exit::OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            exit::USAGE
        }
        Err(CliError::Pipeline(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
