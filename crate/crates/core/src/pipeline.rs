//! Simulation and analysis runs driven by an [`ExperimentConfig`].

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{
    entanglement_report, fit_scan_set, fringe_metrics, AnalysisError, EntanglementReport, FringeMetrics, ScanSetFits,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::detection::{synth_scan, DetectionError, Plane, ScanRecord};
use crate::io::{self, IoError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("{}: no scans found", .0.display())]
    NoScans(PathBuf),
    #[error("{}: no image-plane scans found", .0.display())]
    NoImageScans(PathBuf),
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const DATA: i32 = 4;
    pub const CONVERGENCE: i32 = 5;
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(ConfigError::Io { .. }) | PipelineError::Config(_) => exit::CONFIG,
            PipelineError::Io(IoError::Io { .. }) => exit::IO,
            PipelineError::Io(IoError::Format { .. }) => exit::DATA,
            PipelineError::Analysis(AnalysisError::BootstrapFailed { .. }) => exit::CONVERGENCE,
            PipelineError::Analysis(_) | PipelineError::NoScans(_) | PipelineError::NoImageScans(_) => exit::DATA,
            PipelineError::Detection(_) => exit::DATA,
        }
    }
}

const TAG_IMAGE: u64 = 1;
const TAG_FOURIER: u64 = 2;
const TAG_BOOTSTRAP: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for one task derived from the run seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ tag.rotate_left(32)) ^ index)
}

/// A synthetic scan together with the model it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScan {
    pub name: String,
    pub record: ScanRecord,
    pub density: Vec<f64>,
    pub expected: Vec<f64>,
}

/// All scans of one plane: one per path for the image plane, one per
/// configured detector-1 position for the Fourier plane.
pub fn simulate(cfg: &ExperimentConfig, plane: Plane, seed: u64) -> Result<Vec<SimulatedScan>, PipelineError> {
    let model = cfg.model(plane)?;
    let (fixed, grid, tag) = match plane {
        Plane::Image => (cfg.image_fixed_positions(), cfg.image_grid(), TAG_IMAGE),
        Plane::Fourier => (cfg.scan.fourier_fixed.clone(), cfg.fourier_grid(), TAG_FOURIER),
    };
    let counts = cfg.noise.mean_peak_counts;
    fixed
        .par_iter()
        .enumerate()
        .map(|(i, &x1)| {
            let record = synth_scan(&model, x1, &grid, counts, derive_seed(seed, tag, i as u64))?;
            let density: Vec<f64> = grid.iter().map(|&x| model.rate(x1, x)).collect();
            let expected = model.expected_counts(x1, &grid, counts);
            Ok(SimulatedScan { name: format!("{plane}_fixed_{i}"), record, density, expected })
        })
        .collect()
}

/// Writes `scans/<name>.tsv` and `density/<name>.tsv` under `out`.
pub fn write_simulation(out: &Path, scans: &[SimulatedScan]) -> Result<(), PipelineError> {
    for s in scans {
        io::write_file(&out.join("scans").join(format!("{}.tsv", s.name)), &io::format_scan(&s.record))?;
        io::write_file(
            &out.join("density").join(format!("{}.tsv", s.name)),
            &io::format_density(&s.record.positions, &s.density, &s.expected),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedScan {
    pub name: String,
    pub record: ScanRecord,
}

/// Every scan file in `dir`; header warnings are returned alongside.
pub fn load_scans(dir: &Path) -> Result<(Vec<NamedScan>, Vec<String>), PipelineError> {
    let files = io::scan_files(dir)?;
    if files.is_empty() {
        return Err(PipelineError::NoScans(dir.to_path_buf()));
    }
    let mut scans = Vec::new();
    let mut warnings = Vec::new();
    for f in files {
        let parsed = io::read_scan(&f)?;
        warnings.extend(parsed.warnings);
        let name = f.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        scans.push(NamedScan { name, record: parsed.record });
    }
    Ok((scans, warnings))
}

fn split_planes(scans: &[NamedScan]) -> (Vec<ScanRecord>, Vec<&NamedScan>) {
    let image = scans.iter().filter(|s| s.record.plane == Plane::Image).map(|s| s.record.clone()).collect();
    let fourier = scans.iter().filter(|s| s.record.plane == Plane::Fourier).collect();
    (image, fourier)
}

/// Peak fits of the image scans and fringe metrics of the Fourier scans.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanAnalysis {
    pub fits: Option<ScanSetFits>,
    pub fringes: Vec<(String, Result<FringeMetrics, String>)>,
}

pub fn analyze_scans(cfg: &ExperimentConfig, scans: &[NamedScan], source: &Path) -> Result<ScanAnalysis, PipelineError> {
    if scans.is_empty() {
        return Err(PipelineError::NoScans(source.to_path_buf()));
    }
    let (image, fourier) = split_planes(scans);
    let fits = if image.is_empty() {
        None
    } else {
        let plan = cfg.analysis_plan(&cfg.model(Plane::Image)?);
        Some(fit_scan_set(&image, &plan)?)
    };
    let fringes = fourier
        .iter()
        .map(|s| (s.name.clone(), fringe_metrics(&s.record).map_err(|e| e.to_string())))
        .collect();
    Ok(ScanAnalysis { fits, fringes })
}

pub fn report_scans(
    cfg: &ExperimentConfig,
    scans: &[NamedScan],
    seed: u64,
    source: &Path,
) -> Result<EntanglementReport, PipelineError> {
    let (image, _) = split_planes(scans);
    if image.is_empty() {
        return Err(PipelineError::NoImageScans(source.to_path_buf()));
    }
    let plan = cfg.analysis_plan(&cfg.model(Plane::Image)?);
    Ok(entanglement_report(&image, &plan, cfg.analysis.n_resamples, derive_seed(seed, TAG_BOOTSTRAP, 0))?)
}

/// In-memory end-to-end run: simulate both planes, fit, report.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub image: Vec<SimulatedScan>,
    pub fourier: Vec<SimulatedScan>,
    pub analysis: ScanAnalysis,
    pub report: EntanglementReport,
}

pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64) -> Result<PipelineRun, PipelineError> {
    let image = simulate(cfg, Plane::Image, seed)?;
    let fourier = simulate(cfg, Plane::Fourier, seed)?;
    let named: Vec<NamedScan> = image
        .iter()
        .chain(&fourier)
        .map(|s| NamedScan { name: s.name.clone(), record: s.record.clone() })
        .collect();
    let here = Path::new("<memory>");
    let analysis = analyze_scans(cfg, &named, here)?;
    let report = report_scans(cfg, &named, seed, here)?;
    Ok(PipelineRun { image, fourier, analysis, report })
}

/// Files written by `analyze`.
pub fn write_analysis(out: &Path, a: &ScanAnalysis) -> Result<(), PipelineError> {
    if let Some(f) = &a.fits {
        io::write_file(&out.join("fits.tsv"), &io::format_fits(&f.fits))?;
    }
    if !a.fringes.is_empty() {
        io::write_file(&out.join("fringes.txt"), &io::format_fringes(&a.fringes))?;
    }
    Ok(())
}

/// Files written by `report`.
pub fn write_report(out: &Path, r: &EntanglementReport) -> Result<(), PipelineError> {
    io::write_file(&out.join("report.txt"), &io::format_report(r))?;
    io::write_file(&out.join("alpha.tsv"), &io::format_alpha(r))?;
    Ok(())
}

pub fn write_run(out: &Path, run: &PipelineRun) -> Result<(), PipelineError> {
    write_simulation(out, &run.image)?;
    write_simulation(out, &run.fourier)?;
    write_analysis(out, &run.analysis)?;
    write_report(out, &run.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn qubit() -> ExperimentConfig {
        parse_config(include_str!("../fixtures/qubit.cfg"), Path::new("q.cfg")).unwrap()
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, TAG_IMAGE, 0);
        assert_ne!(a, derive_seed(1, TAG_IMAGE, 1));
        assert_ne!(a, derive_seed(1, TAG_FOURIER, 0));
        assert_ne!(a, derive_seed(2, TAG_IMAGE, 0));
        assert_eq!(a, derive_seed(1, TAG_IMAGE, 0));
    }

    #[test]
    fn qubit_pipeline_recovers_balanced_state() {
        let cfg = qubit();
        let run = run_pipeline(&cfg, 5).unwrap();
        let r = &run.report;
        assert!(r.diagonal);
        assert!(r.off_diagonal_mass < 1e-3);
        assert!((r.concurrence - 1.0).abs() < 1e-3, "{}", r.concurrence);
        let m = run.analysis.fringes[0].1.as_ref().unwrap();
        assert!((m.period - 1.775e-4).abs() < cfg.scan.fourier_step);
    }

    #[test]
    fn fourier_single_path_has_no_fringes() {
        let mut cfg = qubit();
        cfg.source.dimension = 1;
        cfg.pump = crate::config::PumpSpec::Amplitudes(vec![num_complex::Complex64::new(1.0, 0.0)]);
        let scans = simulate(&cfg, Plane::Fourier, 3).unwrap();
        let err = fringe_metrics(&scans[0].record).unwrap_err();
        assert_eq!(err, AnalysisError::NoFringes);
    }
}
