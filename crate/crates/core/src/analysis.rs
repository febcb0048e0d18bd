//! From coincidence scans to path probabilities, concurrence and fringe metrics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::detection::{check_monotone, DetectionError, Plane, ScanRecord};
use crate::state::{schmidt_coefficients, DiscreteJointCoeffs, StateError};

/// Smallest bootstrap size accepted by [`mc_uncertainty`].
pub const MIN_RESAMPLES: usize = 100;
/// Fraction of failed resamples above which the bootstrap aborts.
pub const MAX_FAILURE_RATE: f64 = 0.10;
/// Points required inside each peak window.
pub const MIN_WINDOW_POINTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no signal")]
    NoSignal,
    #[error(transparent)]
    Scan(#[from] DetectionError),
    #[error("peak window at {center_mm:.4} mm holds {points} points (need {MIN_WINDOW_POINTS})")]
    SparseWindow { center_mm: f64, points: usize },
    #[error("partial data: no scan for fixed path(s) {0:?}")]
    MissingScans(Vec<usize>),
    #[error("two scans share fixed path {0}")]
    DuplicateScan(usize),
    #[error("scan with detector 1 at {0:.4} mm lies outside every path window")]
    UnassignedScan(f64),
    #[error("expected {expected} scans, got a {got}-plane scan")]
    WrongPlane { expected: Plane, got: Plane },
    #[error(transparent)]
    State(#[from] StateError),
    #[error("concurrence is implemented for D = 1, 2, 3 only (got D = {0})")]
    UnsupportedDimension(usize),
    #[error("n_resamples must be at least {MIN_RESAMPLES} (got {0})")]
    TooFewResamples(usize),
    #[error("bootstrap aborted: {failed} of {total} resamples failed; first failure: {first}")]
    BootstrapFailed { failed: usize, total: usize, first: String },
    #[error("no fringes detected")]
    NoFringes,
    #[error("fringe analysis needs {0}")]
    FringeInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Amplitude, centre and width free.
    Full,
    /// Width fixed at the predicted value.
    FixedWidth,
    /// Width and centre fixed; amplitude only.
    FixedShape,
    /// No counts in the window; area reported as zero.
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakFit {
    /// Index of the expected centre this peak is assigned to.
    pub index: usize,
    pub center: f64,
    pub width: f64,
    /// Gaussian integral A·σ·√(2π), in counts·m.
    pub area: f64,
    pub center_err: f64,
    pub width_err: f64,
    pub area_err: f64,
    pub reduced_chi2: f64,
    pub mode: FitMode,
    /// Fitted centre equidistant from two expected centres.
    pub tie: bool,
}

impl PeakFit {
    pub fn converged(&self) -> bool {
        self.mode != FitMode::Empty
    }
}

struct LmFit {
    params: Vec<f64>,
    cov: DMatrix<f64>,
    chi2: f64,
}

/// Weighted Levenberg-Marquardt; `model` returns the value and gradient.
fn levenberg_marquardt<M>(xs: &[f64], ys: &[f64], ws: &[f64], start: Vec<f64>, model: M) -> Option<LmFit>
where
    M: Fn(f64, &[f64]) -> (f64, Vec<f64>),
{
    let np = start.len();
    let eval = |p: &[f64]| -> (DMatrix<f64>, DVector<f64>, f64) {
        let mut jtj = DMatrix::zeros(np, np);
        let mut jtr = DVector::zeros(np);
        let mut chi2 = 0.0;
        for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
            let (f, g) = model(x, p);
            let r = y - f;
            chi2 += w * r * r;
            for a in 0..np {
                jtr[a] += w * g[a] * r;
                for b in 0..np {
                    jtj[(a, b)] += w * g[a] * g[b];
                }
            }
        }
        (jtj, jtr, chi2)
    };
    let mut p = start;
    let (mut jtj, mut jtr, mut chi2) = eval(&p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut a = jtj.clone();
        for i in 0..np {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
        }
        let Some(step) = a.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
        let (tj, tr, tc) = eval(&trial);
        if tc.is_finite() && tc <= chi2 {
            let small = p.iter().zip(&trial).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            let flat = chi2 - tc <= 1e-14 * chi2.max(1e-300);
            p = trial;
            jtj = tj;
            jtr = tr;
            chi2 = tc;
            lambda = (lambda / 10.0).max(1e-12);
            if small || (flat && lambda <= 1e-9) || chi2 == 0.0 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let cov = jtj.try_inverse()?;
    if p.iter().all(|v| v.is_finite()) && cov.iter().all(|v| v.is_finite()) {
        Some(LmFit { params: p, cov, chi2 })
    } else {
        None
    }
}

fn gaussian(x: f64, amp: f64, c: f64, s: f64) -> f64 {
    amp * (-(x - c) * (x - c) / (2.0 * s * s)).exp()
}

const ROOT_2PI: f64 = 2.506_628_274_631_000_7;

/// Per-window peak fit options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Half-width of each fit window (d/2 for path spacing d).
    pub window_half_width: f64,
    /// Predicted RMS peak width, used as the start value and for the reduced-data modes.
    pub predicted_width: f64,
}

/// Fits one Gaussian per expected centre in a scan.
pub fn fit_peaks(scan: &ScanRecord, centers: &[f64], opts: FitOptions) -> Result<Vec<PeakFit>, AnalysisError> {
    let values: Vec<f64> = scan.counts.iter().map(|&c| c as f64).collect();
    fit_profile(&scan.positions, &values, centers, opts)
}

/// [`fit_peaks`] on real-valued counts.
pub fn fit_profile(
    positions: &[f64],
    values: &[f64],
    centers: &[f64],
    opts: FitOptions,
) -> Result<Vec<PeakFit>, AnalysisError> {
    check_monotone(positions)?;
    if positions.len() != values.len() {
        return Err(DetectionError::LengthMismatch(positions.len(), values.len()).into());
    }
    if values.iter().all(|&v| v <= 0.0) {
        return Err(AnalysisError::NoSignal);
    }
    let half = opts.window_half_width;
    let step = median_step(positions);
    let mut fits = Vec::with_capacity(centers.len());
    for (index, &c0) in centers.iter().enumerate() {
        let idx: Vec<usize> = (0..positions.len())
            .filter(|&i| positions[i] >= c0 - half && positions[i] < c0 + half)
            .collect();
        if idx.len() < MIN_WINDOW_POINTS {
            return Err(AnalysisError::SparseWindow { center_mm: c0 * 1e3, points: idx.len() });
        }
        let xs: Vec<f64> = idx.iter().map(|&i| positions[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| values[i].max(0.0)).collect();
        let mut fit = fit_window(&xs, &ys, c0, half, step, opts.predicted_width);
        fit.index = index;
        fits.push(fit);
    }
    assign_nearest(&mut fits, centers);
    Ok(fits)
}

fn assign_nearest(fits: &mut [PeakFit], centers: &[f64]) {
    for fit in fits.iter_mut() {
        if fit.mode == FitMode::Empty {
            continue;
        }
        let dist: Vec<f64> = centers.iter().map(|c| (fit.center - c).abs()).collect();
        let best = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = centers.iter().map(|c| c.abs()).fold(fit.width, f64::max);
        let near: Vec<usize> = (0..centers.len()).filter(|&i| dist[i] - best <= 1e-12 * scale).collect();
        fit.index = near[0];
        fit.tie = near.len() > 1;
    }
}

fn fit_window(xs: &[f64], ys: &[f64], c0: f64, half: f64, step: f64, sigma0: f64) -> PeakFit {
    let ws: Vec<f64> = ys.iter().map(|&y| 1.0 / y.max(1.0)).collect();
    let positive = ys.iter().filter(|&&y| y > 0.0).count();
    let amp0 = ys.iter().copied().fold(0.0, f64::max);
    let n = xs.len() as f64;
    let empty = PeakFit {
        index: 0,
        center: c0,
        width: sigma0,
        area: 0.0,
        center_err: 0.0,
        width_err: 0.0,
        area_err: 0.0,
        reduced_chi2: 0.0,
        mode: FitMode::Empty,
        tie: false,
    };
    if positive == 0 {
        return empty;
    }
    let inside = |c: f64| c >= c0 - half && c < c0 + half;

    if positive >= 4 {
        let fit = levenberg_marquardt(xs, ys, &ws, vec![amp0, c0, sigma0], |x, p| {
            let g = gaussian(x, 1.0, p[1], p[2]);
            let dx = x - p[1];
            let s2 = p[2] * p[2];
            (p[0] * g, vec![g, p[0] * g * dx / s2, p[0] * g * dx * dx / (s2 * p[2])])
        });
        if let Some(f) = fit {
            let (a, c, s) = (f.params[0], f.params[1], f.params[2].abs());
            if a > 0.0 && s >= 0.25 * step && s <= 2.0 * half && inside(c) {
                let grad = [s * ROOT_2PI, 0.0, a * ROOT_2PI];
                let var: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| grad[i] * f.cov[(i, j)] * grad[j]).sum();
                return PeakFit {
                    center: c,
                    width: s,
                    area: a * s * ROOT_2PI,
                    center_err: f.cov[(1, 1)].sqrt(),
                    width_err: f.cov[(2, 2)].sqrt(),
                    area_err: var.max(0.0).sqrt(),
                    reduced_chi2: f.chi2 / (n - 3.0).max(1.0),
                    mode: FitMode::Full,
                    ..empty
                };
            }
        }
    }
    if positive >= 2 {
        let fit = levenberg_marquardt(xs, ys, &ws, vec![amp0, c0], |x, p| {
            let g = gaussian(x, 1.0, p[1], sigma0);
            (p[0] * g, vec![g, p[0] * g * (x - p[1]) / (sigma0 * sigma0)])
        });
        if let Some(f) = fit {
            let (a, c) = (f.params[0], f.params[1]);
            if a > 0.0 && inside(c) {
                return PeakFit {
                    center: c,
                    width: sigma0,
                    area: a * sigma0 * ROOT_2PI,
                    center_err: f.cov[(1, 1)].sqrt(),
                    area_err: f.cov[(0, 0)].sqrt() * sigma0 * ROOT_2PI,
                    reduced_chi2: f.chi2 / (n - 2.0).max(1.0),
                    mode: FitMode::FixedWidth,
                    ..empty
                };
            }
        }
    }
    let g: Vec<f64> = xs.iter().map(|&x| gaussian(x, 1.0, c0, sigma0)).collect();
    let sgg: f64 = g.iter().zip(&ws).map(|(g, w)| w * g * g).sum();
    if sgg <= 0.0 {
        return empty;
    }
    let a = g.iter().zip(ys).zip(&ws).map(|((g, y), w)| w * g * y).sum::<f64>() / sgg;
    let chi2: f64 = xs.iter().zip(ys).zip(&ws).map(|((&x, y), w)| w * (y - gaussian(x, a, c0, sigma0)).powi(2)).sum();
    PeakFit {
        area: a.max(0.0) * sigma0 * ROOT_2PI,
        area_err: sgg.powf(-0.5) * sigma0 * ROOT_2PI,
        reduced_chi2: chi2 / (n - 1.0).max(1.0),
        mode: FitMode::FixedShape,
        ..empty
    }
}

fn median_step(xs: &[f64]) -> f64 {
    let mut d: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Geometry and thresholds for turning a scan set into joint coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisPlan {
    pub dimension: usize,
    pub pitch: f64,
    pub predicted_width: f64,
    pub tau_diag: f64,
}

impl AnalysisPlan {
    pub fn centers(&self) -> Vec<f64> {
        (0..self.dimension).map(|i| i as f64 * self.pitch).collect()
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions { window_half_width: self.pitch / 2.0, predicted_width: self.predicted_width }
    }

    /// Path index of a fixed detector-1 position, if it lies within ±d/2 of one.
    pub fn path_of(&self, fixed_position: f64) -> Option<usize> {
        let i = (fixed_position / self.pitch).round();
        let ok = i >= 0.0 && (i as usize) < self.dimension && (fixed_position - i * self.pitch).abs() < self.pitch / 2.0;
        ok.then_some(i as usize)
    }
}

/// Fits of every image-plane scan, indexed by fixed path.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSetFits {
    pub fits: Vec<Vec<PeakFit>>,
}

/// Orders scans by fixed path and fits each. A scan with no counts at all
/// contributes zero-area peaks rather than failing the set.
pub fn fit_scan_set(scans: &[ScanRecord], plan: &AnalysisPlan) -> Result<ScanSetFits, AnalysisError> {
    let mut slots: Vec<Option<&ScanRecord>> = vec![None; plan.dimension];
    for scan in scans {
        if scan.plane != Plane::Image {
            return Err(AnalysisError::WrongPlane { expected: Plane::Image, got: scan.plane });
        }
        let i = plan.path_of(scan.fixed_position).ok_or(AnalysisError::UnassignedScan(scan.fixed_position * 1e3))?;
        if slots[i].replace(scan).is_some() {
            return Err(AnalysisError::DuplicateScan(i));
        }
    }
    let missing: Vec<usize> = (0..plan.dimension).filter(|&i| slots[i].is_none()).collect();
    if !missing.is_empty() {
        return Err(AnalysisError::MissingScans(missing));
    }
    let centers = plan.centers();
    let fits = slots
        .into_iter()
        .flatten()
        .map(|scan| match fit_peaks(scan, &centers, plan.fit_options()) {
            Err(AnalysisError::NoSignal) => Ok(centers
                .iter()
                .enumerate()
                .map(|(j, &c)| PeakFit {
                    index: j,
                    center: c,
                    width: plan.predicted_width,
                    area: 0.0,
                    center_err: 0.0,
                    width_err: 0.0,
                    area_err: 0.0,
                    reduced_chi2: 0.0,
                    mode: FitMode::Empty,
                    tie: false,
                })
                .collect()),
            other => other,
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScanSetFits { fits })
}

/// |α_ij|² = area(ij) / Σ area. Row i comes from the scan with detector 1 on path i.
pub fn assemble_alpha(fits: &ScanSetFits) -> Result<DiscreteJointCoeffs, AnalysisError> {
    let n = fits.fits.len();
    let mut areas = DMatrix::<f64>::zeros(n, n);
    for (i, row) in fits.fits.iter().enumerate() {
        for f in row {
            areas[(i, f.index)] += f.area;
        }
    }
    let total = areas.sum();
    if !(total > 0.0) {
        return Err(AnalysisError::NoSignal);
    }
    Ok(DiscreteJointCoeffs::new(areas / total)?)
}

/// C = 2κ₀κ₁.
pub fn concurrence_2x2(kappa: [f64; 2]) -> f64 {
    2.0 * kappa[0] * kappa[1]
}

/// C = √(3(κ₀²κ₁² + κ₁²κ₂² + κ₂²κ₀²)).
pub fn concurrence_3x3(kappa: [f64; 3]) -> f64 {
    let [a, b, c] = kappa.map(|k| k * k);
    (3.0 * (a * b + b * c + c * a)).sqrt()
}

/// Dispatches on the number of Schmidt coefficients. D = 1 is a product state.
pub fn concurrence(kappa: &[f64]) -> Result<f64, AnalysisError> {
    match *kappa {
        [_] => Ok(0.0),
        [a, b] => Ok(concurrence_2x2([a, b])),
        [a, b, c] => Ok(concurrence_3x3([a, b, c])),
        _ => Err(AnalysisError::UnsupportedDimension(kappa.len())),
    }
}

/// One pass of fit → assemble → Schmidt → concurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub fits: ScanSetFits,
    pub coeffs: DiscreteJointCoeffs,
    pub kappa: Vec<f64>,
    pub concurrence: f64,
}

pub fn analyze(scans: &[ScanRecord], plan: &AnalysisPlan) -> Result<Analysis, AnalysisError> {
    if plan.dimension > 3 {
        return Err(AnalysisError::UnsupportedDimension(plan.dimension));
    }
    let fits = fit_scan_set(scans, plan)?;
    let coeffs = assemble_alpha(&fits)?;
    let kappa = schmidt_coefficients(&coeffs, plan.tau_diag)?;
    let c = concurrence(&kappa)?;
    Ok(Analysis { fits, coeffs, kappa, concurrence: c })
}

/// Sample mean and standard deviation (n − 1).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub resamples: usize,
    pub failures: usize,
    pub concurrence: Summary,
    pub kappa: Vec<Summary>,
    /// Row-major D×D summaries of |α_ij|².
    pub alpha: Vec<Summary>,
}

/// Redraws every count as Poisson(observed); a zero count stays zero.
pub fn poisson_resample(scan: &ScanRecord, rng: &mut ChaCha8Rng) -> ScanRecord {
    let counts = scan
        .counts
        .iter()
        .map(|&c| match Poisson::new(c as f64) {
            Ok(p) => p.sample(rng) as u64,
            Err(_) => 0,
        })
        .collect();
    ScanRecord { counts, ..scan.clone() }
}

/// Parametric Poisson bootstrap of the whole analysis. Resample r draws from
/// its own ChaCha stream r under `seed`, so results do not depend on thread count.
pub fn mc_uncertainty(
    scans: &[ScanRecord],
    plan: &AnalysisPlan,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary, AnalysisError> {
    if n_resamples < MIN_RESAMPLES {
        return Err(AnalysisError::TooFewResamples(n_resamples));
    }
    let runs: Vec<Result<Analysis, AnalysisError>> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            let resampled: Vec<ScanRecord> = scans.iter().map(|s| poisson_resample(s, &mut rng)).collect();
            analyze(&resampled, plan)
        })
        .collect();
    let failed: Vec<&AnalysisError> = runs.iter().filter_map(|r| r.as_ref().err()).collect();
    if failed.len() as f64 > MAX_FAILURE_RATE * n_resamples as f64 {
        return Err(AnalysisError::BootstrapFailed {
            failed: failed.len(),
            total: n_resamples,
            first: failed[0].to_string(),
        });
    }
    let ok: Vec<&Analysis> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let d = plan.dimension;
    let column = |f: &dyn Fn(&Analysis) -> f64| Summary::of(&ok.iter().map(|a| f(a)).collect::<Vec<_>>());
    Ok(BootstrapSummary {
        resamples: n_resamples,
        failures: failed.len(),
        concurrence: column(&|a| a.concurrence),
        kappa: (0..d).map(|k| column(&|a| a.kappa[k])).collect(),
        alpha: (0..d * d).map(|ij| column(&|a| a.coeffs.get(ij / d, ij % d))).collect(),
    })
}

/// Point estimates from the observed counts with bootstrap uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct EntanglementReport {
    pub dimension: usize,
    pub coeffs: DiscreteJointCoeffs,
    pub coeffs_std: DMatrix<f64>,
    pub kappa: Vec<f64>,
    pub kappa_std: Vec<f64>,
    pub concurrence: f64,
    pub concurrence_std: f64,
    pub off_diagonal_mass: f64,
    pub tau_diag: f64,
    pub diagonal: bool,
    pub bootstrap: BootstrapSummary,
}

pub fn entanglement_report(
    scans: &[ScanRecord],
    plan: &AnalysisPlan,
    n_resamples: usize,
    seed: u64,
) -> Result<EntanglementReport, AnalysisError> {
    let point = analyze(scans, plan)?;
    let boot = mc_uncertainty(scans, plan, n_resamples, seed)?;
    Ok(report_from(point, boot, plan))
}

/// Report for known probabilities (no scans, zero uncertainty).
pub fn report_from_coeffs(coeffs: DiscreteJointCoeffs, tau_diag: f64) -> Result<EntanglementReport, AnalysisError> {
    let d = coeffs.dimension();
    let kappa = schmidt_coefficients(&coeffs, tau_diag)?;
    let c = concurrence(&kappa)?;
    let plan = AnalysisPlan { dimension: d, pitch: 1.0, predicted_width: 0.0, tau_diag };
    let boot = BootstrapSummary {
        resamples: 0,
        failures: 0,
        concurrence: Summary { mean: c, std: 0.0 },
        kappa: kappa.iter().map(|&k| Summary { mean: k, std: 0.0 }).collect(),
        alpha: coeffs.matrix().iter().map(|_| Summary::default()).collect(),
    };
    let point = Analysis { fits: ScanSetFits { fits: Vec::new() }, coeffs, kappa, concurrence: c };
    Ok(report_from(point, boot, &plan))
}

fn report_from(point: Analysis, boot: BootstrapSummary, plan: &AnalysisPlan) -> EntanglementReport {
    let d = plan.dimension;
    let off = point.coeffs.off_diagonal_mass();
    EntanglementReport {
        dimension: d,
        coeffs_std: DMatrix::from_fn(d, d, |i, j| boot.alpha.get(i * d + j).map_or(0.0, |s| s.std)),
        kappa_std: boot.kappa.iter().map(|s| s.std).collect(),
        concurrence_std: boot.concurrence.std,
        concurrence: point.concurrence,
        kappa: point.kappa,
        off_diagonal_mass: off,
        tau_diag: plan.tau_diag,
        diagonal: off <= plan.tau_diag,
        coeffs: point.coeffs,
        bootstrap: boot,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeMetrics {
    pub period: f64,
    pub visibility: f64,
    /// RMS width of a Gaussian through the fringe maxima; `None` when the
    /// envelope is too flat or too sparse to fit.
    pub envelope_width: Option<f64>,
}

/// Minimum fringe contrast (relative modulation) treated as a detection.
pub const FRINGE_CONTRAST_MIN: f64 = 0.05;
/// Required ratio of the spectral peak to the median spectral magnitude.
pub const FRINGE_SNR_MIN: f64 = 10.0;

/// Period, visibility and envelope width of a Fourier-plane scan.
pub fn fringe_metrics(scan: &ScanRecord) -> Result<FringeMetrics, AnalysisError> {
    let ys: Vec<f64> = scan.counts.iter().map(|&c| c as f64).collect();
    fringe_metrics_profile(&scan.positions, &ys)
}

/// [`fringe_metrics`] on real-valued samples.
pub fn fringe_metrics_profile(xs: &[f64], ys: &[f64]) -> Result<FringeMetrics, AnalysisError> {
    check_monotone(xs)?;
    if xs.len() != ys.len() {
        return Err(DetectionError::LengthMismatch(xs.len(), ys.len()).into());
    }
    let n = xs.len();
    if n < 16 {
        return Err(AnalysisError::FringeInput("at least 16 samples".into()));
    }
    let step = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    // scan files store positions to 1 nm
    if xs.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step + 2e-9) {
        return Err(AnalysisError::FringeInput("a uniform scan step".into()));
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return Err(AnalysisError::NoFringes);
    }
    let span = n as f64 * step;

    let padded = (n * 4).next_power_of_two();
    let hann: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect();
    let wsum: f64 = hann.iter().sum();
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = (0..padded)
        .map(|i| rustfft::num_complex::Complex::new(if i < n { (ys[i] - mean) * hann[i] } else { 0.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mags: Vec<f64> = buf[..padded / 2].iter().map(|c| c.norm()).collect();
    // bins per cycle-per-span
    let zoom = padded as f64 / n as f64;
    let mut lo = (4.0 * zoom).ceil() as usize;
    if lo + 2 >= mags.len() {
        return Err(AnalysisError::FringeInput("a longer scan".into()));
    }
    // skip the tail of the envelope lobe around zero frequency
    let mut k = (0..=lo).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap_or(0);
    while k + 1 < mags.len() && mags[k + 1] < mags[k] {
        k += 1;
    }
    lo = lo.max(k);
    if lo + 2 >= mags.len() {
        return Err(AnalysisError::NoFringes);
    }
    let (kmax, &peak) = mags[lo..].iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, m)| (k + lo, m)).unwrap();
    let mut rest: Vec<f64> = mags[lo..].to_vec();
    rest.sort_by(f64::total_cmp);
    let median = rest[rest.len() / 2];
    let contrast = 2.0 * peak / (mean * wsum);
    if contrast < FRINGE_CONTRAST_MIN || peak < FRINGE_SNR_MIN * median || kmax + 1 >= mags.len() {
        return Err(AnalysisError::NoFringes);
    }
    let (a, b, c) = (mags[kmax - 1], mags[kmax], mags[kmax + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let cycles = (kmax as f64 + shift) / zoom;
    let period = span / cycles;
    if period * 4.0 > xs[n - 1] - xs[0] {
        return Err(AnalysisError::FringeInput("at least 4 fringe periods in the scan".into()));
    }

    let (imax, _) = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let central: Vec<f64> = (0..n).filter(|&i| (xs[i] - xs[imax]).abs() <= 1.5 * period).map(|i| ys[i]).collect();
    let hi = central.iter().copied().fold(f64::MIN, f64::max);
    let low = central.iter().copied().fold(f64::MAX, f64::min);
    let visibility = if hi + low > 0.0 { (hi - low) / (hi + low) } else { 0.0 };

    Ok(FringeMetrics { period, visibility, envelope_width: envelope_fit(xs, ys, xs[imax], period) })
}

/// Gaussian fit through the maximum of each fringe period.
fn envelope_fit(xs: &[f64], ys: &[f64], anchor: f64, period: f64) -> Option<f64> {
    let mut maxima: Vec<(i64, f64, f64)> = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let k = ((x - anchor) / period).round() as i64;
        match maxima.last_mut() {
            Some(m) if m.0 == k => {
                if y > m.2 {
                    m.1 = x;
                    m.2 = y;
                }
            }
            _ => maxima.push((k, x, y)),
        }
    }
    if maxima.len() < 4 {
        return None;
    }
    let px: Vec<f64> = maxima.iter().map(|m| m.1).collect();
    let py: Vec<f64> = maxima.iter().map(|m| m.2).collect();
    let ws: Vec<f64> = py.iter().map(|&y| 1.0 / y.max(1.0)).collect();
    let amp0 = py.iter().copied().fold(0.0, f64::max);
    let span = px[px.len() - 1] - px[0];
    let fit = levenberg_marquardt(&px, &py, &ws, vec![amp0, anchor, span / 4.0], |x, p| {
        let g = gaussian(x, 1.0, p[1], p[2]);
        let dx = x - p[1];
        let s2 = p[2] * p[2];
        (p[0] * g, vec![g, p[0] * g * dx / s2, p[0] * g * dx * dx / (s2 * p[2])])
    })?;
    let s = fit.params[2].abs();
    (s.is_finite() && s > period && s < span / 2.0).then_some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::ScanMeta;
    use proptest::prelude::*;

    fn opts(d: f64, w: f64) -> FitOptions {
        FitOptions { window_half_width: d / 2.0, predicted_width: w }
    }

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        crate::detection::stepped_grid(lo, hi, step)
    }

    #[test]
    fn noise_free_single_gaussian_area() {
        let xs = grid(-5e-4, 5e-4, 2e-5);
        let (sigma, step) = (1e-4, 2e-5);
        let area_bins = 1000.0;
        let amp = area_bins * step / (sigma * ROOT_2PI);
        let ys: Vec<f64> = xs.iter().map(|&x| gaussian(x, amp, 1.3e-5, sigma)).collect();
        let fits = fit_profile(&xs, &ys, &[0.0], opts(1e-3, 8e-5)).unwrap();
        let got = fits[0].area / step;
        assert_eq!(fits[0].mode, FitMode::Full);
        assert!((got - area_bins).abs() / area_bins < 1e-6, "{got}");
        assert!((fits[0].center - 1.3e-5).abs() < 1e-12);
    }

    #[test]
    fn two_peaks_with_two_to_one_area() {
        let d = 1e-3;
        let xs = grid(-5e-4, 1.5e-3 - 1e-9, 2e-5);
        let sigma = 6e-5;
        let profile = |x: f64| gaussian(x, 1e5, 0.0, sigma) + gaussian(x, 5e4, d, sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let counts: Vec<u64> = xs.iter().map(|&x| Poisson::new(profile(x)).unwrap().sample(&mut rng) as u64).collect();
        let scan = ScanRecord::new(Plane::Image, 0.0, xs, counts, ScanMeta::default()).unwrap();
        let fits = fit_peaks(&scan, &[0.0, d], opts(d, 5e-5)).unwrap();
        let ratio = fits[0].area / fits[1].area;
        let err = ratio * ((fits[0].area_err / fits[0].area).powi(2) + (fits[1].area_err / fits[1].area).powi(2)).sqrt();
        assert!((ratio - 2.0).abs() < 3.0 * err, "{ratio} ± {err}");
        assert!(err < 0.02);
    }

    #[test]
    fn flat_zero_scan_has_no_signal() {
        let xs = grid(-5e-4, 5e-4, 1e-4);
        let scan = ScanRecord::new(Plane::Image, 0.0, xs.clone(), vec![0; xs.len()], ScanMeta::default()).unwrap();
        let err = fit_peaks(&scan, &[0.0], opts(1e-3, 5e-5)).unwrap_err();
        assert_eq!(err.to_string(), "no signal");
    }

    #[test]
    fn sparse_windows_rejected() {
        let xs = grid(-5e-4, 5e-4, 2e-4);
        let ys = vec![1.0; xs.len()];
        assert!(matches!(fit_profile(&xs, &ys, &[0.0, 1e-3], opts(1e-3, 5e-5)), Err(AnalysisError::SparseWindow { .. })));
    }

    #[test]
    fn reduced_data_modes() {
        let xs = grid(-4e-4, 4e-4, 2e-4);
        let one = fit_profile(&xs, &[0.0, 0.0, 900.0, 0.0, 0.0], &[0.0], opts(1e-3, 4e-5)).unwrap();
        assert_eq!(one[0].mode, FitMode::FixedShape);
        assert!((one[0].area / (900.0 * 4e-5 * ROOT_2PI) - 1.0).abs() < 1e-6);
        let two = fit_profile(&xs, &[0.0, 30.0, 900.0, 10.0, 0.0], &[0.0], opts(1e-3, 1e-4)).unwrap();
        assert_eq!(two[0].mode, FitMode::FixedWidth);
        assert!(two[0].area > 0.0);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let mut fits = vec![PeakFit {
            index: 1,
            center: 5e-4,
            width: 1e-4,
            area: 1.0,
            center_err: 0.0,
            width_err: 0.0,
            area_err: 0.0,
            reduced_chi2: 0.0,
            mode: FitMode::Full,
            tie: false,
        }];
        assign_nearest(&mut fits, &[0.0, 1e-3]);
        assert_eq!(fits[0].index, 0);
        assert!(fits[0].tie);
    }

    #[test]
    fn concurrence_identities() {
        let h = 0.5f64.sqrt();
        assert!((concurrence_2x2([h, h]) - 1.0).abs() < 1e-12);
        assert_eq!(concurrence_2x2([1.0, 0.0]), 0.0);
        let t = (1.0f64 / 3.0).sqrt();
        assert!((concurrence_3x3([t, t, t]) - 1.0).abs() < 1e-12);
        assert_eq!(concurrence_3x3([1.0, 0.0, 0.0]), 0.0);
        assert_eq!(concurrence(&[1.0]).unwrap(), 0.0);
        assert!(matches!(concurrence(&[0.5; 4]), Err(AnalysisError::UnsupportedDimension(4))));
    }

    #[test]
    fn concurrence_monotone_towards_balance() {
        let c = |p: f64| concurrence_2x2([p.sqrt(), (1.0 - p).sqrt()]);
        let mut prev = c(0.0);
        for i in 1..=500 {
            let v = c(i as f64 / 1000.0);
            assert!(v > prev);
            prev = v;
        }
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("degenerate", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| (x / s).sqrt()).collect())
        })
    }

    proptest! {
        #[test]
        fn concurrence_permutation_invariant(k in simplex(3), rot in 0usize..3) {
            let mut p = k.clone();
            p.rotate_left(rot);
            p.swap(0, 2);
            let a = concurrence(&k).unwrap();
            let b = concurrence(&p).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
            prop_assert!(a <= 1.0 + 1e-9 && a >= 0.0);
            let c = concurrence(&k[..2].iter().map(|x| x / (k[0]*k[0] + k[1]*k[1]).sqrt().max(1e-300)).collect::<Vec<_>>()).unwrap();
            prop_assert!(c <= 1.0 + 1e-9);
        }

        #[test]
        fn fringe_period_translation_invariant(shift in -5e-3f64..5e-3) {
            let xs: Vec<f64> = (0..800).map(|i| -4e-3 + i as f64 * 1e-5).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| 1.0 + (2.0 * PI * x / 1.775e-4).cos()).collect();
            let moved: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let a = fringe_metrics_profile(&xs, &ys).unwrap().period;
            let b = fringe_metrics_profile(&moved, &ys).unwrap().period;
            prop_assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn assemble_single_peak() {
        let fits = ScanSetFits {
            fits: vec![vec![PeakFit {
                index: 0,
                center: 0.0,
                width: 1e-4,
                area: 3.0,
                center_err: 0.0,
                width_err: 0.0,
                area_err: 0.0,
                reduced_chi2: 0.0,
                mode: FitMode::Full,
                tie: false,
            }]],
        };
        let c = assemble_alpha(&fits).unwrap();
        assert_eq!(c.matrix().as_slice(), &[1.0]);
    }

    #[test]
    fn missing_and_duplicate_scans() {
        let plan = AnalysisPlan { dimension: 3, pitch: 1e-3, predicted_width: 5e-5, tau_diag: 0.05 };
        let xs = grid(-5e-4, 2.5e-3 - 1e-9, 2e-4);
        let scan = |fixed: f64| ScanRecord::new(Plane::Image, fixed, xs.clone(), vec![1; xs.len()], ScanMeta::default()).unwrap();
        let err = fit_scan_set(&[scan(1e-3)], &plan).unwrap_err();
        assert_eq!(err, AnalysisError::MissingScans(vec![0, 2]));
        assert_eq!(err.to_string(), "partial data: no scan for fixed path(s) [0, 2]");
        assert_eq!(fit_scan_set(&[scan(0.0), scan(1e-5)], &plan).unwrap_err(), AnalysisError::DuplicateScan(0));
    }

    #[test]
    fn report_from_known_probabilities() {
        let r = report_from_coeffs(DiscreteJointCoeffs::diagonal(&[0.5, 0.5]).unwrap(), 0.05).unwrap();
        assert!((r.concurrence - 1.0).abs() < 1e-12);
        assert!(r.diagonal);
        assert!((r.coeffs.matrix().sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fringe_metrics_on_pure_cosine() {
        let xs: Vec<f64> = (0..801).map(|i| -4e-3 + i as f64 * 1e-5).collect();
        let env = |x: f64| (-x * x / (2.0 * 1e-3f64.powi(2))).exp();
        let ys: Vec<f64> = xs.iter().map(|&x| 1e4 * env(x) * (1.0 + (2.0 * PI * x / 1.775e-4).cos())).collect();
        let m = fringe_metrics_profile(&xs, &ys).unwrap();
        assert!((m.period - 1.775e-4).abs() < 1e-5, "{}", m.period);
        assert!(m.visibility > 0.99);
        let w = m.envelope_width.unwrap();
        assert!((w - 1e-3).abs() < 5e-5, "{w}");
    }

    #[test]
    fn fringe_metrics_rejects_smooth_profile() {
        let xs: Vec<f64> = (0..801).map(|i| -4e-3 + i as f64 * 1e-5).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 1e4 * (-x * x / 2e-6).exp()).collect();
        assert_eq!(fringe_metrics_profile(&xs, &ys).unwrap_err(), AnalysisError::NoFringes);
    }

    #[test]
    fn bootstrap_needs_enough_resamples() {
        let plan = AnalysisPlan { dimension: 1, pitch: 1e-3, predicted_width: 5e-5, tau_diag: 0.05 };
        assert_eq!(mc_uncertainty(&[], &plan, 10, 0).unwrap_err(), AnalysisError::TooFewResamples(10));
    }
}
