//! Experiment configuration files.
//!
//! ```text
//! [source]
//! dimension = 2
//! d = 1 mm
//! lambda_pump = 355 nm
//!
//! [pbg]
//! element = HWP angle_deg=22.5
//! element = BD sign=+1
//! element = BD sign=-1 paths=0
//! ```
//!
//! Lengths need a unit suffix (m, cm, mm, um, µm, nm). Writing always uses
//! meters and radians so that a written file loads back to the same value.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use thiserror::Error;

use crate::analysis::{AnalysisPlan, MIN_RESAMPLES};
use crate::beam::{Envelope, SourceConfig};
use crate::detection::{envelope_width, stepped_grid, DetectionError, DetectionModel, Plane};
use crate::jones::{
    apply_chain, hwp_angle_for_h_fraction, pump_amplitudes, Displacement, ElementKind, JonesError, OpticalElement,
    PolPathField,
};
use crate::state::{build_state, BiphotonPathState, StateError, DEFAULT_TAU_DIAG};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: invalid configuration:\n  {}", .violations.join("\n  "))]
    Invalid { path: PathBuf, violations: Vec<String> },
    #[error("pump: {0}")]
    Pump(#[from] JonesError),
    #[error("state: {0}")]
    State(#[from] StateError),
    #[error("detector model: {0}")]
    Model(#[from] DetectionError),
}

/// How the pump path amplitudes are specified.
#[derive(Debug, Clone, PartialEq)]
pub enum PumpSpec {
    /// PBG element chain applied to a horizontally polarized single beam.
    Chain(Vec<OpticalElement>),
    /// Explicit amplitudes, renormalized on use.
    Amplitudes(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub image_step: f64,
    pub image_slit: f64,
    pub fourier_step: f64,
    pub fourier_slit: f64,
    /// Slit on the fixed detector; `None` uses the scanned detector's slit.
    pub fixed_slit: Option<f64>,
    /// Detector-1 positions for Fourier-plane scans.
    pub fourier_fixed: Vec<f64>,
    /// Half-range of the Fourier-plane scan; `None` means four envelope widths.
    pub fourier_half_range: Option<f64>,
}

impl Default for ScanPlan {
    fn default() -> Self {
        Self {
            image_step: 2e-4,
            image_slit: 1e-4,
            fourier_step: 1e-5,
            fourier_slit: 5e-5,
            fixed_slit: None,
            fourier_fixed: vec![0.0],
            fourier_half_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    pub mean_peak_counts: f64,
    pub seed: u64,
}

impl Default for NoisePlan {
    fn default() -> Self {
        Self { mean_peak_counts: 1e4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub tau_diag: f64,
    pub n_resamples: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self { tau_diag: DEFAULT_TAU_DIAG, n_resamples: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: SourceConfig,
    pub pump: PumpSpec,
    pub scan: ScanPlan,
    pub noise: NoisePlan,
    pub analysis: AnalysisSettings,
}

impl ExperimentConfig {
    /// Normalized pump amplitudes A_ℓ.
    pub fn pump_amplitudes(&self) -> Result<Vec<Complex64>, ConfigError> {
        match &self.pump {
            PumpSpec::Chain(chain) => Ok(pump_amplitudes(&apply_chain(&PolPathField::pure_h(), chain)?)?.amplitudes),
            PumpSpec::Amplitudes(a) => {
                let norm: f64 = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    return Err(JonesError::NoSpdcPump.into());
                }
                Ok(a.iter().map(|c| c / norm).collect())
            }
        }
    }

    pub fn state(&self) -> Result<BiphotonPathState, ConfigError> {
        Ok(build_state(&self.pump_amplitudes()?, self.source.crystal_width(), self.source.pitch)?)
    }

    pub fn fixed_slit(&self, plane: Plane) -> f64 {
        self.scan.fixed_slit.unwrap_or(self.scan_slit(plane))
    }

    pub fn scan_slit(&self, plane: Plane) -> f64 {
        match plane {
            Plane::Image => self.scan.image_slit,
            Plane::Fourier => self.scan.fourier_slit,
        }
    }

    pub fn model(&self, plane: Plane) -> Result<DetectionModel, ConfigError> {
        Ok(DetectionModel::new(plane, self.state()?, &self.source, self.fixed_slit(plane), self.scan_slit(plane))?)
    }

    /// Detector-1 positions i·d, one per path.
    pub fn image_fixed_positions(&self) -> Vec<f64> {
        (0..self.source.dimension).map(|i| i as f64 * self.source.pitch).collect()
    }

    /// Detector-2 positions from −d/2 to (D − 1)d + d/2 on multiples of the step.
    pub fn image_grid(&self) -> Vec<f64> {
        let d = self.source.pitch;
        let hi = (self.source.dimension as f64 - 0.5) * d;
        stepped_grid(-d / 2.0, hi, self.scan.image_step).into_iter().filter(|&x| x < hi).collect()
    }

    pub fn fourier_grid(&self) -> Vec<f64> {
        let half = self.scan.fourier_half_range.unwrap_or_else(|| {
            4.0 * envelope_width(self.source.fourier_focal_length, self.source.down_wavenumber(), self.source.crystal_width())
        });
        stepped_grid(-half, half, self.scan.fourier_step)
    }

    pub fn analysis_plan(&self, model: &DetectionModel) -> AnalysisPlan {
        AnalysisPlan {
            dimension: self.source.dimension,
            pitch: self.source.pitch,
            predicted_width: model.conditional_width(),
            tau_diag: self.analysis.tau_diag,
        }
    }

    /// Every violated invariant of the whole configuration.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.source.violations();
        let s = &self.scan;
        for (name, x) in [("image_step", s.image_step), ("fourier_step", s.fourier_step)] {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive (got {x})"));
            }
        }
        for (name, x) in [("image_slit", s.image_slit), ("fourier_slit", s.fourier_slit), ("fixed_slit", s.fixed_slit.unwrap_or(0.0))] {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(format!("{name} must be non-negative (got {x})"));
            }
        }
        if let Some(h) = s.fourier_half_range {
            if !(h > 0.0 && h.is_finite()) {
                v.push(format!("fourier_half_range must be positive (got {h})"));
            }
        }
        if s.fourier_fixed.is_empty() {
            v.push("fourier_fixed must list at least one position".into());
        }
        if !(self.noise.mean_peak_counts > 0.0 && self.noise.mean_peak_counts.is_finite()) {
            v.push(format!("mean_peak_counts must be positive (got {})", self.noise.mean_peak_counts));
        }
        if !(self.analysis.tau_diag >= 0.0 && self.analysis.tau_diag <= 1.0) {
            v.push(format!("tau_diag must lie in [0, 1] (got {})", self.analysis.tau_diag));
        }
        if self.analysis.n_resamples < MIN_RESAMPLES {
            v.push(format!("n_resamples must be at least {MIN_RESAMPLES} (got {})", self.analysis.n_resamples));
        }
        if v.is_empty() {
            match self.pump_amplitudes() {
                Ok(a) if a.len() != self.source.dimension => v.push(format!(
                    "dimension: pump produces {} paths but dimension = {}",
                    a.len(),
                    self.source.dimension
                )),
                Ok(_) => {}
                Err(e) => v.push(e.to_string()),
            }
        }
        v
    }
}

fn parse_number(s: &str) -> Result<f64, String> {
    match s.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t.parse::<f64>().map_err(|_| format!("'{t}' is not a number")),
    }
}

/// Length with unit suffix, in meters.
pub fn parse_length(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if matches!(s, "inf" | "+inf" | "-inf") {
        return parse_number(s);
    }
    // dividing by an exact power of ten keeps "355 nm" == 355e-9
    const UNITS: [(&str, f64); 6] = [("nm", 1e9), ("um", 1e6), ("µm", 1e6), ("mm", 1e3), ("cm", 1e2), ("m", 1.0)];
    let (num, div) = UNITS
        .iter()
        .find_map(|&(u, div)| s.strip_suffix(u).map(|n| (n, div)))
        .ok_or_else(|| match s.find(|c: char| c.is_alphabetic()) {
            Some(i) if s[..i].trim().parse::<f64>().is_ok() => format!("unknown length unit '{}'", &s[i..]),
            _ => format!("'{s}' needs a length unit (m, cm, mm, um, nm)"),
        })?;
    Ok(parse_number(num)? / div)
}

fn parse_element(s: &str) -> Result<OpticalElement, String> {
    let mut tokens = s.split_whitespace();
    let kind = tokens.next().ok_or("empty element")?.to_ascii_uppercase();
    let mut opts = BTreeMap::new();
    for t in tokens {
        let (k, v) = t.split_once('=').ok_or_else(|| format!("expected key=value, got '{t}'"))?;
        if opts.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("option '{k}' given twice"));
        }
    }
    let mut take = |k: &str| opts.remove(k);
    let angle = |deg: Option<String>, rad: Option<String>, frac: Option<String>| -> Result<f64, String> {
        match (deg, rad, frac) {
            (Some(d), None, None) => Ok(parse_number(&d)?.to_radians()),
            (None, Some(r), None) => parse_number(&r),
            (None, None, Some(f)) => {
                let f = parse_number(&f)?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(format!("h_fraction must lie in [0, 1] (got {f})"));
                }
                Ok(hwp_angle_for_h_fraction(f))
            }
            (None, None, None) => Err("missing angle (angle_deg, angle_rad or h_fraction)".into()),
            _ => Err("give exactly one of angle_deg, angle_rad, h_fraction".into()),
        }
    };
    let mut elem = match kind.as_str() {
        "HWP" => OpticalElement::hwp(angle(take("angle_deg"), take("angle_rad"), take("h_fraction"))?),
        "QWP" => OpticalElement::qwp(angle(take("angle_deg"), take("angle_rad"), None)?),
        "BD" => {
            let sign = take("sign").ok_or("BD needs sign=+1 or sign=-1")?;
            let sign: i64 = sign.trim_start_matches('+').parse().map_err(|_| format!("bad sign '{sign}'"))?;
            OpticalElement::bd(Displacement::from_sign(sign).ok_or("sign must be +1 or -1")?)
        }
        other => return Err(format!("unknown element type '{other}' (HWP, QWP, BD)")),
    };
    if let Some(p) = take("paths") {
        let paths = p
            .split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad path index '{x}'")))
            .collect::<Result<Vec<_>, _>>()?;
        elem = elem.on_paths(paths);
    }
    if let Some(k) = opts.keys().next() {
        return Err(format!("unknown element option '{k}'"));
    }
    Ok(elem)
}

fn format_element(e: &OpticalElement) -> String {
    let mut s = match e.kind {
        ElementKind::Hwp { theta } => format!("HWP angle_rad={theta}"),
        ElementKind::Qwp { theta } => format!("QWP angle_rad={theta}"),
        ElementKind::Bd { displacement } => format!("BD sign={:+}", displacement.offset()),
    };
    if let Some(p) = &e.paths {
        let list: Vec<String> = p.iter().map(|i| i.to_string()).collect();
        s.push_str(&format!(" paths={}", list.join(",")));
    }
    s
}

const SECTIONS: [&str; 5] = ["source", "pbg", "scan", "noise", "analysis"];

#[derive(Default)]
struct Raw {
    values: BTreeMap<(String, String), (usize, String)>,
    elements: Vec<(usize, String)>,
}

fn tokenize(text: &str, path: &Path) -> Result<Raw, ConfigError> {
    let err = |line: usize, message: String| ConfigError::Parse { path: path.to_path_buf(), line, message };
    let mut raw = Raw::default();
    let mut section: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| err(n, "unterminated section header".into()))?.trim();
            if !SECTIONS.contains(&name) {
                return Err(err(n, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let sec = section.clone().ok_or_else(|| err(n, "key outside of a [section]".into()))?;
        let (k, v) = line.split_once('=').ok_or_else(|| err(n, format!("expected 'key = value', got '{line}'")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if sec == "pbg" && k == "element" {
            raw.elements.push((n, v));
            continue;
        }
        if raw.values.insert((sec.clone(), k.clone()), (n, v)).is_some() {
            return Err(err(n, format!("duplicate key '{k}' in [{sec}]")));
        }
    }
    Ok(raw)
}

struct Reader<'a> {
    raw: Raw,
    path: &'a Path,
    missing: Vec<String>,
}

impl Reader<'_> {
    fn take<T>(&mut self, sec: &str, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, ConfigError> {
        match self.raw.values.remove(&(sec.to_string(), key.to_string())) {
            None => Ok(None),
            Some((line, v)) => parse(&v).map(Some).map_err(|m| ConfigError::Parse {
                path: self.path.to_path_buf(),
                line,
                message: format!("{key}: {m}"),
            }),
        }
    }

    fn required<T>(&mut self, sec: &str, key: &str, parse: impl Fn(&str) -> Result<T, String>, fallback: T) -> Result<T, ConfigError> {
        Ok(match self.take(sec, key, parse)? {
            Some(v) => v,
            None => {
                self.missing.push(if key == "w_p" {
                    "w_p is required and has no default".into()
                } else {
                    format!("{key} required in [{sec}]")
                });
                fallback
            }
        })
    }
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("'{s}' is not a non-negative integer"))
}

fn parse_u64(s: &str) -> Result<u64, String> {
    s.trim().parse().map_err(|_| format!("'{s}' is not a 64-bit unsigned integer"))
}

fn parse_envelope(s: &str) -> Result<Envelope, String> {
    match s.trim() {
        "verbatim" => Ok(Envelope::Verbatim),
        "angular_spectrum" => Ok(Envelope::AngularSpectrum),
        other => Err(format!("unknown envelope '{other}' (verbatim, angular_spectrum)")),
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    s.split(',').map(|x| item(x.trim())).collect()
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    s.replace(' ', "").parse::<Complex64>().map_err(|_| format!("'{s}' is not a complex number"))
}

/// Parses configuration text; `path` is used in messages only.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw = tokenize(text, path)?;
    let mut r = Reader { raw, path, missing: Vec::new() };
    let len = parse_length;
    let num = |s: &str| parse_number(s);

    let dflt = SourceConfig::reference_qubit();
    let source = SourceConfig {
        dimension: r.required("source", "dimension", parse_usize, 0)?,
        pitch: r.required("source", "d", len, f64::NAN)?,
        pump_wavelength: r.required("source", "lambda_pump", len, f64::NAN)?,
        down_wavelength: r.required("source", "lambda_down", len, f64::NAN)?,
        pump_focal_length: r.required("source", "f_p", len, f64::NAN)?,
        imaging_focal_length: r.required("source", "f_i", len, f64::NAN)?,
        fourier_focal_length: r.required("source", "f_F", len, f64::NAN)?,
        incident_width: r.required("source", "w_p", len, f64::NAN)?,
        incident_curvature: r.take("source", "incident_curvature", len)?.unwrap_or(f64::INFINITY),
        crystal_length: r.take("source", "crystal_length", len)?.unwrap_or(dflt.crystal_length),
        crystal_offset: r.take("source", "crystal_offset", len)?.unwrap_or(0.0),
        aperture: r.take("source", "aperture", len)?,
        phase_matching_width: r.take("source", "sigma_pm", len)?.unwrap_or(0.0),
        resolution_width: r.take("source", "sigma_res", len)?.unwrap_or(0.0),
        envelope: r.take("source", "envelope", parse_envelope)?.unwrap_or_default(),
    };

    let amplitudes = r.take("pbg", "amplitudes", |s| parse_list(s, parse_complex))?;
    let elements = std::mem::take(&mut r.raw.elements);
    let pump = match (amplitudes, elements.is_empty()) {
        (Some(a), true) => PumpSpec::Amplitudes(a),
        (None, false) => PumpSpec::Chain(
            elements
                .into_iter()
                .map(|(line, s)| {
                    parse_element(&s).map_err(|message| ConfigError::Parse { path: path.to_path_buf(), line, message })
                })
                .collect::<Result<_, _>>()?,
        ),
        (Some(_), false) => {
            r.missing.push("pbg: give either element lines or amplitudes, not both".into());
            PumpSpec::Amplitudes(Vec::new())
        }
        (None, true) => {
            r.missing.push("pbg: element chain or amplitudes required".into());
            PumpSpec::Amplitudes(Vec::new())
        }
    };

    let d = ScanPlan::default();
    let scan = ScanPlan {
        image_step: r.take("scan", "image_step", len)?.unwrap_or(d.image_step),
        image_slit: r.take("scan", "image_slit", len)?.unwrap_or(d.image_slit),
        fourier_step: r.take("scan", "fourier_step", len)?.unwrap_or(d.fourier_step),
        fourier_slit: r.take("scan", "fourier_slit", len)?.unwrap_or(d.fourier_slit),
        fixed_slit: r.take("scan", "fixed_slit", len)?,
        fourier_fixed: r.take("scan", "fourier_fixed", |s| parse_list(s, parse_length))?.unwrap_or(d.fourier_fixed),
        fourier_half_range: r.take("scan", "fourier_half_range", len)?,
    };
    let noise = NoisePlan {
        mean_peak_counts: r.take("noise", "mean_peak_counts", num)?.unwrap_or(NoisePlan::default().mean_peak_counts),
        seed: r.take("noise", "seed", parse_u64)?.unwrap_or(0),
    };
    let analysis = AnalysisSettings {
        tau_diag: r.take("analysis", "tau_diag", num)?.unwrap_or(DEFAULT_TAU_DIAG),
        n_resamples: r.take("analysis", "n_resamples", parse_usize)?.unwrap_or(AnalysisSettings::default().n_resamples),
    };

    if let Some(((sec, key), (line, _))) = r.raw.values.iter().next() {
        return Err(ConfigError::Parse { path: path.to_path_buf(), line: *line, message: format!("unknown key '{key}' in [{sec}]") });
    }
    let cfg = ExperimentConfig { source, pump, scan, noise, analysis };
    let mut violations = r.missing;
    if violations.is_empty() {
        violations = cfg.violations();
    }
    if !violations.is_empty() {
        return Err(ConfigError::Invalid { path: path.to_path_buf(), violations });
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text, path)
}

struct Meters(f64);

impl fmt::Display for Meters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} m", self.0)
    }
}

/// Serializes a configuration; lengths in meters, angles in radians.
pub fn write_config(cfg: &ExperimentConfig) -> String {
    let s = &cfg.source;
    let mut out = String::new();
    let mut line = |l: String| {
        out.push_str(&l);
        out.push('\n');
    };
    line("[source]".into());
    line(format!("dimension = {}", s.dimension));
    line(format!("d = {}", Meters(s.pitch)));
    line(format!("lambda_pump = {}", Meters(s.pump_wavelength)));
    line(format!("lambda_down = {}", Meters(s.down_wavelength)));
    line(format!("f_p = {}", Meters(s.pump_focal_length)));
    line(format!("f_i = {}", Meters(s.imaging_focal_length)));
    line(format!("f_F = {}", Meters(s.fourier_focal_length)));
    line(format!("w_p = {}", Meters(s.incident_width)));
    line(format!("incident_curvature = {}", Meters(s.incident_curvature)));
    line(format!("crystal_length = {}", Meters(s.crystal_length)));
    line(format!("crystal_offset = {}", Meters(s.crystal_offset)));
    if let Some(a) = s.aperture {
        line(format!("aperture = {}", Meters(a)));
    }
    line(format!("sigma_pm = {}", Meters(s.phase_matching_width)));
    line(format!("sigma_res = {}", Meters(s.resolution_width)));
    line(format!(
        "envelope = {}",
        match s.envelope {
            Envelope::Verbatim => "verbatim",
            Envelope::AngularSpectrum => "angular_spectrum",
        }
    ));
    line(String::new());
    line("[pbg]".into());
    match &cfg.pump {
        PumpSpec::Chain(chain) => chain.iter().for_each(|e| line(format!("element = {}", format_element(e)))),
        PumpSpec::Amplitudes(a) => {
            let list: Vec<String> = a.iter().map(|c| format!("{}{:+}i", c.re, c.im)).collect();
            line(format!("amplitudes = {}", list.join(", ")));
        }
    }
    line(String::new());
    let p = &cfg.scan;
    line("[scan]".into());
    line(format!("image_step = {}", Meters(p.image_step)));
    line(format!("image_slit = {}", Meters(p.image_slit)));
    line(format!("fourier_step = {}", Meters(p.fourier_step)));
    line(format!("fourier_slit = {}", Meters(p.fourier_slit)));
    if let Some(f) = p.fixed_slit {
        line(format!("fixed_slit = {}", Meters(f)));
    }
    let fixed: Vec<String> = p.fourier_fixed.iter().map(|&x| Meters(x).to_string()).collect();
    line(format!("fourier_fixed = {}", fixed.join(", ")));
    if let Some(h) = p.fourier_half_range {
        line(format!("fourier_half_range = {}", Meters(h)));
    }
    line(String::new());
    line("[noise]".into());
    line(format!("mean_peak_counts = {}", cfg.noise.mean_peak_counts));
    line(format!("seed = {}", cfg.noise.seed));
    line(String::new());
    line("[analysis]".into());
    line(format!("tau_diag = {}", cfg.analysis.tau_diag));
    line(format!("n_resamples = {}", cfg.analysis.n_resamples));
    out
}
