//! Gaussian-beam geometry: the single-lens transform that focuses the pump
//! onto the crystal, and the multi-beam pump field it produces.
//!
//! Sign convention: a curvature radius `R < 0` describes a wavefront
//! converging toward a downstream waist. `f64::INFINITY` is a plane wave.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Beam geometry at one longitudinal plane. Lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamParams {
    pub wavelength: f64,
    pub width: f64,
    pub curvature_radius: f64,
    pub gouy: f64,
}

impl BeamParams {
    /// Beam at its waist: flat wavefront, zero Gouy phase.
    pub fn at_waist(wavelength: f64, waist: f64) -> Self {
        Self { wavelength, width: waist, curvature_radius: f64::INFINITY, gouy: 0.0 }
    }

    /// Beam a distance `z` downstream of a waist `waist` (negative `z` is upstream).
    pub fn from_waist(wavelength: f64, waist: f64, z: f64) -> Self {
        let zr = rayleigh_range(wavelength, waist);
        let ratio = z / zr;
        let curvature_radius = if z == 0.0 { f64::INFINITY } else { z * (1.0 + (zr / z).powi(2)) };
        Self {
            wavelength,
            width: waist * (1.0 + ratio * ratio).sqrt(),
            curvature_radius,
            gouy: ratio.atan(),
        }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn is_valid(&self) -> bool {
        self.wavelength > 0.0 && self.width > 0.0 && self.width.is_finite()
    }
}

pub fn rayleigh_range(wavelength: f64, waist: f64) -> f64 {
    PI * waist * waist / wavelength
}

/// Curvature after a thin lens: 1/R' = 1/R − 1/f.
///
/// `R = ∞` gives `R' = −f`; `R = f` gives `R' = +∞`.
pub fn lens_curvature(r: f64, f: f64) -> f64 {
    1.0 / (1.0 / r - 1.0 / f)
}

/// Waist produced by a lens that leaves curvature `r_prime` on a beam of
/// width `w_p`: w'₀ = w_p / √(1 + (π w_p² / λR')²).
pub fn waist_after_lens(w_p: f64, wavelength: f64, r_prime: f64) -> f64 {
    let g = PI * w_p * w_p / (wavelength * r_prime);
    w_p / (1.0 + g * g).sqrt()
}

/// Pump field at `(x, z)` from D parallel Gaussian beams with pitch `pitch`,
/// sharing width, curvature and Gouy phase.
pub fn pump_field(x: f64, z: f64, amplitudes: &[Complex64], params: &BeamParams, pitch: f64) -> Complex64 {
    let k = params.wavenumber();
    let inv_w2 = 1.0 / (params.width * params.width);
    let inv_r = 1.0 / params.curvature_radius;
    amplitudes
        .iter()
        .enumerate()
        .map(|(l, &a)| {
            let dx = x - l as f64 * pitch;
            let r2 = dx * dx;
            let phase = -(k * z + k * r2 * inv_r / 2.0 - params.gouy);
            a * (-r2 * inv_w2).exp() * Complex64::from_polar(1.0, phase)
        })
        .sum()
}

/// How the Fourier-plane envelope is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Envelope {
    /// exp[−k w₀² s² / f], the printed form of the conditional pattern.
    #[default]
    Verbatim,
    /// exp[−k² w₀² s² / (4 f²)], the pump angular spectrum at q = k s / f.
    AngularSpectrum,
}

/// Source and detection geometry. Lengths in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    /// Number of pump paths D.
    pub dimension: usize,
    /// Path pitch d.
    pub pitch: f64,
    pub pump_wavelength: f64,
    pub down_wavelength: f64,
    /// f_p, focusing lens before the PBG.
    pub pump_focal_length: f64,
    /// f_i, 2f-2f imaging lens.
    pub imaging_focal_length: f64,
    /// f_F, f-f Fourier lens.
    pub fourier_focal_length: f64,
    /// w_p, pump width incident on the focusing lens.
    pub incident_width: f64,
    /// Wavefront curvature incident on the focusing lens.
    pub incident_curvature: f64,
    /// Informational only.
    pub crystal_length: f64,
    /// Crystal plane distance from the focused waist (0 = at the waist).
    pub crystal_offset: f64,
    /// Transverse crystal aperture, if declared.
    pub aperture: Option<f64>,
    /// σ_pm, signal/idler transverse correlation width.
    pub phase_matching_width: f64,
    /// σ_res, extra correlation blur added in quadrature to σ_pm.
    pub resolution_width: f64,
    pub envelope: Envelope,
}

impl SourceConfig {
    /// Geometry of the two-qubit setup with a 1 mm incident pump.
    pub fn reference_qubit() -> Self {
        Self {
            dimension: 2,
            pitch: 1e-3,
            pump_wavelength: 355e-9,
            down_wavelength: 710e-9,
            pump_focal_length: 0.5,
            imaging_focal_length: 0.25,
            fourier_focal_length: 0.5,
            incident_width: 1e-3,
            incident_curvature: f64::INFINITY,
            crystal_length: 5e-3,
            crystal_offset: 0.0,
            aperture: None,
            phase_matching_width: 0.0,
            resolution_width: 0.0,
            envelope: Envelope::Verbatim,
        }
    }

    /// Every violated invariant, as human-readable messages naming the key.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut positive = |name: &str, x: f64| {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive and finite (got {x})"));
            }
        };
        positive("d", self.pitch);
        positive("lambda_pump", self.pump_wavelength);
        positive("lambda_down", self.down_wavelength);
        positive("f_p", self.pump_focal_length);
        positive("f_i", self.imaging_focal_length);
        positive("f_F", self.fourier_focal_length);
        positive("w_p", self.incident_width);
        positive("crystal_length", self.crystal_length);
        if self.dimension == 0 {
            v.push("dimension must be at least 1".into());
        }
        if self.incident_curvature.is_nan() || self.incident_curvature == 0.0 {
            v.push(format!("incident_curvature must be nonzero (got {})", self.incident_curvature));
        }
        if !self.crystal_offset.is_finite() {
            v.push("crystal_offset must be finite".into());
        }
        for (name, x) in [("phase_matching_width", self.phase_matching_width), ("resolution_width", self.resolution_width)] {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(format!("{name} must be non-negative (got {x})"));
            }
        }
        if let Some(ap) = self.aperture {
            if !(ap > 0.0) {
                v.push(format!("aperture must be positive (got {ap})"));
            } else if self.dimension as f64 * self.pitch > ap {
                v.push(format!(
                    "aperture: {} paths at pitch {} m do not fit in {} m",
                    self.dimension, self.pitch, ap
                ));
            }
        }
        v
    }

    /// Curvature leaving the focusing lens.
    pub fn focused_curvature(&self) -> f64 {
        lens_curvature(self.incident_curvature, self.pump_focal_length)
    }

    /// w'₀, the focused waist.
    pub fn focused_waist(&self) -> f64 {
        waist_after_lens(self.incident_width, self.pump_wavelength, self.focused_curvature())
    }

    /// Pump geometry at the crystal plane.
    pub fn crystal_beam(&self) -> BeamParams {
        BeamParams::from_waist(self.pump_wavelength, self.focused_waist(), self.crystal_offset)
    }

    /// Pump width at the crystal; equals the focused waist at zero offset.
    pub fn crystal_width(&self) -> f64 {
        self.crystal_beam().width
    }

    pub fn down_wavenumber(&self) -> f64 {
        2.0 * PI / self.down_wavelength
    }

    /// Combined signal/idler correlation width √(σ_pm² + σ_res²).
    pub fn correlation_width(&self) -> f64 {
        self.phase_matching_width.hypot(self.resolution_width)
    }
}
