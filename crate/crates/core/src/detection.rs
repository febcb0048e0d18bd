//! Coincidence observables at the image (2f-2f) and Fourier (f-f) planes.
//!
//! Densities are returned unnormalized: for a single path with |A|² = 1
//! the image-plane diagonal peaks at 1. The scan generator rescales rates so
//! that the brightest point of the whole pattern has the requested mean
//! count, which keeps relative rates between scans of one set intact.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::beam::{Envelope, SourceConfig};
use crate::quad::{integrate, integrate_piecewise};
use crate::state::BiphotonPathState;

/// Points in the default simulation grids.
pub const DEFAULT_GRID_POINTS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("empty scan grid")]
    EmptyGrid,
    #[error("scan positions must be strictly increasing (index {0})")]
    NotMonotone(usize),
    #[error("positions and counts differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("mean_peak_counts must be positive and finite (got {0})")]
    BadPeakCounts(f64),
    #[error("invalid detector model: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plane {
    Image,
    Fourier,
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plane::Image => "image",
            Plane::Fourier => "fourier",
        })
    }
}

impl FromStr for Plane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "image" => Ok(Plane::Image),
            "fourier" => Ok(Plane::Fourier),
            other => Err(format!("unknown plane '{other}' (expected image or fourier)")),
        }
    }
}

/// Σ A_ℓ exp[−(x − ℓd)² / w₀²], the image-plane two-photon amplitude on x₁ = x₂ = x.
pub fn image_plane_amplitude(x: f64, state: &BiphotonPathState) -> Complex64 {
    let inv_w2 = 1.0 / (state.waist() * state.waist());
    let d = state.pitch();
    state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(l, &a)| {
            let dx = x - l as f64 * d;
            a * (-dx * dx * inv_w2).exp()
        })
        .sum()
}

/// Coincidence density at x₁ = x₂ = x behind the 2f-2f lens, including the
/// lens phase e^{ikx²/f}. The phase has unit modulus and drops out.
pub fn image_plane_diagonal(x: f64, state: &BiphotonPathState, focal_length: f64, k: f64) -> f64 {
    let lens = Complex64::from_polar(1.0, k * x * x / focal_length);
    (lens * image_plane_amplitude(x, state)).norm_sqr()
}

fn diagonal_density(u: f64, state: &BiphotonPathState) -> f64 {
    image_plane_amplitude(u, state).norm_sqr()
}

/// Normalized Gaussian in the difference coordinate x₁ − x₂.
pub fn correlation_kernel(v: f64, sigma: f64) -> f64 {
    (-(v * v) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

fn gauss_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / SQRT_2)
}

/// Joint image-plane density |ψ((x₁+x₂)/2)|² · h(x₁ − x₂).
///
/// `sigma` is the combined correlation width. At `sigma = 0` the pairs are
/// delta-correlated: the result is 0 off the diagonal and +∞ on it; use
/// [`JointMap`] or [`box_pair_mass`] for integrated quantities.
pub fn image_plane_joint(x1: f64, x2: f64, state: &BiphotonPathState, sigma: f64) -> f64 {
    let envelope = diagonal_density(0.5 * (x1 + x2), state);
    if sigma > 0.0 {
        envelope * correlation_kernel(x1 - x2, sigma)
    } else if x1 == x2 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn panels_for(range: f64, waist: f64) -> usize {
    ((8.0 * range / waist).ceil() as usize).clamp(8, 4096)
}

/// Mass of the joint image-plane density inside the rectangle
/// `[c1 − a/2, c1 + a/2] × [c2 − b/2, c2 + b/2]` (a, b > 0).
///
/// Integrates over the pair midpoint u with the difference coordinate done
/// in closed form.
pub fn box_pair_mass(c1: f64, a: f64, c2: f64, b: f64, state: &BiphotonPathState, sigma: f64) -> f64 {
    let (lo1, hi1, lo2, hi2) = (c1 - a / 2.0, c1 + a / 2.0, c2 - b / 2.0, c2 + b / 2.0);
    if sigma == 0.0 {
        let (lo, hi) = (lo1.max(lo2), hi1.min(hi2));
        let panels = panels_for(hi - lo, state.waist());
        return integrate(|u| diagonal_density(u, state), lo, hi, panels);
    }
    let centre = 0.5 * (c1 + c2);
    let (u_lo, u_hi) = (centre - (a + b) / 4.0, centre + (a + b) / 4.0);
    let breaks = [0.5 * (lo1 + hi2), 0.5 * (hi1 + lo2)];
    let inner = |u: f64| {
        let v_lo = (2.0 * (lo1 - u)).max(2.0 * (u - hi2));
        let v_hi = (2.0 * (hi1 - u)).min(2.0 * (u - lo2));
        if v_hi <= v_lo {
            return 0.0;
        }
        diagonal_density(u, state) * (gauss_cdf(v_hi / sigma) - gauss_cdf(v_lo / sigma))
    };
    let panels = panels_for(u_hi - u_lo, state.waist().min(sigma.max(0.05 * state.waist())));
    integrate_piecewise(inner, u_lo, u_hi, &breaks, panels.div_ceil(2))
}

/// Off-diagonal to diagonal mass ratio over path windows ±d/2.
pub fn cross_peak_ratio(state: &BiphotonPathState, sigma: f64) -> f64 {
    let d = state.pitch();
    let n = state.dimension();
    let (mut diag, mut cross) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let m = box_pair_mass(i as f64 * d, d, j as f64 * d, d, state, sigma);
            if i == j {
                diag += m;
            } else {
                cross += m;
            }
        }
    }
    cross / diag
}

/// Sampled joint image-plane density, normalized to unit mass on its grid.
#[derive(Debug, Clone)]
pub struct JointMap {
    xs: Vec<f64>,
    step: f64,
    density: Vec<f64>,
}

impl JointMap {
    /// Evaluates on the square grid `xs × xs` (uniform spacing). With
    /// `sigma = 0` all mass is placed on the diagonal cells.
    pub fn compute(state: &BiphotonPathState, sigma: f64, xs: &[f64]) -> Result<Self, DetectionError> {
        let step = uniform_step(xs)?;
        let n = xs.len();
        let mut density = vec![0.0; n * n];
        for i in 0..n {
            if sigma > 0.0 {
                for j in 0..n {
                    density[i * n + j] = image_plane_joint(xs[i], xs[j], state, sigma);
                }
            } else {
                density[i * n + i] = diagonal_density(xs[i], state) / step;
            }
        }
        let mass: f64 = density.iter().sum::<f64>() * step * step;
        density.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { xs: xs.to_vec(), step, density })
    }

    pub fn positions(&self) -> &[f64] {
        &self.xs
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.density[i * self.xs.len() + j]
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.step * self.step
    }

    /// Mass with |x₁ − x₂| > `band`.
    pub fn mass_off_band(&self, band: f64) -> f64 {
        let n = self.xs.len();
        let mut m = 0.0;
        for i in 0..n {
            for j in 0..n {
                if (self.xs[i] - self.xs[j]).abs() > band {
                    m += self.density[i * n + j];
                }
            }
        }
        m * self.step * self.step
    }
}

/// Conditional interference pattern behind the f-f lens; depends on
/// x_s + x_i only.
pub fn fourier_plane_cip(
    x_i: f64,
    x_s: f64,
    state: &BiphotonPathState,
    focal_length: f64,
    k: f64,
    envelope: Envelope,
) -> f64 {
    cip_of_sum(x_i + x_s, state, focal_length, k, envelope)
}

/// The conditional pattern as a function of s = x_s + x_i.
pub fn cip_of_sum(s: f64, state: &BiphotonPathState, focal_length: f64, k: f64, envelope: Envelope) -> f64 {
    let w0 = state.waist();
    let env = match envelope {
        Envelope::Verbatim => (-k * w0 * w0 * s * s / focal_length).exp(),
        Envelope::AngularSpectrum => (-(k * w0 * s / focal_length).powi(2) / 4.0).exp(),
    };
    let prefactor = (2.0 * k / focal_length).powi(2);
    let phase_step = 2.0 * k * state.pitch() * s / focal_length;
    let sum: Complex64 = state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(l, &a)| a * Complex64::from_polar(1.0, phase_step * l as f64))
        .sum();
    (sum * prefactor * env).norm_sqr()
}

/// Fringe period of the conditional pattern in s (or in one detector
/// coordinate with the other fixed): λ_down f_F / (2d).
pub fn fringe_period(down_wavelength: f64, focal_length: f64, pitch: f64) -> f64 {
    down_wavelength * focal_length / (2.0 * pitch)
}

/// Intensity standard deviation (in s) of the angular-spectrum envelope, f/(k w₀).
pub fn envelope_width(focal_length: f64, k: f64, waist: f64) -> f64 {
    focal_length / (k * waist)
}

/// Boxcar average of `f` over a slit of width `width` centred on x.
pub fn slit_convolve<F: Fn(f64) -> f64>(f: F, width: f64) -> impl Fn(f64) -> f64 {
    move |x| {
        if width <= 0.0 {
            f(x)
        } else {
            integrate(&f, x - width / 2.0, x + width / 2.0, 8) / width
        }
    }
}

/// Convolution of `f` with two boxcars of widths `a` and `b` (a trapezoid
/// kernel), as seen by a pattern that depends on the sum of two slit-averaged
/// detector coordinates.
pub fn double_slit_convolve<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, s: f64) -> f64 {
    let (lo, hi) = (a.min(b).max(0.0), a.max(b).max(0.0));
    if hi == 0.0 {
        return f(s);
    }
    if lo == 0.0 {
        return integrate(|t| f(s + t), -hi / 2.0, hi / 2.0, 8) / hi;
    }
    let half = (a + b) / 2.0;
    let flat = (hi - lo) / 2.0;
    let kernel = |t: f64| (half - t.abs()).min(lo).max(0.0) / (a * b);
    integrate_piecewise(|t| f(s + t) * kernel(t), -half, half, &[-flat, flat], 8)
}

/// Coincidence rate model for one detection plane: detector 1 at a fixed
/// position, detector 2 scanned, each behind its own slit.
#[derive(Debug, Clone)]
pub struct DetectionModel {
    plane: Plane,
    state: BiphotonPathState,
    focal_length: f64,
    k: f64,
    envelope: Envelope,
    correlation_width: f64,
    fixed_slit: f64,
    scan_slit: f64,
    peak_rate: f64,
}

impl DetectionModel {
    pub fn new(
        plane: Plane,
        state: BiphotonPathState,
        source: &SourceConfig,
        fixed_slit: f64,
        scan_slit: f64,
    ) -> Result<Self, DetectionError> {
        if !(fixed_slit >= 0.0 && scan_slit >= 0.0) {
            return Err(DetectionError::Model("slit widths must be non-negative".into()));
        }
        let correlation_width = source.correlation_width();
        if plane == Plane::Image && correlation_width == 0.0 && (fixed_slit == 0.0 || scan_slit == 0.0) {
            return Err(DetectionError::Model(
                "delta-correlated pairs need a nonzero slit on both detectors".into(),
            ));
        }
        let focal_length = match plane {
            Plane::Image => source.imaging_focal_length,
            Plane::Fourier => source.fourier_focal_length,
        };
        let mut model = Self {
            plane,
            state,
            focal_length,
            k: source.down_wavenumber(),
            envelope: source.envelope,
            correlation_width,
            fixed_slit,
            scan_slit,
            peak_rate: 1.0,
        };
        model.peak_rate = model.find_peak_rate();
        Ok(model)
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn state(&self) -> &BiphotonPathState {
        &self.state
    }

    pub fn scan_slit(&self) -> f64 {
        self.scan_slit
    }

    pub fn fixed_slit(&self) -> f64 {
        self.fixed_slit
    }

    /// Slit-averaged coincidence density at detector positions `(x_fixed, x_scan)`.
    pub fn rate(&self, x_fixed: f64, x_scan: f64) -> f64 {
        match self.plane {
            Plane::Image => self.image_rate(x_fixed, x_scan),
            Plane::Fourier => {
                let f = |s: f64| cip_of_sum(s, &self.state, self.focal_length, self.k, self.envelope);
                double_slit_convolve(f, self.fixed_slit, self.scan_slit, x_fixed + x_scan)
            }
        }
    }

    fn image_rate(&self, x1: f64, x2: f64) -> f64 {
        let (a, b, sigma) = (self.fixed_slit, self.scan_slit, self.correlation_width);
        let joint = |u1: f64, u2: f64| image_plane_joint(u1, u2, &self.state, sigma);
        match (a > 0.0, b > 0.0) {
            (true, true) => box_pair_mass(x1, a, x2, b, &self.state, sigma) / (a * b),
            (false, true) if sigma == 0.0 => {
                if (x1 - x2).abs() <= b / 2.0 { diagonal_density(x1, &self.state) / b } else { 0.0 }
            }
            (true, false) if sigma == 0.0 => {
                if (x1 - x2).abs() <= a / 2.0 { diagonal_density(x2, &self.state) / a } else { 0.0 }
            }
            (false, true) => slit_convolve(|u| joint(x1, u), b)(x2),
            (true, false) => slit_convolve(|u| joint(u, x2), a)(x1),
            (false, false) => joint(x1, x2),
        }
    }

    /// Largest rate over the default grid of the plane (diagonal for the image plane).
    pub fn peak_rate(&self) -> f64 {
        self.peak_rate
    }

    fn find_peak_rate(&self) -> f64 {
        match self.plane {
            Plane::Image => default_image_grid(&self.state)
                .into_iter()
                .map(|x| self.rate(x, x))
                .fold(0.0, f64::max),
            Plane::Fourier => default_fourier_grid(&self.state, self.focal_length, self.k)
                .into_iter()
                .map(|s| self.rate(0.0, s))
                .fold(0.0, f64::max),
        }
    }

    /// RMS width of the image-plane coincidence peak seen by the scanned
    /// detector when the fixed one sits on the brightest path.
    pub fn conditional_width(&self) -> f64 {
        let d = self.state.pitch();
        let brightest = self
            .state
            .amplitudes()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .map_or(0, |(l, _)| l);
        let c = brightest as f64 * d;
        let n = 801;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x = c - d / 2.0 + d * i as f64 / (n - 1) as f64;
            let r = self.rate(c, x);
            m0 += r;
            m1 += r * x;
            m2 += r * x * x;
        }
        if m0 <= 0.0 {
            return self.state.waist();
        }
        let mean = m1 / m0;
        (m2 / m0 - mean * mean).max(0.0).sqrt()
    }

    /// Mean counts at each grid point for a pattern scaled to `mean_peak_counts`.
    pub fn expected_counts(&self, fixed_position: f64, grid: &[f64], mean_peak_counts: f64) -> Vec<f64> {
        let scale = mean_peak_counts / self.peak_rate;
        grid.iter().map(|&x| (self.rate(fixed_position, x) * scale).max(0.0)).collect()
    }
}

/// Acquisition metadata carried by a scan file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanMeta {
    /// Slit width in front of the scanned detector, meters.
    pub slit_width: f64,
    pub seed: Option<u64>,
    pub integration: Option<String>,
}

/// One sweep of detector 2 with detector 1 held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub plane: Plane,
    pub fixed_position: f64,
    pub positions: Vec<f64>,
    pub counts: Vec<u64>,
    pub meta: ScanMeta,
}

impl ScanRecord {
    pub fn new(
        plane: Plane,
        fixed_position: f64,
        positions: Vec<f64>,
        counts: Vec<u64>,
        meta: ScanMeta,
    ) -> Result<Self, DetectionError> {
        if positions.len() != counts.len() {
            return Err(DetectionError::LengthMismatch(positions.len(), counts.len()));
        }
        check_monotone(&positions)?;
        Ok(Self { plane, fixed_position, positions, counts, meta })
    }

    /// Median spacing of the scan positions.
    pub fn step(&self) -> f64 {
        let mut d: Vec<f64> = self.positions.windows(2).map(|w| w[1] - w[0]).collect();
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub(crate) fn check_monotone(xs: &[f64]) -> Result<(), DetectionError> {
    if xs.is_empty() {
        return Err(DetectionError::EmptyGrid);
    }
    match xs.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(DetectionError::NotMonotone(i + 1)),
        None => Ok(()),
    }
}

fn uniform_step(xs: &[f64]) -> Result<f64, DetectionError> {
    check_monotone(xs)?;
    if xs.len() < 2 {
        return Err(DetectionError::EmptyGrid);
    }
    Ok((xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64)
}

/// Samples Poisson counts around the model rate. Deterministic for a fixed seed.
pub fn synth_scan(
    model: &DetectionModel,
    fixed_position: f64,
    grid: &[f64],
    mean_peak_counts: f64,
    seed: u64,
) -> Result<ScanRecord, DetectionError> {
    check_monotone(grid)?;
    if !(mean_peak_counts > 0.0 && mean_peak_counts.is_finite()) {
        return Err(DetectionError::BadPeakCounts(mean_peak_counts));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = model
        .expected_counts(fixed_position, grid, mean_peak_counts)
        .into_iter()
        .map(|mean| match Poisson::new(mean) {
            Ok(p) => p.sample(&mut rng) as u64,
            Err(_) => 0,
        })
        .collect();
    ScanRecord::new(
        model.plane(),
        fixed_position,
        grid.to_vec(),
        counts,
        ScanMeta { slit_width: model.scan_slit(), seed: Some(seed), integration: Some("synthetic".into()) },
    )
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Points `k·step` lying in `[lo, hi]`, so every multiple of the step that
/// falls in range (path centres included) is sampled exactly.
pub fn stepped_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// 2048 points over ±(D·d + 6w₀).
pub fn default_image_grid(state: &BiphotonPathState) -> Vec<f64> {
    let half = state.dimension() as f64 * state.pitch() + 6.0 * state.waist();
    linspace(-half, half, DEFAULT_GRID_POINTS)
}

/// 2048 points over ±4 angular-spectrum envelope widths.
pub fn default_fourier_grid(state: &BiphotonPathState, focal_length: f64, k: f64) -> Vec<f64> {
    let half = 4.0 * envelope_width(focal_length, k, state.waist());
    linspace(-half, half, DEFAULT_GRID_POINTS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::build_state;

    fn real(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    fn balanced(n: usize, w0: f64, d: f64) -> BiphotonPathState {
        build_state(&real(&vec![1.0 / (n as f64).sqrt(); n]), w0, d).unwrap()
    }

    const K: f64 = 2.0 * PI / 710e-9;

    #[test]
    fn single_path_profile() {
        let w0 = 5e-5;
        let s = build_state(&real(&[1.0]), w0, 1e-3).unwrap();
        for i in -20..=20 {
            let x = i as f64 * 7e-6;
            let want = (-2.0 * x * x / (w0 * w0)).exp();
            assert!((image_plane_diagonal(x, &s, 0.25, K) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn two_paths_at_midpoint() {
        let (w0, d) = (3e-4, 1e-3);
        let s = balanced(2, w0, d);
        let peak = 0.5;
        let want = 4.0 * (-d * d / (2.0 * w0 * w0)).exp() * peak;
        assert!((image_plane_diagonal(d / 2.0, &s, 0.25, K) - want).abs() < 1e-15);
    }

    #[test]
    fn lens_phase_drops_out() {
        let s = build_state(&real(&[0.6, 0.0]).iter().zip([0.0, 0.8]).map(|(a, b)| a + Complex64::new(0.0, b)).collect::<Vec<_>>(), 2e-4, 5e-4).unwrap();
        for i in -200..=600 {
            let x = i as f64 * 3.3e-6;
            let with = image_plane_diagonal(x, &s, 0.25, K);
            let without = image_plane_amplitude(x, &s).norm_sqr();
            assert!((with - without).abs() <= 1e-12 * without.max(1e-300));
        }
    }

    #[test]
    fn image_pattern_translates_rigidly() {
        let s = build_state(&real(&[0.8, 0.6]), 2e-4, 5e-4).unwrap();
        let shifted = s.padded(2);
        let delta = 2.0 * s.pitch();
        for i in -50..=150 {
            let x = i as f64 * 1e-5;
            let a = image_plane_diagonal(x, &s, 0.25, K);
            let b = image_plane_diagonal(x + delta, &shifted, 0.25, K);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cip_single_path_has_no_fringes() {
        let s = build_state(&real(&[1.0]), 5.64e-5, 1e-3).unwrap();
        let f = |x| cip_of_sum(x, &s, 0.5, K, Envelope::AngularSpectrum);
        let mut prev = f(0.0);
        for i in 1..400 {
            let v = f(i as f64 * 1e-5);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn cip_depends_on_sum_only() {
        let s = balanced(3, 5.64e-5, 1e-3);
        for env in [Envelope::Verbatim, Envelope::AngularSpectrum] {
            let peak = fourier_plane_cip(0.0, 0.0, &s, 0.5, K, env);
            for i in 0..40 {
                let (xi, xs) = (i as f64 * 1.3e-5, 2e-4 - i as f64 * 2.1e-5);
                let base = fourier_plane_cip(xi, xs, &s, 0.5, K, env);
                for j in -10..10 {
                    let delta = j as f64 * 3.7e-5;
                    let moved = fourier_plane_cip(xi + delta, xs - delta, &s, 0.5, K, env);
                    assert!((moved - base).abs() < 1e-10 * peak);
                }
            }
        }
    }

    #[test]
    fn fringe_period_value() {
        let p = fringe_period(710e-9, 0.5, 1e-3);
        assert!((p - 1.775e-4).abs() < 1e-18);
    }

    /// Three equal sources: |Σ e^{iℓφ}|² has secondary maxima 1/9 of the principal ones.
    #[test]
    fn three_source_secondary_maxima() {
        let brute = |phi: f64| (0..3).map(|l| Complex64::from_polar(1.0, l as f64 * phi)).sum::<Complex64>().norm_sqr();
        let n = 100_000;
        let secondary = (0..n)
            .map(|i| 2.0 * PI * (0.25 + 0.5 * i as f64 / n as f64))
            .map(brute)
            .fold(0.0, f64::max);
        assert!((brute(0.0) - 9.0).abs() < 1e-12);
        assert!((secondary - 1.0).abs() < 1e-9);

        let s = balanced(3, 5.64e-5, 1e-3);
        let period = fringe_period(710e-9, 0.5, 1e-3);
        let f = |x| cip_of_sum(x, &s, 0.5, K, Envelope::Verbatim);
        let ratio = f(period / 2.0) / f(0.0);
        assert!((ratio - 1.0 / 9.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn slit_identity_and_constant() {
        let f = |x: f64| (x * 3.0).sin() + 2.0;
        let same = slit_convolve(f, 0.0);
        assert_eq!(same(0.3), f(0.3));
        let flat = slit_convolve(|_| 4.2, 0.37);
        assert!((flat(1.1) - 4.2).abs() < 1e-14);
    }

    #[test]
    fn slit_equal_to_period_kills_fringes() {
        let period = 1.775e-4;
        let f = |x: f64| 1.0 + (2.0 * PI * x / period).cos();
        let g = slit_convolve(f, period);
        for i in 0..50 {
            assert!((g(i as f64 * 1.3e-5) - 1.0).abs() < 1e-12);
        }
        // and a generic width gives the sinc factor
        let w = 5e-5;
        let g = slit_convolve(f, w);
        let x = PI * w / period;
        assert!((g(0.0) - 1.0 - x.sin() / x).abs() < 1e-12);
    }

    fn brute_boxcar(f: &dyn Fn(f64) -> f64, w: f64, x: f64) -> f64 {
        let n = 4000;
        (0..n).map(|i| f(x - w / 2.0 + w * (i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
    }

    #[test]
    fn slit_matches_brute_force_and_keeps_mass() {
        let s = balanced(2, 5.64e-5, 1e-3);
        let f = |x: f64| cip_of_sum(x, &s, 0.5, K, Envelope::AngularSpectrum) * 1e-30;
        let g = slit_convolve(f, 5e-5);
        let xs = linspace(-6e-3, 6e-3, 6001);
        let h = xs[1] - xs[0];
        let (mut mf, mut mg, mut mb) = (0.0, 0.0, 0.0);
        for &x in &xs {
            mf += f(x) * h;
            mg += g(x) * h;
            mb += brute_boxcar(&f, 5e-5, x) * h;
        }
        assert!((mg - mf).abs() / mf < 1e-9, "{mg} vs {mf}");
        assert!((mg - mb).abs() / mf < 1e-9, "{mg} vs {mb}");
    }

    #[test]
    fn double_slit_matches_nested_boxcars() {
        let s = balanced(3, 5.64e-5, 1e-3);
        let f = |x: f64| cip_of_sum(x, &s, 0.5, K, Envelope::AngularSpectrum);
        for (a, b) in [(5e-5, 5e-5), (1e-4, 5e-5), (0.0, 5e-5), (5e-5, 0.0), (0.0, 0.0)] {
            let nested = slit_convolve(slit_convolve(f, b), a);
            for i in 0..20 {
                let x = i as f64 * 2.3e-5;
                let want = nested(x);
                let got = double_slit_convolve(f, a, b, x);
                assert!((got - want).abs() < 1e-9 * f(0.0), "a={a} b={b}: {got} vs {want}");
            }
        }
    }

    fn brute_cross_ratio(state: &BiphotonPathState, sigma: f64) -> f64 {
        let d = state.pitch();
        let n = 600;
        let h = d / n as f64;
        let window = |c: f64| (0..n).map(move |i| c - d / 2.0 + (i as f64 + 0.5) * h);
        let (mut diag, mut cross) = (0.0, 0.0);
        for i in 0..state.dimension() {
            for j in 0..state.dimension() {
                let mut m = 0.0;
                for x1 in window(i as f64 * d) {
                    for x2 in window(j as f64 * d) {
                        m += image_plane_joint(x1, x2, state, sigma);
                    }
                }
                if i == j { diag += m } else { cross += m }
            }
        }
        cross / diag
    }

    #[test]
    fn cross_peaks_vanish_for_separated_paths() {
        let s = balanced(2, 5.64e-5, 1e-3);
        assert!(cross_peak_ratio(&s, 3e-5) < 1e-6);
        assert_eq!(cross_peak_ratio(&s, 0.0), 0.0);
    }

    #[test]
    fn cross_peak_ratio_matches_2d_quadrature() {
        let w0 = 1e-4;
        let s = balanced(2, w0, 2.0 * w0);
        for sigma in [2e-5, 5e-5, 1e-4] {
            let fast = cross_peak_ratio(&s, sigma);
            let brute = brute_cross_ratio(&s, sigma);
            assert!((fast - brute).abs() < 1e-4 * brute.max(1e-3), "sigma {sigma}: {fast} vs {brute}");
        }
        // delta correlation: both photons always fall in the same window
        assert_eq!(cross_peak_ratio(&s, 0.0), 0.0);
    }

    #[test]
    fn joint_map_normalized_and_delta_limit() {
        let s = balanced(2, 5.64e-5, 1e-3);
        let xs = linspace(-3e-4, 1.3e-3, 161);
        let delta = JointMap::compute(&s, 0.0, &xs).unwrap();
        assert!((delta.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(delta.mass_off_band(0.0), 0.0);
        let wide = JointMap::compute(&s, 2e-5, &xs).unwrap();
        assert!((wide.total_mass() - 1.0).abs() < 1e-6);
        assert!(wide.mass_off_band(0.0) > 0.0);
    }

    #[test]
    fn image_rate_with_slits_matches_brute_force() {
        let mut cfg = SourceConfig::reference_qubit();
        cfg.phase_matching_width = 3e-5;
        let s = balanced(2, cfg.crystal_width(), cfg.pitch);
        let model = DetectionModel::new(Plane::Image, s.clone(), &cfg, 1e-4, 5e-5).unwrap();
        let brute = |x1: f64, x2: f64| {
            let n = 300;
            let mut m = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let u1 = x1 - 5e-5 + 1e-4 * (i as f64 + 0.5) / n as f64;
                    let u2 = x2 - 2.5e-5 + 5e-5 * (j as f64 + 0.5) / n as f64;
                    m += image_plane_joint(u1, u2, &s, 3e-5);
                }
            }
            m / (n * n) as f64
        };
        for (x1, x2) in [(0.0, 0.0), (0.0, 4e-5), (1e-3, 9.5e-4), (2e-5, -6e-5)] {
            let got = model.rate(x1, x2);
            let want = brute(x1, x2);
            assert!((got - want).abs() < 1e-4 * want.max(1e-6 * model.peak_rate()), "{x1},{x2}: {got} vs {want}");
        }
    }

    #[test]
    fn delta_correlated_image_rate() {
        let cfg = SourceConfig::reference_qubit();
        let s = balanced(2, cfg.crystal_width(), cfg.pitch);
        let model = DetectionModel::new(Plane::Image, s.clone(), &cfg, 1e-4, 1e-4).unwrap();
        // triangle overlap of two 100 µm slits: zero beyond 100 µm separation
        assert_eq!(model.rate(0.0, 1.01e-4), 0.0);
        assert!(model.rate(0.0, 5e-5) > 0.0);
        assert!(DetectionModel::new(Plane::Image, s, &cfg, 0.0, 1e-4).is_err());
    }

    #[test]
    fn synth_scan_is_deterministic() {
        let cfg = SourceConfig::reference_qubit();
        let s = balanced(2, cfg.crystal_width(), cfg.pitch);
        let model = DetectionModel::new(Plane::Image, s, &cfg, 1e-4, 1e-4).unwrap();
        let grid = stepped_grid(-4e-4, 1.4e-3, 2e-4);
        let a = synth_scan(&model, 0.0, &grid, 1e4, 7).unwrap();
        let b = synth_scan(&model, 0.0, &grid, 1e4, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_scan(&model, 0.0, &grid, 1e4, 8).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn synth_scan_vanishing_rate() {
        let cfg = SourceConfig::reference_qubit();
        let s = balanced(2, cfg.crystal_width(), cfg.pitch);
        let model = DetectionModel::new(Plane::Image, s, &cfg, 1e-4, 1e-4).unwrap();
        let grid = stepped_grid(-4e-4, 1.4e-3, 2e-4);
        let r = synth_scan(&model, 0.0, &grid, 1e-12, 1).unwrap();
        assert!(r.counts.iter().all(|&c| c == 0));
        assert!(matches!(synth_scan(&model, 0.0, &[], 1.0, 1), Err(DetectionError::EmptyGrid)));
        assert!(matches!(synth_scan(&model, 0.0, &grid, 0.0, 1), Err(DetectionError::BadPeakCounts(_))));
    }

    #[test]
    fn synth_scan_follows_density_at_high_counts() {
        let cfg = SourceConfig::reference_qubit();
        let s = balanced(2, cfg.crystal_width(), cfg.pitch);
        let model = DetectionModel::new(Plane::Fourier, s, &cfg, 5e-5, 5e-5).unwrap();
        let grid = linspace(-1e-3, 1e-3, 801);
        let expected = model.expected_counts(1e-4, &grid, 1e6);
        let scan = synth_scan(&model, 1e-4, &grid, 1e6, 99).unwrap();
        let inside = expected
            .iter()
            .zip(&scan.counts)
            .filter(|(&m, &c)| (c as f64 - m).abs() <= 3.0 * m.sqrt().max(1.0))
            .count();
        assert!(inside as f64 >= 0.99 * grid.len() as f64, "{inside}/{}", grid.len());
    }

    #[test]
    fn scan_totals_scale_with_peak_counts() {
        let cfg = SourceConfig::reference_qubit();
        let s = balanced(2, cfg.crystal_width(), cfg.pitch);
        let model = DetectionModel::new(Plane::Fourier, s, &cfg, 5e-5, 5e-5).unwrap();
        let grid = linspace(-1e-3, 1e-3, 401);
        let lo = synth_scan(&model, 0.0, &grid, 1e3, 3).unwrap().total_counts() as f64;
        let hi = synth_scan(&model, 0.0, &grid, 1e4, 3).unwrap().total_counts() as f64;
        let mean_lo: f64 = model.expected_counts(0.0, &grid, 1e3).iter().sum();
        assert!((lo - mean_lo).abs() < 3.0 * mean_lo.sqrt());
        assert!((hi - 10.0 * mean_lo).abs() < 3.0 * (10.0 * mean_lo).sqrt());
    }

    #[test]
    fn stepped_grid_hits_path_centres() {
        let g = stepped_grid(-5e-4, 1.5e-3, 2e-4);
        assert!(g.iter().any(|&x| x == 0.0));
        assert!(g.iter().any(|&x| (x - 1e-3).abs() < 1e-15));
        assert!(g.first().unwrap() >= &-5e-4 && g.last().unwrap() <= &1.5e-3);
    }

    #[test]
    fn scan_record_validation() {
        let meta = ScanMeta::default();
        assert!(matches!(
            ScanRecord::new(Plane::Image, 0.0, vec![0.0, 1.0], vec![1], meta.clone()),
            Err(DetectionError::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            ScanRecord::new(Plane::Image, 0.0, vec![0.0, 0.0], vec![1, 1], meta),
            Err(DetectionError::NotMonotone(1))
        ));
    }
}
