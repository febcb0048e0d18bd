//! Jones-calculus model of the parallel beam generator (PBG).
//!
//! A pump field is tracked as complex amplitudes over `(path, polarization)`.
//! Wave plates act on the polarization of each path; a beam displacer keeps
//! the horizontal (ordinary) component in place and moves the vertical
//! (extraordinary) component by one path slot. Only the horizontal part of
//! the final field drives down-conversion in the crystal.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Matrix2;
use num_complex::Complex64;
use thiserror::Error;

/// Slots whose intensity falls below this are trimmed from the ends of a field.
const NEGLIGIBLE_INTENSITY: f64 = 1e-28;

pub type JonesMatrix = Matrix2<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JonesError {
    #[error("beam displacer acts on paths and has no 2x2 Jones matrix")]
    NotAWaveplate,
    #[error("no SPDC-capable pump: the horizontal component vanishes on every path")]
    NoSpdcPump,
    #[error("element selects path {path} but the field has only {dimension} paths")]
    PathOutOfRange { path: usize, dimension: usize },
    #[error("displaced beam lands on path {0}, which already carries vertical light from another beam")]
    PathCollision(isize),
    #[error("field is not normalized (total intensity {0})")]
    NotNormalized(f64),
    #[error("field has no paths")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    fn index(self) -> usize {
        match self {
            Polarization::H => 0,
            Polarization::V => 1,
        }
    }
}

/// Direction in which a beam displacer moves the extraordinary ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Displacement {
    /// Toward higher path index.
    Up,
    /// Toward lower path index (mirrored displacer).
    Down,
}

impl Displacement {
    pub fn offset(self) -> isize {
        match self {
            Displacement::Up => 1,
            Displacement::Down => -1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Displacement::Up),
            -1 => Some(Displacement::Down),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementKind {
    /// Half-wave plate, fast axis at `theta` radians from horizontal.
    Hwp { theta: f64 },
    /// Quarter-wave plate, fast axis at `theta` radians from horizontal.
    Qwp { theta: f64 },
    /// Calcite beam displacer.
    Bd { displacement: Displacement },
}

/// One element of a PBG chain.
///
/// `paths` restricts the element to a subset of the current path labels;
/// `None` means the element intercepts every beam.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalElement {
    pub kind: ElementKind,
    pub paths: Option<Vec<usize>>,
}

impl OpticalElement {
    pub fn hwp(theta: f64) -> Self {
        Self { kind: ElementKind::Hwp { theta }, paths: None }
    }

    pub fn qwp(theta: f64) -> Self {
        Self { kind: ElementKind::Qwp { theta }, paths: None }
    }

    pub fn bd(displacement: Displacement) -> Self {
        Self { kind: ElementKind::Bd { displacement }, paths: None }
    }

    pub fn on_paths(mut self, paths: Vec<usize>) -> Self {
        self.paths = Some(paths);
        self
    }

    fn selects(&self, path: usize) -> bool {
        self.paths.as_ref().is_none_or(|p| p.contains(&path))
    }
}

impl fmt::Display for OpticalElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ElementKind::Hwp { theta } => write!(f, "HWP({:.4} deg)", theta.to_degrees())?,
            ElementKind::Qwp { theta } => write!(f, "QWP({:.4} deg)", theta.to_degrees())?,
            ElementKind::Bd { displacement } => write!(f, "BD({:+})", displacement.offset())?,
        }
        if let Some(paths) = &self.paths {
            write!(f, " on {paths:?}")?;
        }
        Ok(())
    }
}

/// 2x2 Jones matrix acting on `(H, V)` amplitudes.
pub fn jones_matrix(kind: &ElementKind) -> Result<JonesMatrix, JonesError> {
    match *kind {
        ElementKind::Hwp { theta } => {
            let (s, c) = (2.0 * theta).sin_cos();
            let (s, c) = (Complex64::from(s), Complex64::from(c));
            Ok(Matrix2::new(c, s, s, -c))
        }
        ElementKind::Qwp { theta } => {
            let (s, c) = theta.sin_cos();
            let rot = Matrix2::new(c, -s, s, c).map(Complex64::from);
            let retarder = Matrix2::new(
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 1.0),
            );
            Ok(rot * retarder * rot.transpose())
        }
        ElementKind::Bd { .. } => Err(JonesError::NotAWaveplate),
    }
}

/// HWP angle that sends pure-H input to a state with horizontal intensity
/// fraction `h_fraction`.
pub fn hwp_angle_for_h_fraction(h_fraction: f64) -> f64 {
    0.5 * h_fraction.clamp(0.0, 1.0).sqrt().acos()
}

/// Pump field over `(path, polarization)`; slot `p` holds `[H, V]` for path `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolPathField {
    slots: Vec<[Complex64; 2]>,
}

impl PolPathField {
    /// A single horizontally polarized beam.
    pub fn pure_h() -> Self {
        Self { slots: vec![[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]] }
    }

    /// Builds a field from explicit `[H, V]` amplitudes per path.
    pub fn from_slots(slots: Vec<[Complex64; 2]>) -> Result<Self, JonesError> {
        if slots.is_empty() {
            return Err(JonesError::Empty);
        }
        let field = Self { slots };
        let total = field.intensity();
        if (total - 1.0).abs() > 1e-9 {
            return Err(JonesError::NotNormalized(total));
        }
        Ok(field)
    }

    pub fn dimension(&self) -> usize {
        self.slots.len()
    }

    pub fn amp(&self, path: usize, pol: Polarization) -> Complex64 {
        self.slots
            .get(path)
            .map_or(Complex64::new(0.0, 0.0), |s| s[pol.index()])
    }

    pub fn slots(&self) -> &[[Complex64; 2]] {
        &self.slots
    }

    /// Total intensity, Σ|amp|².
    pub fn intensity(&self) -> f64 {
        self.slots.iter().map(|s| s[0].norm_sqr() + s[1].norm_sqr()).sum()
    }

    /// Horizontal intensity per path.
    pub fn h_intensities(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s[0].norm_sqr()).collect()
    }

    fn from_sparse(map: BTreeMap<isize, [Complex64; 2]>) -> Self {
        let live = |s: &[Complex64; 2]| s[0].norm_sqr() + s[1].norm_sqr() > NEGLIGIBLE_INTENSITY;
        let first = map.iter().find(|(_, s)| live(s)).map(|(&k, _)| k);
        let last = map.iter().rev().find(|(_, s)| live(s)).map(|(&k, _)| k);
        let zero = [Complex64::new(0.0, 0.0); 2];
        let slots = match (first, last) {
            (Some(lo), Some(hi)) => (lo..=hi).map(|k| map.get(&k).copied().unwrap_or(zero)).collect(),
            _ => vec![zero],
        };
        Self { slots }
    }
}

/// Propagates `field` through one element. Path labels are re-compacted so
/// the lowest occupied path is 0.
pub fn apply_element(field: &PolPathField, elem: &OpticalElement) -> Result<PolPathField, JonesError> {
    if let Some(paths) = &elem.paths {
        if let Some(&bad) = paths.iter().find(|&&p| p >= field.dimension()) {
            return Err(JonesError::PathOutOfRange { path: bad, dimension: field.dimension() });
        }
    }
    match elem.kind {
        ElementKind::Hwp { .. } | ElementKind::Qwp { .. } => {
            let m = jones_matrix(&elem.kind)?;
            let slots = field
                .slots
                .iter()
                .enumerate()
                .map(|(p, s)| {
                    if elem.selects(p) {
                        [m[(0, 0)] * s[0] + m[(0, 1)] * s[1], m[(1, 0)] * s[0] + m[(1, 1)] * s[1]]
                    } else {
                        *s
                    }
                })
                .collect();
            Ok(PolPathField { slots })
        }
        ElementKind::Bd { displacement } => {
            let shift = displacement.offset();
            let zero = Complex64::new(0.0, 0.0);
            let mut out: BTreeMap<isize, [Complex64; 2]> = BTreeMap::new();
            let mut v_owner: BTreeMap<isize, usize> = BTreeMap::new();
            for (p, s) in field.slots.iter().enumerate() {
                let here = p as isize;
                let v_to = if elem.selects(p) { here + shift } else { here };
                out.entry(here).or_insert([zero; 2])[0] += s[0];
                if s[1].norm_sqr() > NEGLIGIBLE_INTENSITY {
                    if let Some(&other) = v_owner.get(&v_to) {
                        if other != p {
                            return Err(JonesError::PathCollision(v_to));
                        }
                    }
                    v_owner.insert(v_to, p);
                }
                out.entry(v_to).or_insert([zero; 2])[1] += s[1];
            }
            Ok(PolPathField::from_sparse(out))
        }
    }
}

/// Applies a chain of elements in order.
pub fn apply_chain(field: &PolPathField, chain: &[OpticalElement]) -> Result<PolPathField, JonesError> {
    chain.iter().try_fold(field.clone(), |f, e| apply_element(&f, e))
}

/// Horizontal amplitudes that seed down-conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct PumpAmplitudes {
    /// A_ℓ, renormalized to Σ|A_ℓ|² = 1.
    pub amplitudes: Vec<Complex64>,
    /// Fraction of pump power in the horizontal component before renormalization.
    pub h_fraction: f64,
}

pub fn pump_amplitudes(field: &PolPathField) -> Result<PumpAmplitudes, JonesError> {
    let h_fraction: f64 = field.h_intensities().iter().sum();
    if h_fraction <= 1e-24 {
        return Err(JonesError::NoSpdcPump);
    }
    let norm = h_fraction.sqrt();
    let amplitudes = field.slots.iter().map(|s| s[0] / norm).collect();
    Ok(PumpAmplitudes { amplitudes, h_fraction })
}

/// HWP(π/8) → BD → HWP(π/8): two balanced pump beams from horizontal input.
pub fn qubit_chain() -> Vec<OpticalElement> {
    let eighth = std::f64::consts::FRAC_PI_8;
    vec![OpticalElement::hwp(eighth), OpticalElement::bd(Displacement::Up), OpticalElement::hwp(eighth)]
}

/// HWP(I) → BD(I) → HWP(II) at 22.5° → BD(II) → QWP at 45°.
///
/// HWP(I) sets a 2/3 : 1/3 H:V split. BD(II) is mirrored and intercepts only
/// the brighter beam (path 0 after BD(I)); the dimmer beam passes beside it.
pub fn qutrit_chain() -> Vec<OpticalElement> {
    vec![
        OpticalElement::hwp(hwp_angle_for_h_fraction(2.0 / 3.0)),
        OpticalElement::bd(Displacement::Up),
        OpticalElement::hwp(std::f64::consts::FRAC_PI_8),
        OpticalElement::bd(Displacement::Down).on_paths(vec![0]),
        OpticalElement::qwp(std::f64::consts::FRAC_PI_4),
    ]
}
