//! Two-photon path state produced by a multi-beam pump.
//!
//! Each pump path ℓ seeds a two-photon Gaussian mode centred on ℓd whose
//! amplitude profile (in the crystal-plane position representation) is
//! exp[−(x − ℓd)² / 2w₀²]. Neighbouring modes overlap with
//! O_ℓm = exp[−d²(ℓ − m)² / 4w₀²], so the discrete basis |ℓ,ℓ⟩ is only
//! orthogonal when d ≫ w₀.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

/// Default tolerance on off-diagonal probability mass for the Schmidt form.
pub const DEFAULT_TAU_DIAG: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("invalid state configuration: {0}")]
    Config(String),
    #[error("state not path-correlated; Schmidt form invalid (off-diagonal mass {mass:.4} > {tau})")]
    NotPathCorrelated { mass: f64, tau: f64 },
    #[error("invalid joint coefficients: {0}")]
    Coefficients(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiphotonPathState {
    amplitudes: Vec<Complex64>,
    waist: f64,
    pitch: f64,
    overlap: DMatrix<f64>,
}

/// Closed-form Gram matrix of the path modes.
pub fn overlap_matrix(dimension: usize, waist: f64, pitch: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dimension, dimension, |l, m| {
        let sep = pitch * (l as f64 - m as f64);
        (-sep * sep / (4.0 * waist * waist)).exp()
    })
}

pub fn build_state(amplitudes: &[Complex64], waist: f64, pitch: f64) -> Result<BiphotonPathState, StateError> {
    if !(waist > 0.0 && waist.is_finite()) {
        return Err(StateError::Config(format!("waist must be positive (got {waist})")));
    }
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(StateError::Config(format!("pitch d must be positive (got {pitch})")));
    }
    if amplitudes.is_empty() {
        return Err(StateError::Config("no pump amplitudes".into()));
    }
    let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(StateError::Config(format!("amplitudes must satisfy Σ|A|² = 1 (got {norm})")));
    }
    Ok(BiphotonPathState {
        amplitudes: amplitudes.to_vec(),
        waist,
        pitch,
        overlap: overlap_matrix(amplitudes.len(), waist, pitch),
    })
}

impl BiphotonPathState {
    pub fn dimension(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn overlap(&self) -> &DMatrix<f64> {
        &self.overlap
    }

    /// Same state with `leading` empty paths prepended, i.e. every beam
    /// moved by `leading · d` along x.
    pub fn padded(&self, leading: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); leading];
        amplitudes.extend_from_slice(&self.amplitudes);
        Self {
            overlap: overlap_matrix(amplitudes.len(), self.waist, self.pitch),
            amplitudes,
            waist: self.waist,
            pitch: self.pitch,
        }
    }
}

/// |α_ij|²: probability of photon 1 in path i and photon 2 in path j.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJointCoeffs {
    probs: DMatrix<f64>,
}

impl DiscreteJointCoeffs {
    pub fn new(probs: DMatrix<f64>) -> Result<Self, StateError> {
        if !probs.is_square() || probs.nrows() == 0 {
            return Err(StateError::Coefficients("matrix must be square and non-empty".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(StateError::Coefficients("entries must be finite and non-negative".into()));
        }
        let total = probs.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(StateError::Coefficients(format!("entries must sum to 1 (got {total})")));
        }
        Ok(Self { probs })
    }

    /// Diagonal coefficients from a vector of path probabilities.
    pub fn diagonal(probs: &[f64]) -> Result<Self, StateError> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(probs)))
    }

    pub fn dimension(&self) -> usize {
        self.probs.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[(i, j)]
    }

    pub fn off_diagonal_mass(&self) -> f64 {
        self.probs.sum() - self.probs.diagonal().sum()
    }
}

/// Idealized coefficients: |α_ℓℓ|² = |A_ℓ|², zero off the diagonal.
pub fn ideal_joint_coeffs(state: &BiphotonPathState) -> DiscreteJointCoeffs {
    let d = state.dimension();
    let mut probs = DMatrix::zeros(d, d);
    for (l, a) in state.amplitudes.iter().enumerate() {
        probs[(l, l)] = a.norm_sqr();
    }
    DiscreteJointCoeffs { probs }
}

/// Schmidt coefficients κ (descending) of a path-correlated state.
///
/// Fails when more than `tau_diag` of the probability sits off the diagonal.
pub fn schmidt_coefficients(coeffs: &DiscreteJointCoeffs, tau_diag: f64) -> Result<Vec<f64>, StateError> {
    let mass = coeffs.off_diagonal_mass();
    if mass > tau_diag {
        return Err(StateError::NotPathCorrelated { mass, tau: tau_diag });
    }
    let diag = coeffs.probs.diagonal();
    let total = diag.sum();
    let mut kappa: Vec<f64> = diag.iter().map(|&p| (p / total).sqrt()).collect();
    kappa.sort_by(|a, b| b.total_cmp(a));
    Ok(kappa)
}

/// Purity Tr ρ² of the effective path-basis density matrix.
///
/// Each photon of the pair generated on path ℓ occupies mode φ_ℓ with Gram
/// matrix `overlap`. Writing φ_ℓ = Σ_k S_kℓ e_k in the Löwdin basis
/// (S = O^½) gives the two-qudit coefficients M = S·diag(a)·Sᵀ with
/// a_ℓ = √|α_ℓℓ|² (phases are not observable from populations). Coincidences
/// with i ≠ j carry no coherence with the path-correlated terms, so
///
///   ρ = P_diag |M⟩⟨M| P_diag + Σ_{i≠j} |M_ij|² |ij⟩⟨ij|.
///
/// Only the diagonal of `coeffs` is used. When O is rank-deficient the
/// Löwdin basis does not exist; the state is then written in the
/// eigenbasis of the span of the modes, so fully overlapped paths collapse
/// into a single pure mode.
pub fn state_purity(coeffs: &DiscreteJointCoeffs, overlap: &DMatrix<f64>) -> f64 {
    let d = coeffs.dimension();
    assert_eq!(overlap.nrows(), d, "overlap matrix dimension mismatch");
    let diag = coeffs.probs.diagonal();
    let total = diag.sum();
    let a = nalgebra::DVector::from_iterator(d, diag.iter().map(|&p| (p / total).sqrt()));

    let eig = SymmetricEigen::new(overlap.clone());
    let max_ev = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] > 1e-12 * max_ev).collect();

    // Rows of `basis` expand the modes: φ_ℓ = Σ_k basis[k, ℓ] e_k.
    let basis = if keep.len() == d {
        let sqrt_ev = eig.eigenvalues.map(|x| x.sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_ev) * eig.eigenvectors.transpose()
    } else {
        DMatrix::from_fn(keep.len(), d, |k, l| {
            let i = keep[k];
            eig.eigenvalues[i].sqrt() * eig.eigenvectors[(l, i)]
        })
    };
    let m = &basis * DMatrix::from_diagonal(&a) * basis.transpose();
    let norm2 = m.norm_squared();
    let r = m.nrows();
    let mut coherent = 0.0;
    let mut incoherent = 0.0;
    for i in 0..r {
        for j in 0..r {
            let p = m[(i, j)] * m[(i, j)] / norm2;
            if i == j {
                coherent += p;
            } else {
                incoherent += p * p;
            }
        }
    }
    coherent * coherent + incoherent
}
