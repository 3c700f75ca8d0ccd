//! STAR-RIS phase schedules and power bookkeeping.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LocError, Result};

/// Refraction (`Ω̄₁`) and reflection (`Ω̄₂`) phase profiles over `K` slots.
/// Column `k` holds the diagonal of the control matrix used in slot `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    /// N×K refraction profile.
    pub omega1_bar: DMatrix<Complex64>,
    /// N×K reflection profile.
    pub omega2_bar: DMatrix<Complex64>,
}

impl PhaseSchedule {
    pub fn new(omega1_bar: DMatrix<Complex64>, omega2_bar: DMatrix<Complex64>) -> Result<Self> {
        if omega1_bar.shape() != omega2_bar.shape() {
            return Err(LocError::DimensionMismatch(format!(
                "refraction {:?} vs reflection {:?}",
                omega1_bar.shape(),
                omega2_bar.shape()
            )));
        }
        Ok(Self { omega1_bar, omega2_bar })
    }

    pub fn n(&self) -> usize {
        self.omega1_bar.nrows()
    }

    pub fn k(&self) -> usize {
        self.omega1_bar.ncols()
    }

    /// Largest deviation of any entry from unit modulus.
    pub fn modulus_error(&self) -> f64 {
        self.omega1_bar
            .iter()
            .chain(self.omega2_bar.iter())
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Dft,
    Random,
}

impl ScheduleKind {
    pub fn label(self) -> &'static str {
        match self {
            ScheduleKind::Dft => "dft",
            ScheduleKind::Random => "random",
        }
    }
}

/// Localization-optimal schedule for `K ≥ 2N + 1`.
///
/// `W` is the (symmetric) K-point DFT matrix with unnormalized entries
/// `e^{-j2πmn/K}`. The refraction profile takes rows `1..=N` and the
/// reflection profile rows `N+1..=2N` (0-based), skipping the all-ones row
/// 0. Every selected row is then orthogonal to the all-ones vector and to
/// every row of the other profile.
pub fn dft_design(n: usize, k: usize) -> Result<PhaseSchedule> {
    let required = 2 * n + 1;
    if k < required {
        return Err(LocError::InsufficientOverhead { k, required });
    }
    let entry = |row: usize, col: usize| {
        // Reduce the exponent modulo K before scaling to keep the phase exact.
        let idx = (row * col) % k;
        Complex64::from_polar(1.0, -2.0 * PI * idx as f64 / k as f64)
    };
    let omega1 = DMatrix::from_fn(n, k, |r, c| entry(r + 1, c));
    let omega2 = DMatrix::from_fn(n, k, |r, c| entry(r + n + 1, c));
    PhaseSchedule::new(omega1, omega2)
}

/// I.i.d. phases uniform on `[0, 2π)`, reproducible from `seed`.
pub fn random_design(n: usize, k: usize, seed: u64) -> PhaseSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_: usize, _: usize| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    let omega1 = DMatrix::from_fn(n, k, &mut draw);
    let omega2 = DMatrix::from_fn(n, k, &mut draw);
    PhaseSchedule { omega1_bar: omega1, omega2_bar: omega2 }
}

/// Returns `(‖Ω̄₁*·1‖₂, ‖Ω̄₁*·Ω̄₂ᵀ‖_F)`.
pub fn verify_orthogonality(s: &PhaseSchedule) -> (f64, f64) {
    let conj1 = s.omega1_bar.conjugate();
    let ones = DVector::from_element(s.k(), Complex64::new(1.0, 0.0));
    let residual_ones = (&conj1 * ones).norm();
    let residual_cross = (&conj1 * s.omega2_bar.transpose()).norm();
    (residual_ones, residual_cross)
}

/// Power split at the STAR-RIS (`ε`) and between the two MSs (`η`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    /// Refraction share.
    pub eps1: f64,
    /// Reflection share.
    pub eps2: f64,
    /// Outdoor MS share.
    pub eta1: f64,
    /// Indoor MS share.
    pub eta2: f64,
    /// Total transmit power per slot.
    pub p: f64,
}

impl PowerConfig {
    /// Complete `ε₂` and `η₂` from the unit-norm constraints.
    pub fn new(eps1: f64, eta1: f64, p: f64) -> Result<Self> {
        for (name, v) in [("eps1", eps1), ("eta1", eta1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(LocError::InvalidPower(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(p.is_finite() && p > 0.0) {
            return Err(LocError::InvalidPower(format!("power {p} must be positive")));
        }
        Ok(Self {
            eps1,
            eps2: (1.0 - eps1 * eps1).max(0.0).sqrt(),
            eta1,
            eta2: (1.0 - eta1 * eta1).max(0.0).sqrt(),
            p,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let split = self.eps1 * self.eps1 + self.eps2 * self.eps2;
        let alloc = self.eta1 * self.eta1 + self.eta2 * self.eta2;
        if (split - 1.0).abs() > 1e-12 || (alloc - 1.0).abs() > 1e-12 {
            return Err(LocError::InvalidPower(format!(
                "eps1²+eps2² = {split}, eta1²+eta2² = {alloc}; both must be 1"
            )));
        }
        if !(self.p > 0.0) {
            return Err(LocError::InvalidPower(format!("power {} must be positive", self.p)));
        }
        Ok(())
    }

    pub fn with_power(self, p: f64) -> Self {
        Self { p, ..self }
    }

    /// Amplitude coefficients `(η₁, η₁ε₂, η₂ε₁)` of the three terms of the
    /// noiseless mean.
    pub fn term_weights(&self) -> [f64; 3] {
        [self.eta1, self.eta1 * self.eps2, self.eta2 * self.eps1]
    }

    /// `γᵢ = √P` times the term weights.
    pub fn gammas(&self) -> [f64; 3] {
        let sp = self.p.sqrt();
        self.term_weights().map(|w| sp * w)
    }
}
