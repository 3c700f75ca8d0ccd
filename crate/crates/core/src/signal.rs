//! Measurement matrices and noisy observation synthesis.
//!
//! The stacked observation over `K` slots is
//! `y = √P(η₁A₁h₁ + η₁ε₂A₂h₂ + η₂ε₁A₃h₃) + n`, with `A₁ = 1_K ⊗ I_M`,
//! `A₂ = (Ω̄₂ᵀ ⊗ I_M)(I_N ⋄ H₄)` and `A₃ = (Ω̄₁ᵀ ⊗ I_M)(I_N ⋄ H₄)`.
//! Slot `k` occupies rows `k·M .. (k+1)·M`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{ChannelVector, RisBsChannel};
use crate::error::{LocError, Result};
use crate::geometry::LinkGeometry;
use crate::star_ris::{PhaseSchedule, PowerConfig};

/// RNG stream carrying receiver noise.
pub const NOISE_STREAM: u64 = 0;
/// RNG stream carrying RIS→BS channel perturbations.
pub const H4_STREAM: u64 = 1;

/// Independent per-trial RNG for a named stream.
pub fn trial_rng(seed: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrices {
    /// KM×M, `K` stacked identities.
    pub a1: DMatrix<Complex64>,
    /// KM×N, reflection path.
    pub a2: DMatrix<Complex64>,
    /// KM×N, refraction path.
    pub a3: DMatrix<Complex64>,
}

impl MeasurementMatrices {
    pub fn m(&self) -> usize {
        self.a1.ncols()
    }

    pub fn n(&self) -> usize {
        self.a2.ncols()
    }

    pub fn k(&self) -> usize {
        self.a1.nrows() / self.a1.ncols().max(1)
    }

    /// Matrix multiplying channel `index` (1-based).
    pub fn matrix(&self, index: usize) -> &DMatrix<Complex64> {
        match index {
            1 => &self.a1,
            2 => &self.a2,
            3 => &self.a3,
            _ => panic!("channel index {index} out of range 1..=3"),
        }
    }
}

pub fn build_measurement_matrices(h4: &RisBsChannel, s: &PhaseSchedule) -> Result<MeasurementMatrices> {
    let (m, n) = h4.0.shape();
    let k = s.k();
    if s.n() != n {
        return Err(LocError::DimensionMismatch(format!(
            "H4 has {n} RIS columns but the schedule drives {} elements",
            s.n()
        )));
    }
    if m == 0 || n == 0 || k == 0 {
        return Err(LocError::DimensionMismatch("empty measurement model".into()));
    }
    let mut a1 = DMatrix::zeros(k * m, m);
    let mut a2 = DMatrix::zeros(k * m, n);
    let mut a3 = DMatrix::zeros(k * m, n);
    for slot in 0..k {
        let rows = slot * m;
        for i in 0..m {
            a1[(rows + i, i)] = Complex64::new(1.0, 0.0);
        }
        for col in 0..n {
            let w2 = s.omega2_bar[(col, slot)];
            let w1 = s.omega1_bar[(col, slot)];
            for i in 0..m {
                let h = h4.0[(i, col)];
                a2[(rows + i, col)] = h * w2;
                a3[(rows + i, col)] = h * w1;
            }
        }
    }
    Ok(MeasurementMatrices { a1, a2, a3 })
}

fn check_len(name: &str, v: &ChannelVector, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(LocError::DimensionMismatch(format!("{name} has length {} but {expected} is required", v.len())));
    }
    Ok(())
}

/// Noiseless mean without the `√P` factor:
/// `μ = η₁A₁h₁ + η₁ε₂A₂h₂ + η₂ε₁A₃h₃`.
pub fn noiseless_mean(
    mm: &MeasurementMatrices,
    h1: &ChannelVector,
    h2: &ChannelVector,
    h3: &ChannelVector,
    pc: &PowerConfig,
) -> Result<DVector<Complex64>> {
    check_len("h1", h1, mm.m())?;
    check_len("h2", h2, mm.n())?;
    check_len("h3", h3, mm.n())?;
    let [w1, w2, w3] = pc.term_weights();
    let mut mu = &mm.a1 * &h1.0 * Complex64::new(w1, 0.0);
    mu += &mm.a2 * &h2.0 * Complex64::new(w2, 0.0);
    mu += &mm.a3 * &h3.0 * Complex64::new(w3, 0.0);
    Ok(mu)
}

#[derive(Debug, Clone)]
pub struct ObservationBundle {
    pub y: DVector<Complex64>,
    pub matrices: Arc<MeasurementMatrices>,
    pub power: PowerConfig,
    /// Total complex noise variance per element.
    pub sigma2: f64,
}

impl ObservationBundle {
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power.p / self.sigma2).log10()
    }
}

/// Draw `len` samples of `CN(0, σ²)`.
pub fn complex_noise(rng: &mut impl Rng, len: usize, sigma2: f64) -> DVector<Complex64> {
    let scale = (sigma2 / 2.0).sqrt();
    DVector::from_fn(len, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(scale * re, scale * im)
    })
}

pub fn synthesize_observation(
    mm: Arc<MeasurementMatrices>,
    h1: &ChannelVector,
    h2: &ChannelVector,
    h3: &ChannelVector,
    pc: &PowerConfig,
    sigma2: f64,
    seed: u64,
) -> Result<ObservationBundle> {
    let mut rng = trial_rng(seed, 0, NOISE_STREAM);
    synthesize_with_rng(mm, h1, h2, h3, pc, sigma2, &mut rng)
}

pub fn synthesize_with_rng(
    mm: Arc<MeasurementMatrices>,
    h1: &ChannelVector,
    h2: &ChannelVector,
    h3: &ChannelVector,
    pc: &PowerConfig,
    sigma2: f64,
    rng: &mut impl Rng,
) -> Result<ObservationBundle> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(LocError::InvalidNoise(sigma2));
    }
    let mu = noiseless_mean(&mm, h1, h2, h3, pc)?;
    let y = mu * Complex64::new(pc.p.sqrt(), 0.0) + complex_noise(rng, mm.a1.nrows(), sigma2);
    Ok(ObservationBundle { y, matrices: mm, power: *pc, sigma2 })
}

/// Half-widths of the uniform errors on `(d₄, θ₄, φ₄)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct H4Perturbation {
    pub d_hat: f64,
    pub phi_hat: f64,
}

impl H4Perturbation {
    pub fn is_identity(&self) -> bool {
        self.d_hat == 0.0 && self.phi_hat == 0.0
    }
}

/// `(d₄ + Δd, θ₄ + Δθ, φ₄ + Δφ)` with `Δd ~ U[-d̂, d̂]` and
/// `Δθ, Δφ ~ U[-φ̂, φ̂]`, drawn independently.
pub fn perturb_h4(link4: &LinkGeometry, p: &H4Perturbation, seed: u64) -> Result<LinkGeometry> {
    let mut rng = trial_rng(seed, 0, H4_STREAM);
    perturb_h4_with_rng(link4, p, &mut rng)
}

pub fn perturb_h4_with_rng(link4: &LinkGeometry, p: &H4Perturbation, rng: &mut impl Rng) -> Result<LinkGeometry> {
    if !(p.d_hat >= 0.0 && p.phi_hat >= 0.0) {
        return Err(LocError::InvalidLink(format!("negative perturbation widths {p:?}")));
    }
    if p.is_identity() {
        return Ok(*link4);
    }
    let mut uniform = |w: f64| if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
    let dd = uniform(p.d_hat);
    let dt = uniform(p.phi_hat);
    let dp = uniform(p.phi_hat);
    let d = link4.d + dd;
    if d <= 0.0 {
        return Err(LocError::InvalidLink(format!("perturbed RIS distance {d} is not positive")));
    }
    LinkGeometry::new(link4.theta + dt, link4.phi + dp, d)
}
