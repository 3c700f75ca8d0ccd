//! Angle extraction from a denoised UPA channel.
//!
//! The channel is reshaped into an `nz×nx` matrix whose rank-one factors are
//! the two ULA steering vectors. Each factor is passed to root-MUSIC on its
//! forward-backward averaged covariance, and the two spatial frequencies are
//! mapped back to azimuth and elevation through the direction cosines.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::channel::ArrayGeometry;
use crate::error::{LocError, Result};

/// Direction cosines may exceed the unit interval by this much before the
/// strict extractor rejects them.
pub const COSINE_TOLERANCE: f64 = 1e-6;

/// Ratio `σ₂/σ₁` of the reshaped channel above which the rank-one model is
/// flagged as mismatched.
pub const RANK_ONE_WARNING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    /// Azimuth folded into `[0, π]`; the array cannot see the sign of `θ`.
    pub theta_folded: f64,
    pub phi: f64,
    pub omega_x: f64,
    pub omega_z: f64,
    /// `σ₂/σ₁` of the reshaped channel.
    pub rank_ratio: f64,
    /// Direction cosines had to be clamped into the unit interval by more
    /// than [`COSINE_TOLERANCE`].
    pub clamped: bool,
}

impl AngleEstimate {
    pub fn rank_warning(&self) -> bool {
        self.rank_ratio > RANK_ONE_WARNING
    }
}

/// Rank-one factors of the reshaped channel: `(α_x, α_z, σ₂/σ₁)` up to
/// scale and phase. The dominant left singular vector comes from the
/// eigendecomposition of `M·Mᴴ`, and `α_x ∝ Mᵀ·conj(u)`.
fn rank_one_factors(h: &DVector<Complex64>, nx: usize, nz: usize) -> (DVector<Complex64>, DVector<Complex64>, f64) {
    let m = DMatrix::from_fn(nz, nx, |iz, ix| h[ix * nz + iz]);
    let eig = SymmetricEigen::new(&m * m.adjoint());
    let mut order: Vec<usize> = (0..nz).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]].max(0.0);
    let ratio = match order.get(1) {
        Some(&i) if l1 > 0.0 => (eig.eigenvalues[i].max(0.0) / l1).sqrt(),
        _ => 0.0,
    };
    let az = eig.eigenvectors.column(order[0]).into_owned();
    let ax = m.transpose() * az.conjugate();
    (ax, az, ratio)
}

/// Coefficients `c_l = Σ_{q-p=l} C[p,q]`, `l = -(n-1)..=(n-1)`, stored at
/// `l + n - 1`.
fn lag_sums(c: &DMatrix<Complex64>) -> Vec<Complex64> {
    let n = c.nrows();
    let mut out = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
    for p in 0..n {
        for q in 0..n {
            out[q + n - 1 - p] += c[(p, q)];
        }
    }
    out
}

/// Roots of `Σ_k a_k z^k` (ascending coefficients) via the companion matrix.
fn polynomial_roots(ascending: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut coeffs = ascending.to_vec();
    while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.norm() == 0.0) {
        coeffs.pop();
    }
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[deg];
    let mut companion = DMatrix::<Complex64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let schur = companion
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| LocError::Numerical("companion Schur decomposition did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..deg).map(|i| t[(i, i)]).collect())
}

/// MUSIC null spectrum `f(ω) = Σ c_l e^{jωl}` and its first two derivatives.
fn spectrum(coeffs: &[Complex64], omega: f64) -> (f64, f64, f64) {
    let n = coeffs.len().div_ceil(2);
    let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for (idx, c) in coeffs.iter().enumerate() {
        let l = idx as f64 - (n as f64 - 1.0);
        let term = c * Complex64::from_polar(1.0, omega * l);
        f += term.re;
        d1 += (term * Complex64::new(0.0, l)).re;
        d2 -= l * l * term.re;
    }
    (f, d1, d2)
}

/// Spatial frequency of a noisy ULA steering vector by root-MUSIC.
pub fn root_music(v: &DVector<Complex64>) -> Result<f64> {
    let n = v.len();
    if n <= 1 {
        return Ok(0.0);
    }
    if v.norm() == 0.0 {
        return Err(LocError::ZeroChannel);
    }
    let r = v * v.adjoint();
    let exchanged = DMatrix::from_fn(n, n, |p, q| r[(n - 1 - p, n - 1 - q)].conj());
    let fb = (r + exchanged) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(fb);
    let top = eig.eigenvalues.imax();
    let signal = eig.eigenvectors.column(top).into_owned();
    // Projector onto the noise subspace: I - s·sᴴ.
    let noise = DMatrix::<Complex64>::identity(n, n) - &signal * signal.adjoint();
    let coeffs = lag_sums(&noise);

    // z^{n-1}·Σ_l c_l z^l has ascending coefficients c_{-(n-1)}, .., c_{n-1}.
    let roots = polynomial_roots(&coeffs)?;
    // The signal root and its conjugate reciprocal sit on or near the unit
    // circle. Polish the closest candidates and keep the deepest null.
    let mut candidates: Vec<Complex64> = roots.into_iter().filter(|z| z.is_finite() && z.norm() > 0.0).collect();
    candidates.sort_by(|a, b| {
        let da = (a.norm() - 1.0).abs();
        let db = (b.norm() - 1.0).abs();
        da.total_cmp(&db).then(b.norm().total_cmp(&a.norm()))
    });
    let mut best: Option<(f64, f64)> = None;
    for z in candidates.iter().take(4) {
        let omega = polish(&coeffs, z.arg());
        let value = spectrum(&coeffs, omega).0;
        if best.is_none_or(|(_, v)| value < v - 1e-15) {
            best = Some((omega, value));
        }
    }
    let omega = match best {
        Some((w, _)) => w,
        None => return Err(LocError::Numerical("root-MUSIC polynomial has no usable root".into())),
    };
    Ok(wrap_angle(omega))
}

/// Newton iterations toward the nearest minimum of the null spectrum.
fn polish(coeffs: &[Complex64], mut omega: f64) -> f64 {
    for _ in 0..30 {
        let (_, d1, d2) = spectrum(coeffs, omega);
        if d2 <= 0.0 {
            break;
        }
        let step = (d1 / d2).clamp(-0.5, 0.5);
        omega -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    omega
}

fn wrap_angle(w: f64) -> f64 {
    let mut w = (w + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        w = PI;
    }
    w
}

/// Map a direction cosine back into `[-1, 1]`, reporting whether the clamp
/// exceeded the tolerance.
fn clamp_cosine(u: f64, axis: &'static str, strict: bool) -> Result<(f64, bool)> {
    if u.abs() <= 1.0 {
        return Ok((u, false));
    }
    let over = u.abs() - 1.0;
    if over <= COSINE_TOLERANCE {
        return Ok((u.signum(), false));
    }
    if strict {
        return Err(LocError::InvalidFrequency { axis, value: u });
    }
    Ok((u.signum(), true))
}

fn extract(h: &DVector<Complex64>, geom: &ArrayGeometry, wavelength: f64, strict: bool) -> Result<AngleEstimate> {
    geom.validate()?;
    if h.len() != geom.len() {
        return Err(LocError::DimensionMismatch(format!(
            "channel length {} vs {}x{} array",
            h.len(),
            geom.nx,
            geom.nz
        )));
    }
    if h.norm() == 0.0 || !h.iter().all(|c| c.is_finite()) {
        return Err(LocError::ZeroChannel);
    }
    let (ax, az, rank_ratio) = rank_one_factors(h, geom.nx, geom.nz);
    let omega_x = root_music(&ax)?;
    let omega_z = root_music(&az)?;

    let uz = omega_z / (2.0 * PI * geom.spacing_z / wavelength);
    let (uz, clamp_z) = clamp_cosine(uz, "z", strict)?;
    let phi = uz.asin();
    let cos_phi = phi.cos();
    let ux = omega_x / (2.0 * PI * geom.spacing_x / wavelength);
    let ratio = if cos_phi > 0.0 { ux / cos_phi } else { 0.0 };
    let (ratio, clamp_x) = clamp_cosine(ratio, "x", strict)?;
    Ok(AngleEstimate {
        theta_folded: ratio.acos(),
        phi,
        omega_x,
        omega_z,
        rank_ratio,
        clamped: clamp_x || clamp_z,
    })
}

/// Azimuth (folded into `[0, π]`) and elevation of a single-path channel.
/// Direction cosines outside the unit interval by more than
/// [`COSINE_TOLERANCE`] are an error.
pub fn extract_angles(h: &DVector<Complex64>, geom: &ArrayGeometry, wavelength: f64) -> Result<AngleEstimate> {
    extract(h, geom, wavelength, true)
}

/// Like [`extract_angles`] but clamps out-of-range direction cosines and
/// reports it through [`AngleEstimate::clamped`].
pub fn extract_angles_clamped(h: &DVector<Complex64>, geom: &ArrayGeometry, wavelength: f64) -> Result<AngleEstimate> {
    extract(h, geom, wavelength, false)
}
