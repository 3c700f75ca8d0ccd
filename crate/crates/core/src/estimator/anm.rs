//! Regularized atomic-norm denoising of a sparsity-one UPA channel.
//!
//! Solves
//!
//! ```text
//! min  μ·[ tr(Toep(u)) / (2T) + t/2 ] + ½‖y − γ·A·h‖²
//! s.t. Z = [[Toep(u), h], [hᴴ, t]] ⪰ 0
//! ```
//!
//! where `Toep(u)` is the two-level (block) Toeplitz matrix generated by the
//! lag array `u`, with ADMM on the splitting `Θ(u, h, t) = Z`: a closed-form
//! update of `(u, h, t)` (lag averaging, a cached Cholesky solve, a scalar
//! shift), a PSD-cone projection of `Z` by eigendecomposition, and a scaled
//! dual ascent step. The penalty is rebalanced from the residual ratio.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::channel::ArrayGeometry;
use crate::error::{LocError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnmConfig {
    /// Constant in `μ = mu_scale · σ · √(T·ln T)`.
    pub mu_scale: f64,
    /// Relative primal/dual residual tolerance.
    pub solver_tol: f64,
    pub max_iters: usize,
    /// Initial penalty, relative to the mean eigenvalue of `γ²AᴴA`.
    pub step: f64,
}

impl Default for AnmConfig {
    fn default() -> Self {
        Self { mu_scale: 1.0, solver_tol: 1e-6, max_iters: 5000, step: 1.0 }
    }
}

impl AnmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_scale > 0.0 && self.solver_tol > 0.0 && self.max_iters > 0 && self.step > 0.0) {
            return Err(LocError::Config(format!("ANM settings must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Regularization weight for a length-`t` channel and noise std `sigma`.
    pub fn mu(&self, sigma: f64, t: usize) -> f64 {
        let t = t as f64;
        self.mu_scale * sigma * (t * t.ln()).max(0.0).sqrt()
    }
}

/// Two-level Toeplitz lag array plus the scalar `t` of the PSD certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzCertificate {
    /// Lags `(lx, lz)` stored at `(lx + nx - 1, lz + nz - 1)`; Hermitian:
    /// `u(-l) = conj(u(l))`.
    pub lags: DMatrix<Complex64>,
    pub t: f64,
    pub nx: usize,
    pub nz: usize,
}

impl ToeplitzCertificate {
    /// Expand into the `T×T` two-level Toeplitz matrix, rows/columns
    /// ordered like the channel (`ix·nz + iz`).
    pub fn toeplitz(&self) -> DMatrix<Complex64> {
        toeplitz_from_lags(&self.lags, self.nx, self.nz)
    }

    /// `[[Toep(u), h], [hᴴ, t]]`.
    pub fn block(&self, h: &DVector<Complex64>) -> DMatrix<Complex64> {
        assemble(&self.toeplitz(), h, self.t)
    }

    /// Smallest eigenvalue of the block matrix relative to its trace.
    pub fn psd_margin(&self, h: &DVector<Complex64>) -> f64 {
        let block = self.block(h);
        let trace = block.trace().re.abs().max(f64::MIN_POSITIVE);
        SymmetricEigen::new(block).eigenvalues.min() / trace
    }

    /// Atomic-norm objective value `tr(Toep)/(2T) + t/2`.
    pub fn atomic_value(&self) -> f64 {
        let t_dim = (self.nx * self.nz) as f64;
        let u0 = self.lags[(self.nx - 1, self.nz - 1)].re;
        u0 * t_dim / (2.0 * t_dim) + self.t / 2.0
    }
}

/// `½‖y − γAh‖²` reduced to `AᴴA`, `Aᴴy` and `‖y‖²`.
#[derive(Debug, Clone)]
pub struct LeastSquaresTerm {
    pub gram: DMatrix<Complex64>,
    pub rhs: DVector<Complex64>,
    pub y_norm2: f64,
}

impl LeastSquaresTerm {
    pub fn new(y: &DVector<Complex64>, a: &DMatrix<Complex64>) -> Result<Self> {
        if y.len() != a.nrows() {
            return Err(LocError::DimensionMismatch(format!(
                "observation length {} vs operator rows {}",
                y.len(),
                a.nrows()
            )));
        }
        Ok(Self { gram: a.adjoint() * a, rhs: a.adjoint() * y, y_norm2: y.norm_squared() })
    }

    /// Reuse a precomputed Gram matrix with a fresh observation.
    pub fn with_gram(gram: DMatrix<Complex64>, a: &DMatrix<Complex64>, y: &DVector<Complex64>) -> Self {
        Self { gram, rhs: a.adjoint() * y, y_norm2: y.norm_squared() }
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn value(&self, h: &DVector<Complex64>, gamma: f64) -> f64 {
        let quad = (h.adjoint() * &self.gram * h)[(0, 0)].re;
        let lin = h.dotc(&self.rhs).re;
        0.5 * (gamma * gamma * quad - 2.0 * gamma * lin + self.y_norm2)
    }
}

#[derive(Debug, Clone)]
pub struct AnmSolution {
    pub h: DVector<Complex64>,
    pub certificate: ToeplitzCertificate,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Objective of the feasible point assembled at each iteration.
    pub objective_history: Vec<f64>,
    pub mu: f64,
}

impl AnmSolution {
    pub fn objective(&self, ls: &LeastSquaresTerm, gamma: f64) -> f64 {
        self.mu * self.certificate.atomic_value() + ls.value(&self.h, gamma)
    }
}

fn lag_index(nx: usize, nz: usize, p: usize, q: usize) -> (usize, usize) {
    let (px, pz) = (p / nz, p % nz);
    let (qx, qz) = (q / nz, q % nz);
    (px + nx - 1 - qx, pz + nz - 1 - qz)
}

fn toeplitz_from_lags(lags: &DMatrix<Complex64>, nx: usize, nz: usize) -> DMatrix<Complex64> {
    let t = nx * nz;
    DMatrix::from_fn(t, t, |p, q| {
        let (a, b) = lag_index(nx, nz, p, q);
        lags[(a, b)]
    })
}

/// Least-squares projection of a Hermitian matrix onto two-level Toeplitz
/// matrices: each lag is the mean of the entries that share it.
fn project_toeplitz(w: &DMatrix<Complex64>, nx: usize, nz: usize) -> DMatrix<Complex64> {
    let mut sums = DMatrix::<Complex64>::zeros(2 * nx - 1, 2 * nz - 1);
    let mut counts = DMatrix::<f64>::zeros(2 * nx - 1, 2 * nz - 1);
    let t = nx * nz;
    for q in 0..t {
        for p in 0..t {
            let (a, b) = lag_index(nx, nz, p, q);
            sums[(a, b)] += w[(p, q)];
            counts[(a, b)] += 1.0;
        }
    }
    let mut lags = sums.zip_map(&counts, |s, c| s / c);
    // Enforce exact Hermitian symmetry of the lag array.
    let (rx, rz) = (2 * nx - 1, 2 * nz - 1);
    for a in 0..rx {
        for b in 0..rz {
            let (ma, mb) = (rx - 1 - a, rz - 1 - b);
            if (a, b) < (ma, mb) {
                let v = 0.5 * (lags[(a, b)] + lags[(ma, mb)].conj());
                lags[(a, b)] = v;
                lags[(ma, mb)] = v.conj();
            } else if (a, b) == (ma, mb) {
                lags[(a, b)] = Complex64::new(lags[(a, b)].re, 0.0);
            }
        }
    }
    lags
}

fn assemble(toep: &DMatrix<Complex64>, h: &DVector<Complex64>, t: f64) -> DMatrix<Complex64> {
    let n = toep.nrows();
    let mut z = DMatrix::zeros(n + 1, n + 1);
    z.view_mut((0, 0), (n, n)).copy_from(toep);
    for i in 0..n {
        z[(i, n)] = h[i];
        z[(n, i)] = h[i].conj();
    }
    z[(n, n)] = Complex64::new(t, 0.0);
    z
}

fn project_psd(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let clipped = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0), 0.0));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&clipped) * v.adjoint();
    // Keep the result exactly Hermitian.
    out = (&out + out.adjoint()) * Complex64::new(0.5, 0.0);
    out
}

fn factor(ls: &LeastSquaresTerm, gamma: f64, rho: f64) -> Result<Cholesky<Complex64, Dyn>> {
    let n = ls.dim();
    let m = &ls.gram * Complex64::new(gamma * gamma, 0.0) + DMatrix::identity(n, n) * Complex64::new(2.0 * rho, 0.0);
    Cholesky::new(m).ok_or_else(|| LocError::Numerical("ANM normal matrix is not positive definite".into()))
}

/// Solve the ANM program with an explicit regularization weight `mu`.
pub fn anm_solve(
    ls: &LeastSquaresTerm,
    gamma: f64,
    mu: f64,
    cfg: &AnmConfig,
    geom: &ArrayGeometry,
) -> Result<AnmSolution> {
    cfg.validate()?;
    let (nx, nz) = (geom.nx, geom.nz);
    let t_dim = nx * nz;
    if ls.dim() != t_dim {
        return Err(LocError::DimensionMismatch(format!(
            "array {nx}x{nz} does not match channel length {}",
            ls.dim()
        )));
    }
    if !(gamma > 0.0) || !(mu >= 0.0) {
        return Err(LocError::Config(format!("gamma {gamma} and mu {mu} must be positive")));
    }

    let zero_lags = DMatrix::zeros(2 * nx - 1, 2 * nz - 1);
    if ls.rhs.norm() == 0.0 {
        // Objective is minimized at the origin.
        return Ok(AnmSolution {
            h: DVector::zeros(t_dim),
            certificate: ToeplitzCertificate { lags: zero_lags, t: 0.0, nx, nz },
            converged: true,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective_history: vec![0.5 * ls.y_norm2],
            mu,
        });
    }

    let n1 = t_dim + 1;
    let mean_eig = (gamma * gamma * ls.gram.trace().re / t_dim as f64).max(f64::MIN_POSITIVE);
    let mut rho = cfg.step * mean_eig;
    let mut chol = factor(ls, gamma, rho)?;

    // Warm start from the ridge-regularized least-squares fit.
    let h0 = chol.solve(&(&ls.rhs * Complex64::new(gamma, 0.0)));
    let hn = h0.norm().max(f64::MIN_POSITIVE);
    let s = hn / (t_dim as f64).sqrt();
    let toep0 = DMatrix::identity(t_dim, t_dim) * Complex64::new(s, 0.0);
    let mut z = assemble(&toep0, &h0, hn * (t_dim as f64).sqrt());
    let mut dual = DMatrix::<Complex64>::zeros(n1, n1);
    let mut lags = zero_lags;
    let mut h = h0;
    let mut t = 0.0;

    let eye_shift = mu / (2.0 * t_dim as f64);
    let rhs_norm = ls.rhs.norm();
    let mut history = Vec::new();
    let mut converged = false;
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        // (u, h, t) update.
        let w = z.view((0, 0), (t_dim, t_dim)) - dual.view((0, 0), (t_dim, t_dim));
        let mut w = w.into_owned();
        for i in 0..t_dim {
            w[(i, i)] -= Complex64::new(eye_shift / rho, 0.0);
        }
        lags = project_toeplitz(&w, nx, nz);
        let toep = toeplitz_from_lags(&lags, nx, nz);

        let zh = z.view((0, t_dim), (t_dim, 1)).column(0).into_owned();
        let dh = dual.view((0, t_dim), (t_dim, 1)).column(0).into_owned();
        let rhs = &ls.rhs * Complex64::new(gamma, 0.0) + (zh - dh) * Complex64::new(2.0 * rho, 0.0);
        h = chol.solve(&rhs);

        t = z[(t_dim, t_dim)].re - dual[(t_dim, t_dim)].re - mu / (2.0 * rho);

        let theta = assemble(&toep, &h, t);
        let z_prev = z;
        z = project_psd(&(&theta + &dual));
        let resid = &theta - &z;
        dual += &resid;

        r_norm = resid.norm();
        s_norm = rho * (&z - &z_prev).norm();

        // Feasible surrogate objective: PSD-projected point with its own h.
        let u0 = z.view((0, 0), (t_dim, t_dim)).trace().re;
        let hz = z.view((0, t_dim), (t_dim, 1)).column(0).into_owned();
        history.push(mu * (u0 / (2.0 * t_dim as f64) + z[(t_dim, t_dim)].re / 2.0) + ls.value(&hz, gamma));

        let eps_pri = cfg.solver_tol * theta.norm().max(z.norm()).max(f64::MIN_POSITIVE);
        let eps_dual = cfg.solver_tol * (rho * dual.norm()).max(gamma * rhs_norm).max(f64::MIN_POSITIVE);
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }

        // Residual balancing.
        if it % 10 == 9 {
            let scale = if r_norm > 10.0 * s_norm {
                2.0
            } else if s_norm > 10.0 * r_norm {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 {
                rho *= scale;
                dual /= Complex64::new(scale, 0.0);
                chol = factor(ls, gamma, rho)?;
            }
        }
    }

    let mut certificate = ToeplitzCertificate { lags, t, nx, nz };
    restore_feasibility(&mut certificate, &h);

    Ok(AnmSolution {
        h,
        certificate,
        converged,
        iterations,
        primal_residual: r_norm,
        dual_residual: s_norm,
        objective_history: history,
        mu,
    })
}

/// Shift the block diagonal by the most negative eigenvalue, if any, so the
/// returned certificate is PSD while keeping its Toeplitz structure.
fn restore_feasibility(cert: &mut ToeplitzCertificate, h: &DVector<Complex64>) {
    let block = cert.block(h);
    let lmin = SymmetricEigen::new(block).eigenvalues.min();
    if lmin < 0.0 {
        let shift = -lmin * (1.0 + 1e-9);
        let c = (cert.nx - 1, cert.nz - 1);
        cert.lags[c] += Complex64::new(shift, 0.0);
        cert.t += shift;
    }
}

/// ANM denoising of `y_proj ≈ γ·a_proj·h + noise` with
/// `μ = mu_scale·σ·√(T ln T)`.
pub fn anm_denoise(
    y_proj: &DVector<Complex64>,
    a_proj: &DMatrix<Complex64>,
    gamma: f64,
    noise_std: f64,
    cfg: &AnmConfig,
    geom: &ArrayGeometry,
) -> Result<AnmSolution> {
    let ls = LeastSquaresTerm::new(y_proj, a_proj)?;
    let mu = cfg.mu(noise_std, geom.len());
    anm_solve(&ls, gamma, mu, cfg, geom)
}
