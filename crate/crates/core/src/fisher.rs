//! Fisher information of the channel parameters and of the MS positions,
//! CRLB position bounds and the principal-angle design objective.

use nalgebra::{DMatrix, SMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::channel::los_channel_partials;
use crate::error::{LocError, Result};
use crate::geometry::{jacobian_t, JacobianT, LinkGeometry};
use crate::scenario::Scenario;
use crate::signal::MeasurementMatrices;
use crate::star_ris::PowerConfig;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix6 = SMatrix<f64, 6, 6>;

/// Condition number above which a Fisher matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `ν = [θ₁, φ₁, d₁, θ₂, φ₂, d₂, θ₃, φ₃, d₃]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParamVector(pub [f64; 9]);

impl ChannelParamVector {
    pub fn from_links(links: &[LinkGeometry; 3]) -> Self {
        let mut v = [0.0; 9];
        for (i, l) in links.iter().enumerate() {
            v[3 * i] = l.theta;
            v[3 * i + 1] = l.phi;
            v[3 * i + 2] = l.d;
        }
        Self(v)
    }

    pub fn links(&self) -> Result<[LinkGeometry; 3]> {
        let v = &self.0;
        Ok([
            LinkGeometry::new(v[0], v[1], v[2])?,
            LinkGeometry::new(v[3], v[4], v[5])?,
            LinkGeometry::new(v[6], v[7], v[8])?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrices {
    pub j_nu: Matrix9,
    pub j_kappa: Matrix6,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbReport {
    /// Bound on the outdoor MS position RMSE, meters.
    pub rmse_u1: f64,
    /// Bound on the indoor MS position RMSE, meters.
    pub rmse_u2: f64,
    /// `√[J⁻¹(ν)]_jj` for each channel parameter, when available.
    pub param_bounds: Option<[f64; 9]>,
}

impl CrlbReport {
    pub fn sum(&self) -> f64 {
        self.rmse_u1 + self.rmse_u2
    }
}

/// `∂h_i/∂(θ_i, φ_i, d_i)` for the three MS channels (the `Q` factors).
pub fn q_factors(nu: &ChannelParamVector, scenario: &Scenario) -> Result<[DMatrix<Complex64>; 3]> {
    let [l1, l2, l3] = nu.links()?;
    let lambda = scenario.wavelength();
    let plm = &scenario.pathloss;
    Ok([
        los_channel_partials(&scenario.bs_array, &l1, plm, lambda),
        los_channel_partials(&scenario.ris_array, &l2, plm, lambda),
        los_channel_partials(&scenario.ris_array, &l3, plm, lambda),
    ])
}

/// `∂μ/∂ν` as a KM×9 matrix. Column block `i` is `w_i·A_i·Q_i` where `w_i`
/// is the amplitude weight of term `i` in the mean.
pub fn mean_jacobian(
    nu: &ChannelParamVector,
    mm: &MeasurementMatrices,
    pc: &PowerConfig,
    scenario: &Scenario,
) -> Result<DMatrix<Complex64>> {
    let q = q_factors(nu, scenario)?;
    if q[0].nrows() != mm.m() || q[1].nrows() != mm.n() {
        return Err(LocError::DimensionMismatch(format!(
            "scenario arrays ({}, {}) do not match measurement matrices ({}, {})",
            q[0].nrows(),
            q[1].nrows(),
            mm.m(),
            mm.n()
        )));
    }
    let weights = pc.term_weights();
    let mut jac = DMatrix::zeros(mm.a1.nrows(), 9);
    for (i, (qi, w)) in q.iter().zip(weights).enumerate() {
        let block = mm.matrix(i + 1) * qi * Complex64::new(w, 0.0);
        jac.columns_mut(3 * i, 3).copy_from(&block);
    }
    Ok(jac)
}

/// `J(ν) = (P/σ²)·ℜ{∂μᴴ/∂ν ∂μ/∂ν}`.
pub fn fisher_nu(jac: &DMatrix<Complex64>, p: f64, sigma2: f64) -> Matrix9 {
    assert_eq!(jac.ncols(), 9, "mean Jacobian must have nine columns");
    let gram = jac.adjoint() * jac;
    let scale = p / sigma2;
    let mut j = Matrix9::from_fn(|r, c| scale * gram[(r, c)].re);
    // Symmetrize away round-off.
    j = (j + j.transpose()) * 0.5;
    j
}

/// `J(κ) = T·J(ν)·Tᵀ`.
pub fn position_fim(j_nu: &Matrix9, t: &JacobianT) -> Matrix6 {
    let tf = t.full();
    let j = tf * j_nu * tf.transpose();
    (j + j.transpose()) * 0.5
}

/// Inverse of a symmetric positive definite matrix through its eigen
/// decomposition, refusing matrices whose condition number exceeds
/// [`MAX_CONDITION`].
pub fn guarded_inverse(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(j.clone());
    let (imin, lmin) = eig.eigenvalues.argmin();
    let lmax = eig.eigenvalues.max();
    let direction = || eig.eigenvectors.column(imin).iter().copied().collect();
    if !(lmax > 0.0) || !lmin.is_finite() {
        return Err(LocError::Unidentifiable { condition: f64::INFINITY, direction: direction() });
    }
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(LocError::Unidentifiable { condition, direction: direction() });
    }
    let v = &eig.eigenvectors;
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(v * inv_diag * v.transpose())
}

fn to_dynamic<const D: usize>(m: &SMatrix<f64, D, D>) -> DMatrix<f64> {
    DMatrix::from_fn(D, D, |r, c| m[(r, c)])
}

/// Square roots of the traces of the two 3×3 diagonal blocks of `J⁻¹(κ)`.
pub fn crlb_rmse(j_kappa: &Matrix6) -> Result<CrlbReport> {
    let inv = guarded_inverse(&to_dynamic(j_kappa))?;
    let tr1 = inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)];
    let tr2 = inv[(3, 3)] + inv[(4, 4)] + inv[(5, 5)];
    Ok(CrlbReport { rmse_u1: tr1.max(0.0).sqrt(), rmse_u2: tr2.max(0.0).sqrt(), param_bounds: None })
}

/// Everything needed to evaluate the bounds at the true geometry.
pub fn fisher_matrices(
    scenario: &Scenario,
    mm: &MeasurementMatrices,
    pc: &PowerConfig,
    sigma2: f64,
) -> Result<FisherMatrices> {
    let nu = ChannelParamVector::from_links(&scenario.ms_links()?);
    let jac = mean_jacobian(&nu, mm, pc, scenario)?;
    let j_nu = fisher_nu(&jac, pc.p, sigma2);
    let t = jacobian_t(scenario)?;
    Ok(FisherMatrices { j_kappa: position_fim(&j_nu, &t), j_nu })
}

/// Position bounds plus per-parameter bounds for one operating point.
pub fn crlb_report(scenario: &Scenario, mm: &MeasurementMatrices, pc: &PowerConfig, sigma2: f64) -> Result<CrlbReport> {
    let f = fisher_matrices(scenario, mm, pc, sigma2)?;
    let mut report = crlb_rmse(&f.j_kappa)?;
    if let Ok(inv) = guarded_inverse(&to_dynamic(&f.j_nu)) {
        let mut b = [0.0; 9];
        for (i, v) in b.iter_mut().enumerate() {
            *v = inv[(i, i)].max(0.0).sqrt();
        }
        report.param_bounds = Some(b);
    }
    Ok(report)
}

/// Position-domain gradient matrices `Ĝ₁ = G₁T₁ᴴ` (outdoor) and
/// `Ĝ₂ = G₂T₂ᴴ` (indoor), each KM×3.
pub fn projected_gradients(
    scenario: &Scenario,
    mm: &MeasurementMatrices,
    pc: &PowerConfig,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let nu = ChannelParamVector::from_links(&scenario.ms_links()?);
    let jac = mean_jacobian(&nu, mm, pc, scenario)?;
    let t = jacobian_t(scenario)?;
    let t1h = DMatrix::from_fn(6, 3, |r, c| Complex64::new(t.t1[(c, r)], 0.0));
    let t2h = DMatrix::from_fn(3, 3, |r, c| Complex64::new(t.t2[(c, r)], 0.0));
    let g1 = jac.columns(0, 6) * t1h;
    let g2 = jac.columns(6, 3) * t2h;
    Ok((g1, g2))
}

/// `‖Ĝ₂ᴴĜ₁‖_F`, zero when the outdoor and indoor gradient subspaces are
/// orthogonal (principal angle π/2).
pub fn principal_angle_objective(scenario: &Scenario, mm: &MeasurementMatrices, pc: &PowerConfig) -> Result<f64> {
    let (g1, g2) = projected_gradients(scenario, mm, pc)?;
    Ok((g2.adjoint() * g1).norm())
}

/// The objective normalized by `‖Ĝ₁‖_F·‖Ĝ₂‖_F`; `0` when either side vanishes.
pub fn principal_angle_ratio(scenario: &Scenario, mm: &MeasurementMatrices, pc: &PowerConfig) -> Result<f64> {
    let (g1, g2) = projected_gradients(scenario, mm, pc)?;
    let denom = g1.norm() * g2.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((g2.adjoint() * &g1).norm() / denom)
}

/// Stack a complex matrix as `[ℜ; ℑ]` so that real Gram products carry the
/// `ℜ{·}` of the Fisher definition.
fn real_stack(g: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = g.shape();
    DMatrix::from_fn(2 * r, c, |i, j| if i < r { g[(i, j)].re } else { g[(i - r, j)].im })
}

fn orthogonal_complement_quadratic(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // aᵀ(I - P_b)a with P_b the projector onto span(b).
    let btb = b.transpose() * b;
    let chol = btb
        .cholesky()
        .ok_or_else(|| LocError::Numerical("projected gradient block is rank deficient".into()))?;
    let bta = b.transpose() * a;
    Ok(a.transpose() * a - bta.transpose() * chol.solve(&bta))
}

/// Position bounds from the block-inverse (projection) form of `J⁻¹(κ)`;
/// an independent route to [`crlb_rmse`].
pub fn block_inverse_crlb(
    scenario: &Scenario,
    mm: &MeasurementMatrices,
    pc: &PowerConfig,
    sigma2: f64,
) -> Result<CrlbReport> {
    let (g1, g2) = projected_gradients(scenario, mm, pc)?;
    let (r1, r2) = (real_stack(&g1), real_stack(&g2));
    let scale = sigma2 / pc.p;
    let mut bounds = [0.0; 2];
    for (slot, (a, b)) in [(&r1, &r2), (&r2, &r1)].into_iter().enumerate() {
        let schur = orthogonal_complement_quadratic(a, b)?;
        let inv = schur
            .try_inverse()
            .ok_or_else(|| LocError::Numerical("Schur complement is singular".into()))?;
        bounds[slot] = (scale * inv.trace()).max(0.0).sqrt();
    }
    Ok(CrlbReport { rmse_u1: bounds[0], rmse_u2: bounds[1], param_bounds: None })
}
