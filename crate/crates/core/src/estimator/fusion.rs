//! Outdoor position fusion of the direct and reflected branches.
//!
//! Each branch yields `(θ, φ, d)` seen from its anchor. The weighted map
//! blends the two branch points with path-loss weights. The least-squares
//! fusion instead solves
//!
//! ```text
//! min_p  Σ_b rᵦ(p)ᵀ Cᵦ⁻¹ rᵦ(p),   rᵦ(p) = ν̂ᵦ − ν(anchorᵦ, p)
//! ```
//!
//! by Gauss-Newton, where `Cᵦ` is a plug-in covariance of the branch
//! parameters computed from the nulled single-channel model with the gain
//! phase left free, so distance information comes from the amplitude only.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;

use crate::channel::{los_channel_partials, ArrayGeometry, PathLossModel};
use crate::error::{LocError, Result};
use crate::fisher::guarded_inverse;
use crate::geometry::{link_from_positions, link_partials, LinkGeometry, Position3D};

/// How the outdoor MS position is formed from the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutdoorFusion {
    /// Path-loss weighted blend of the two branch points.
    #[default]
    PathLossWeighted,
    /// Gauss-Newton weighted least squares on the six branch parameters.
    WeightedLeastSquares,
}

impl OutdoorFusion {
    pub fn label(self) -> &'static str {
        match self {
            OutdoorFusion::PathLossWeighted => "pathloss-weighted",
            OutdoorFusion::WeightedLeastSquares => "wls",
        }
    }
}

/// Covariance of `(θ, φ, d)` for one nulled channel evaluated at `link`.
///
/// Model: `U y = γ·U A·e^{jψ}·a(θ, φ)/√ρ(d) + n`, `n ~ CN(0, σ²I)`, with the
/// phase `ψ` a nuisance parameter.
pub fn branch_covariance(
    a_proj: &DMatrix<Complex64>,
    gamma: f64,
    sigma2: f64,
    geom: &ArrayGeometry,
    wavelength: f64,
    plm: &PathLossModel,
    link: &LinkGeometry,
) -> Result<Matrix3<f64>> {
    let partials = los_channel_partials(geom, link, plm, wavelength);
    let h = crate::channel::los_channel(geom, link, plm, wavelength).0;
    let t = h.len();
    let amp = plm.amplitude_log_derivative(link.d);
    let mut jac = DMatrix::<Complex64>::zeros(t, 4);
    jac.column_mut(0).copy_from(&partials.column(0));
    jac.column_mut(1).copy_from(&partials.column(1));
    jac.column_mut(2).copy_from(&(&h * Complex64::new(amp, 0.0)));
    jac.column_mut(3).copy_from(&(&h * Complex64::new(0.0, 1.0)));
    let b = a_proj * jac * Complex64::new(gamma, 0.0);
    let gram = b.adjoint() * &b;
    let fim = DMatrix::from_fn(4, 4, |r, c| 2.0 / sigma2 * gram[(r, c)].re);
    let fim = (&fim + fim.transpose()) * 0.5;
    let cov = guarded_inverse(&fim)?;
    Ok(Matrix3::from_fn(|r, c| cov[(r, c)]))
}

fn wrap(angle: f64) -> f64 {
    let w = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// One branch observation for [`fuse_outdoor`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchMeasurement {
    pub anchor: Position3D,
    pub link: LinkGeometry,
    pub covariance: Matrix3<f64>,
}

/// Gauss-Newton weighted least squares over the branch parameters,
/// started from `initial`.
pub fn fuse_outdoor(branches: &[BranchMeasurement], initial: Position3D) -> Result<Position3D> {
    if branches.is_empty() {
        return Err(LocError::DegenerateGeometry("no branch to fuse".into()));
    }
    let weights: Vec<Matrix3<f64>> = branches
        .iter()
        .map(|b| {
            let inv = guarded_inverse(&DMatrix::from_fn(3, 3, |r, c| b.covariance[(r, c)]))?;
            Ok(Matrix3::from_fn(|r, c| inv[(r, c)]))
        })
        .collect::<Result<_>>()?;

    let cost = |p: &Vector3<f64>| -> Option<f64> {
        let mut total = 0.0;
        for (b, w) in branches.iter().zip(&weights) {
            let model = link_from_positions(&b.anchor, &Position3D::from_vector(*p)).ok()?;
            let r = Vector3::new(wrap(b.link.theta - model.theta), b.link.phi - model.phi, b.link.d - model.d);
            total += (r.transpose() * w * r)[(0, 0)];
        }
        Some(total)
    };

    let mut p = initial.to_vector();
    let mut current = cost(&p).ok_or_else(|| LocError::DegenerateGeometry("fusion start on an anchor".into()))?;
    for _ in 0..50 {
        let mut normal = Matrix3::zeros();
        let mut grad = Vector3::zeros();
        for (idx, (b, w)) in branches.iter().zip(&weights).enumerate() {
            let model = link_from_positions(&b.anchor, &Position3D::from_vector(p))?;
            // Columns of `g` are ∇θ, ∇φ, ∇d, so the residual Jacobian is gᵀ.
            let g = link_partials(&model, idx + 1)?;
            let r = Vector3::new(wrap(b.link.theta - model.theta), b.link.phi - model.phi, b.link.d - model.d);
            normal += g * w * g.transpose();
            grad += g * w * r;
        }
        let step = match normal.cholesky() {
            Some(c) => c.solve(&grad),
            None => break,
        };
        // Backtrack until the weighted cost does not increase.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = p + step * scale;
            if let Some(c) = cost(&trial) {
                if c <= current {
                    p = trial;
                    current = c;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted || (step * scale).norm() < 1e-12 * (1.0 + p.norm()) {
            break;
        }
    }
    Ok(Position3D::from_vector(p))
}
