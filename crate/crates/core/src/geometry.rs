//! Cartesian/spherical conversions between node positions and per-link
//! channel parameters, the position Jacobian, and the location mapping used
//! by the estimator.
//!
//! Angles follow the direction-cosine convention
//! `ξ(θ, φ) = [cosθ·cosφ, sinθ·cosφ, sinφ]`, measured in the global frame
//! from the anchor (BS or STAR-RIS) towards the target node.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{LocError, Result};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

impl std::fmt::Display for Position3D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Azimuth, elevation and distance of one propagation link.
///
/// Azimuth lives in `(-π, π]`. A planar array in the x-z plane only observes
/// `cosθ`, so the sign of `θ` (the side of the array the node sits on) is
/// carried separately by [`Hemisphere`] when angles are estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub theta: f64,
    pub phi: f64,
    pub d: f64,
}

impl LinkGeometry {
    pub fn new(theta: f64, phi: f64, d: f64) -> Result<Self> {
        let link = Self { theta, phi, d };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.phi.is_finite() && self.d.is_finite()) {
            return Err(LocError::InvalidLink(format!("non-finite parameters {self:?}")));
        }
        if self.d <= 0.0 {
            return Err(LocError::InvalidLink(format!("distance {} must be positive", self.d)));
        }
        if self.theta <= -PI || self.theta > PI {
            return Err(LocError::InvalidLink(format!("azimuth {} outside (-pi, pi]", self.theta)));
        }
        if self.phi.abs() > FRAC_PI_2 {
            return Err(LocError::InvalidLink(format!(
                "elevation {} outside [-pi/2, pi/2]",
                self.phi
            )));
        }
        Ok(())
    }

    /// Spatial direction cosines seen by an x-z planar array: `(cosθ·cosφ, sinφ)`.
    pub fn direction_cosines(&self) -> (f64, f64) {
        (self.theta.cos() * self.phi.cos(), self.phi.sin())
    }

    pub fn hemisphere(&self) -> Hemisphere {
        if self.theta < 0.0 {
            Hemisphere::NegativeY
        } else {
            Hemisphere::PositiveY
        }
    }
}

/// Which side of an x-z planar array a node lies on (sign of the y offset).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hemisphere {
    PositiveY,
    NegativeY,
}

impl Hemisphere {
    /// Side of `anchor` on which `point` lies.
    pub fn of(anchor: &Position3D, point: &Position3D) -> Self {
        if point.y - anchor.y < 0.0 {
            Hemisphere::NegativeY
        } else {
            Hemisphere::PositiveY
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Hemisphere::PositiveY => Hemisphere::NegativeY,
            Hemisphere::NegativeY => Hemisphere::PositiveY,
        }
    }

    /// Map an azimuth folded into `[0, π]` onto this side.
    pub fn unfold(self, folded_theta: f64) -> f64 {
        match self {
            Hemisphere::PositiveY => folded_theta,
            // θ = 0 and θ = π lie on the plane itself; keep them as-is.
            Hemisphere::NegativeY if folded_theta > 0.0 && folded_theta < PI => -folded_theta,
            Hemisphere::NegativeY => folded_theta,
        }
    }
}

/// Unit vector `ξ = [cosθ·cosφ, sinθ·cosφ, sinφ]`.
pub fn direction_vector(link: &LinkGeometry) -> Vector3<f64> {
    let (st, ct) = link.theta.sin_cos();
    let (sp, cp) = link.phi.sin_cos();
    Vector3::new(ct * cp, st * cp, sp)
}

/// Link parameters of `target` as seen from `anchor`.
pub fn link_from_positions(anchor: &Position3D, target: &Position3D) -> Result<LinkGeometry> {
    if !anchor.is_finite() || !target.is_finite() {
        return Err(LocError::DegenerateGeometry("non-finite position".into()));
    }
    let delta = target.to_vector() - anchor.to_vector();
    let d = delta.norm();
    if d == 0.0 {
        return Err(LocError::DegenerateGeometry(format!(
            "anchor and target coincide at {anchor}"
        )));
    }
    let phi = (delta.z / d).clamp(-1.0, 1.0).asin();
    let mut theta = delta.y.atan2(delta.x);
    if theta == -PI {
        theta = PI;
    }
    LinkGeometry::new(theta, phi, d)
}

/// Indoor MS position `p_R + d₃·ξ₃`.
pub fn map_indoor(p_r: &Position3D, link3: &LinkGeometry) -> Position3D {
    Position3D::from_vector(p_r.to_vector() + link3.d * direction_vector(link3))
}

/// Outdoor MS position from the direct (BS) and reflected (RIS) branches,
/// weighted inversely to the path loss of each branch:
/// `w₁ = d̂₂² / (d̂₁² + d̂₂²)`.
pub fn map_outdoor_weighted(
    p_b: &Position3D,
    p_r: &Position3D,
    link1: &LinkGeometry,
    link2: &LinkGeometry,
) -> Position3D {
    let w1 = outdoor_weight(link1.d, link2.d);
    let branch1 = p_b.to_vector() + link1.d * direction_vector(link1);
    let branch2 = p_r.to_vector() + link2.d * direction_vector(link2);
    Position3D::from_vector(w1 * branch1 + (1.0 - w1) * branch2)
}

pub fn outdoor_weight(d1: f64, d2: f64) -> f64 {
    let (a, b) = (d1 * d1, d2 * d2);
    if a + b == 0.0 {
        0.5
    } else {
        b / (a + b)
    }
}

/// Position Jacobian `[T]_ij = ∂ν_j / ∂κ_i`.
///
/// `κ = [x₁, y₁, z₁, x₂, y₂, z₂]` holds both MS coordinates and
/// `ν = [θ₁, φ₁, d₁, θ₂, φ₂, d₂, θ₃, φ₃, d₃]`. Only links 1 and 2 depend on
/// the outdoor MS and only link 3 on the indoor MS, so `T` is block diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianT {
    /// Outdoor block, 3×6, columns ordered `θ₁, φ₁, d₁, θ₂, φ₂, d₂`.
    pub t1: SMatrix<f64, 3, 6>,
    /// Indoor block, 3×3, columns ordered `θ₃, φ₃, d₃`.
    pub t2: Matrix3<f64>,
}

impl JacobianT {
    pub fn full(&self) -> SMatrix<f64, 6, 9> {
        let mut t = SMatrix::<f64, 6, 9>::zeros();
        t.fixed_view_mut::<3, 6>(0, 0).copy_from(&self.t1);
        t.fixed_view_mut::<3, 3>(3, 6).copy_from(&self.t2);
        t
    }

    /// Direct-link part `T̃₁` (first three columns of `T₁`).
    pub fn t1_direct(&self) -> Matrix3<f64> {
        self.t1.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Reflected-link part `T̄₁` (last three columns of `T₁`).
    pub fn t1_reflected(&self) -> Matrix3<f64> {
        self.t1.fixed_view::<3, 3>(0, 3).into_owned()
    }

    pub fn zeros() -> Self {
        Self { t1: SMatrix::zeros(), t2: Matrix3::zeros() }
    }
}

/// Partials of `(θ, φ, d)` with respect to the target position; columns
/// are the gradients of θ, φ and d respectively.
pub fn link_partials(link: &LinkGeometry, link_index: usize) -> Result<Matrix3<f64>> {
    let (st, ct) = link.theta.sin_cos();
    let (sp, cp) = link.phi.sin_cos();
    if link.phi.abs() >= FRAC_PI_2 || cp.abs() < 1e-300 {
        return Err(LocError::GimbalSingularity { link: link_index, phi: link.phi });
    }
    let d = link.d;
    let grad_theta = Vector3::new(-st, ct, 0.0) / (d * cp);
    let grad_phi = Vector3::new(-ct * sp, -st * sp, cp) / d;
    let grad_d = direction_vector(link);
    Ok(Matrix3::from_columns(&[grad_theta, grad_phi, grad_d]))
}

pub fn jacobian_t(scenario: &Scenario) -> Result<JacobianT> {
    let [l1, l2, l3] = scenario.ms_links()?;
    let mut t1 = SMatrix::<f64, 3, 6>::zeros();
    t1.fixed_view_mut::<3, 3>(0, 0).copy_from(&link_partials(&l1, 1)?);
    t1.fixed_view_mut::<3, 3>(0, 3).copy_from(&link_partials(&l2, 2)?);
    let t2 = link_partials(&l3, 3)?;
    Ok(JacobianT { t1, t2 })
}
