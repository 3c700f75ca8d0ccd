//! LoS channel construction: UPA steering vectors, path-loss models, the
//! rank-one RIS→BS matrix and deterministic multipath perturbations.
//!
//! Arrays lie in the x-z plane. Element `(ix, iz)` sits at
//! `((ix - (nx-1)/2)·dx, (iz - (nz-1)/2)·dz)` and the steering vector is
//! `α_x ⊗ α_z`, i.e. element `(ix, iz)` is stored at index `ix·nz + iz`.
//! Spatial frequencies use the direction cosines of `ξ`: `cosθ·cosφ` along
//! x and `sinφ` along z.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{LocError, Result};
use crate::geometry::LinkGeometry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub nx: usize,
    pub nz: usize,
    /// Horizontal element spacing in meters.
    pub spacing_x: f64,
    /// Vertical element spacing in meters.
    pub spacing_z: f64,
}

impl ArrayGeometry {
    pub fn half_wavelength(nx: usize, nz: usize, wavelength: f64) -> Self {
        Self { nx, nz, spacing_x: wavelength / 2.0, spacing_z: wavelength / 2.0 }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.nz == 0 {
            return Err(LocError::Config(format!("array {}x{} has no elements", self.nx, self.nz)));
        }
        if !(self.spacing_x > 0.0 && self.spacing_z > 0.0) {
            return Err(LocError::Config("array spacing must be positive".into()));
        }
        Ok(())
    }

    /// Phase progression per element along x and z for direction cosines
    /// `(ux, uz)`.
    pub fn spatial_frequencies(&self, ux: f64, uz: f64, wavelength: f64) -> (f64, f64) {
        (2.0 * PI * self.spacing_x / wavelength * ux, 2.0 * PI * self.spacing_z / wavelength * uz)
    }

    /// Centered element offsets along x and z, in element units.
    pub fn offsets(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let cx = (self.nx as f64 - 1.0) / 2.0;
        let cz = (self.nz as f64 - 1.0) / 2.0;
        (0..self.nx).flat_map(move |ix| (0..self.nz).map(move |iz| (ix as f64 - cx, iz as f64 - cz)))
    }
}

/// Centered 1-D steering vector `[e^{jω(i - (n-1)/2)}]`.
pub fn ula_response(n: usize, omega: f64) -> DVector<Complex64> {
    let c = (n as f64 - 1.0) / 2.0;
    DVector::from_iterator(n, (0..n).map(|i| Complex64::from_polar(1.0, omega * (i as f64 - c))))
}

/// `α_x ⊗ α_z` for the given spatial frequencies.
pub fn upa_response(geom: &ArrayGeometry, omega_x: f64, omega_z: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        geom.len(),
        geom.offsets().map(|(ox, oz)| Complex64::from_polar(1.0, omega_x * ox + omega_z * oz)),
    )
}

pub fn array_response(geom: &ArrayGeometry, link: &LinkGeometry, wavelength: f64) -> DVector<Complex64> {
    let (ux, uz) = link.direction_cosines();
    let (wx, wz) = geom.spatial_frequencies(ux, uz, wavelength);
    upa_response(geom, wx, wz)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum PathLossModel {
    /// `ρ = d²`.
    #[default]
    SquaredDistance,
    /// `ρ = d²·fc² / 10^8.755`, carrier in kHz.
    FreeSpace { fc_khz: f64 },
    /// 3GPP UMi: `ρ = 10^2.27 · d^3.67 · fc^2.6`, carrier in GHz.
    Umi3gpp { fc_ghz: f64 },
}


impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        let fc = match *self {
            PathLossModel::SquaredDistance => return Ok(()),
            PathLossModel::FreeSpace { fc_khz } => fc_khz,
            PathLossModel::Umi3gpp { fc_ghz } => fc_ghz,
        };
        if fc.is_finite() && fc > 0.0 {
            Ok(())
        } else {
            Err(LocError::Config(format!("path-loss carrier {fc} must be positive")))
        }
    }

    pub fn rho(&self, d: f64) -> f64 {
        match *self {
            PathLossModel::SquaredDistance => d * d,
            PathLossModel::FreeSpace { fc_khz } => d * d * fc_khz * fc_khz / 10f64.powf(8.755),
            PathLossModel::Umi3gpp { fc_ghz } => 10f64.powf(2.27) * d.powf(3.67) * fc_ghz.powf(2.6),
        }
    }

    /// `d/dd ln(1/√ρ) = -ρ'(d) / (2ρ(d))`.
    pub fn amplitude_log_derivative(&self, d: f64) -> f64 {
        match self {
            PathLossModel::SquaredDistance | PathLossModel::FreeSpace { .. } => -1.0 / d,
            PathLossModel::Umi3gpp { .. } => -3.67 / (2.0 * d),
        }
    }

    /// Distance at which `ρ(d)` equals `target`, by bisection on the
    /// monotone path-loss curve.
    pub fn invert(&self, target: f64) -> f64 {
        if let PathLossModel::SquaredDistance = self {
            return target.sqrt();
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while self.rho(hi) < target {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.rho(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Complex baseband gain `e^{-j2πd/λ} / √ρ(d)` of a LoS path.
pub fn path_gain(d: f64, plm: &PathLossModel, wavelength: f64) -> Complex64 {
    Complex64::from_polar(1.0 / plm.rho(d).sqrt(), -2.0 * PI * d / wavelength)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector(pub DVector<Complex64>);

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisBsChannel(pub DMatrix<Complex64>);

pub fn los_channel(
    geom: &ArrayGeometry,
    link: &LinkGeometry,
    plm: &PathLossModel,
    wavelength: f64,
) -> ChannelVector {
    ChannelVector(array_response(geom, link, wavelength) * path_gain(link.d, plm, wavelength))
}

/// `∂h/∂(θ, φ, d)` of a LoS channel, as a `T×3` matrix.
pub fn los_channel_partials(
    geom: &ArrayGeometry,
    link: &LinkGeometry,
    plm: &PathLossModel,
    wavelength: f64,
) -> DMatrix<Complex64> {
    let h = los_channel(geom, link, plm, wavelength).0;
    let (st, ct) = link.theta.sin_cos();
    let (sp, cp) = link.phi.sin_cos();
    let kx = 2.0 * PI * geom.spacing_x / wavelength;
    let kz = 2.0 * PI * geom.spacing_z / wavelength;
    let dux_dtheta = -st * cp;
    let dux_dphi = -ct * sp;
    let duz_dphi = cp;
    let d_dist = Complex64::new(plm.amplitude_log_derivative(link.d), -2.0 * PI / wavelength);

    let mut q = DMatrix::zeros(h.len(), 3);
    for (i, (ox, oz)) in geom.offsets().enumerate() {
        let hi = h[i];
        q[(i, 0)] = hi * Complex64::new(0.0, kx * ox * dux_dtheta);
        q[(i, 1)] = hi * Complex64::new(0.0, kx * ox * dux_dphi + kz * oz * duz_dphi);
        q[(i, 2)] = hi * d_dist;
    }
    q
}

/// `H₄ = g₄ · a_B a_Rᴴ`, the rank-one channel between parallel BS and RIS arrays.
pub fn ris_bs_channel(
    bs_geom: &ArrayGeometry,
    ris_geom: &ArrayGeometry,
    link4: &LinkGeometry,
    plm: &PathLossModel,
    wavelength: f64,
) -> RisBsChannel {
    let a_b = array_response(bs_geom, link4, wavelength);
    let a_r = array_response(ris_geom, link4, wavelength);
    RisBsChannel(a_b * a_r.adjoint() * path_gain(link4.d, plm, wavelength))
}

/// A deterministic non-line-of-sight path relative to its LoS link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcComponent {
    pub distance_scale: f64,
    pub theta_offset: f64,
    pub phi_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MpcCase {
    LosOnly,
    /// Two paths at ten times the LoS distance.
    CaseI,
    /// Two paths at five times the LoS distance.
    CaseII,
}

impl MpcCase {
    pub fn components(self) -> Vec<MpcComponent> {
        let scale = match self {
            MpcCase::LosOnly => return Vec::new(),
            MpcCase::CaseI => 10.0,
            MpcCase::CaseII => 5.0,
        };
        [PI / 6.0, PI / 3.0]
            .into_iter()
            .map(|off| MpcComponent { distance_scale: scale, theta_offset: off, phi_offset: off })
            .collect()
    }

    pub fn label(self) -> &'static str {
        match self {
            MpcCase::LosOnly => "los",
            MpcCase::CaseI => "case-i",
            MpcCase::CaseII => "case-ii",
        }
    }
}

/// Add one LoS-shaped term per component, built from
/// `(scale·d, θ + Δθ, φ + Δφ)`.
pub fn add_mpc(
    h: &ChannelVector,
    link: &LinkGeometry,
    comps: &[MpcComponent],
    geom: &ArrayGeometry,
    plm: &PathLossModel,
    wavelength: f64,
) -> Result<ChannelVector> {
    let mut out = h.0.clone();
    for c in comps {
        if !(c.distance_scale > 1.0) {
            return Err(LocError::InvalidLink(format!(
                "multipath distance scale {} must exceed 1",
                c.distance_scale
            )));
        }
        let path = LinkGeometry::new(link.theta + c.theta_offset, link.phi + c.phi_offset, link.d * c.distance_scale)?;
        out += los_channel(geom, &path, plm, wavelength).0;
    }
    Ok(ChannelVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{wavelength, Scenario};
    use proptest::prelude::*;

    const LAMBDA: f64 = 0.01;

    fn brute_norm2(v: &DVector<Complex64>) -> f64 {
        v.iter().map(|c| c.re * c.re + c.im * c.im).sum()
    }

    #[test]
    fn single_element_response() {
        let g = ArrayGeometry::half_wavelength(1, 1, LAMBDA);
        let link = LinkGeometry::new(0.7, -0.3, 3.0).unwrap();
        let a = array_response(&g, &link, LAMBDA);
        assert_eq!(a.len(), 1);
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn broadside_response_is_flat() {
        let g = ArrayGeometry::half_wavelength(2, 1, LAMBDA);
        let a = upa_response(&g, 0.0, 0.0);
        for v in a.iter() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn kronecker_layout() {
        let g = ArrayGeometry::half_wavelength(3, 2, LAMBDA);
        let (wx, wz) = (0.4, -1.1);
        let a = upa_response(&g, wx, wz);
        let ax = ula_response(3, wx);
        let az = ula_response(2, wz);
        for ix in 0..3 {
            for iz in 0..2 {
                assert!((a[ix * 2 + iz] - ax[ix] * az[iz]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn los_norm_matches_path_loss() {
        let g = ArrayGeometry::half_wavelength(4, 4, LAMBDA);
        let link = LinkGeometry::new(0.3, 0.1, 2.0).unwrap();
        let h = los_channel(&g, &link, &PathLossModel::SquaredDistance, LAMBDA);
        assert!((brute_norm2(&h.0) - 4.0).abs() < 1e-12);

        let s = Scenario::reference();
        let [l1, _, _] = s.ms_links().unwrap();
        let h1 = los_channel(&s.bs_array, &l1, &s.pathloss, s.wavelength());
        assert!((brute_norm2(&h1.0) - 16.0 / 62.0).abs() / (16.0 / 62.0) < 1e-10);
    }

    #[test]
    fn one_wavelength_phase_is_unity() {
        let g = path_gain(LAMBDA, &PathLossModel::SquaredDistance, LAMBDA);
        assert!((g - Complex64::new(1.0 / LAMBDA, 0.0)).norm() / g.norm() < 1e-12);
    }

    #[test]
    fn ris_bs_channel_structure() {
        let s = Scenario::reference();
        let l4 = s.ris_link().unwrap();
        let h4 = ris_bs_channel(&s.bs_array, &s.ris_array, &l4, &s.pathloss, s.wavelength());
        assert_eq!(h4.0.shape(), (16, 36));
        let fro2: f64 = h4.0.iter().map(|c| c.norm_sqr()).sum();
        let expected = 16.0 * 36.0 / 17.0;
        assert!((fro2 - expected).abs() / expected < 1e-10);
        let sv = h4.0.clone().svd(false, false).singular_values;
        assert!(sv[1] / sv[0] < 1e-12);

        let one = ArrayGeometry::half_wavelength(1, 1, LAMBDA);
        let scalar = ris_bs_channel(&one, &one, &l4, &s.pathloss, LAMBDA);
        let g = path_gain(l4.d, &s.pathloss, LAMBDA);
        assert!((scalar.0[(0, 0)] - g).norm() < 1e-15);
    }

    #[test]
    fn mpc_empty_is_identity() {
        let s = Scenario::desk();
        let [l1, _, _] = s.ms_links().unwrap();
        let h = los_channel(&s.bs_array, &l1, &s.pathloss, s.wavelength());
        let out = add_mpc(&h, &l1, &[], &s.bs_array, &s.pathloss, s.wavelength()).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn mpc_cases_follow_definition() {
        let c = MpcCase::CaseI.components();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0], MpcComponent { distance_scale: 10.0, theta_offset: PI / 6.0, phi_offset: PI / 6.0 });
        assert_eq!(c[1], MpcComponent { distance_scale: 10.0, theta_offset: PI / 3.0, phi_offset: PI / 3.0 });
        assert!(MpcCase::CaseII.components().iter().all(|m| m.distance_scale == 5.0));
    }

    #[test]
    fn mpc_power_ratio() {
        let g = ArrayGeometry::half_wavelength(4, 4, LAMBDA);
        let link = LinkGeometry::new(0.5, 0.2, 3.0).unwrap();
        let zero = ChannelVector::zeros(16);
        let comp = MpcComponent { distance_scale: 10.0, theta_offset: 0.1, phi_offset: 0.1 };
        let plm = PathLossModel::SquaredDistance;
        let only = add_mpc(&zero, &link, &[comp], &g, &plm, LAMBDA).unwrap();
        let los = los_channel(&g, &link, &plm, LAMBDA);
        let ratio = brute_norm2(&only.0) / brute_norm2(&los.0);
        assert!((ratio - 0.01).abs() < 1e-12);
    }

    #[test]
    fn mpc_out_of_range_rejected() {
        let g = ArrayGeometry::half_wavelength(2, 2, LAMBDA);
        let link = LinkGeometry::new(0.5, 1.4, 3.0).unwrap();
        let comps = MpcCase::CaseII.components();
        let r = add_mpc(&ChannelVector::zeros(4), &link, &comps, &g, &PathLossModel::SquaredDistance, LAMBDA);
        assert!(matches!(r, Err(LocError::InvalidLink(_))));
    }

    #[test]
    fn path_loss_models_increase_and_invert() {
        let models = [
            PathLossModel::SquaredDistance,
            PathLossModel::FreeSpace { fc_khz: 2.8e7 },
            PathLossModel::Umi3gpp { fc_ghz: 28.0 },
        ];
        for m in models {
            let mut prev = 0.0;
            for i in 1..200 {
                let d = i as f64 * 0.25;
                let r = m.rho(d);
                assert!(r > prev, "{m:?} not increasing at d={d}");
                prev = r;
                let back = m.invert(r);
                assert!((back - d).abs() / d < 1e-12, "{m:?} inversion {back} vs {d}");
            }
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let lambda = wavelength(28.0);
        let g = ArrayGeometry::half_wavelength(4, 3, lambda);
        for plm in [PathLossModel::SquaredDistance, PathLossModel::Umi3gpp { fc_ghz: 28.0 }] {
            let link = LinkGeometry::new(1.2, -0.4, 4.5).unwrap();
            let q = los_channel_partials(&g, &link, &plm, lambda);
            let steps = [1e-7, 1e-7, 1e-7];
            for col in 0..3 {
                let mut lp = link;
                let mut lm = link;
                match col {
                    0 => {
                        lp.theta += steps[0];
                        lm.theta -= steps[0];
                    }
                    1 => {
                        lp.phi += steps[1];
                        lm.phi -= steps[1];
                    }
                    _ => {
                        lp.d += steps[2];
                        lm.d -= steps[2];
                    }
                }
                let fd = (los_channel(&g, &lp, &plm, lambda).0 - los_channel(&g, &lm, &plm, lambda).0)
                    / Complex64::new(2.0 * steps[col], 0.0);
                let err = (fd - q.column(col)).norm() / q.column(col).norm();
                assert!(err < 1e-5, "column {col}: rel err {err}");
            }
        }
    }

    proptest! {
        #[test]
        fn response_unit_modulus_and_periodic(
            nx in 1usize..6, nz in 1usize..6, wx in -4.0..4.0f64, wz in -4.0..4.0f64
        ) {
            let g = ArrayGeometry::half_wavelength(nx, nz, LAMBDA);
            let a = upa_response(&g, wx, wz);
            for v in a.iter() {
                prop_assert!((v.norm() - 1.0).abs() < 1e-14);
            }
            // Shifting a spatial frequency by 2π only changes a global phase
            // when the centering offset is fractional; the magnitudes of the
            // inner product with the original stay maximal.
            let b = upa_response(&g, wx + 2.0 * PI, wz + 2.0 * PI);
            let corr = (a.adjoint() * &b)[(0, 0)].norm();
            prop_assert!((corr - (nx * nz) as f64).abs() < 1e-9);
        }
    }
}
