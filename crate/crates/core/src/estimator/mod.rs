//! Two-step localizer: per-channel interference nulling and ANM recovery,
//! then angle/distance extraction and mapping to the two MS positions.

pub mod anm;
pub mod fusion;
pub mod music;
pub mod nulling;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{upa_response, ArrayGeometry, PathLossModel, RisBsChannel};
use crate::error::{LocError, Result};
use crate::geometry::{map_indoor, map_outdoor_weighted, direction_vector, Hemisphere, LinkGeometry, Position3D};
use crate::scenario::Scenario;
use crate::signal::{build_measurement_matrices, MeasurementMatrices, ObservationBundle};
use crate::star_ris::{PhaseSchedule, PowerConfig};

pub use fusion::{branch_covariance, fuse_outdoor, BranchMeasurement, OutdoorFusion};
pub use anm::{anm_denoise, anm_solve, AnmConfig, AnmSolution, LeastSquaresTerm, ToeplitzCertificate};
pub use music::{extract_angles, extract_angles_clamped, root_music, AngleEstimate};
pub use nulling::{nulling_operator, NullingOperator};

/// Distance whose path loss matches the energy of a recovered channel:
/// `ρ(d̂) = T / ‖ĥ‖²`.
pub fn estimate_distance(h_hat: &DVector<Complex64>, t_dim: usize, plm: &PathLossModel) -> Result<f64> {
    let energy = h_hat.norm_squared();
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(LocError::ZeroChannel);
    }
    let d = plm.invert(t_dim as f64 / energy);
    if !(d.is_finite() && d > 0.0) {
        return Err(LocError::Numerical(format!("distance inversion returned {d}")));
    }
    Ok(d)
}

/// Anchor knowledge available to the localizer. MS positions are not part
/// of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub p_b: Position3D,
    pub p_r: Position3D,
    pub bs_array: ArrayGeometry,
    pub ris_array: ArrayGeometry,
    pub wavelength: f64,
    pub pathloss: PathLossModel,
}

impl Deployment {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            p_b: s.p_b,
            p_r: s.p_r,
            bs_array: s.bs_array,
            ris_array: s.ris_array,
            wavelength: s.wavelength(),
            pathloss: s.pathloss,
        }
    }

    /// Side of the receiving array for links 1..3, from anchors only: the
    /// outdoor MS is assumed on the RIS side of the BS array, the reflected
    /// MS on the BS side of the RIS and the refracted MS on the other.
    pub fn hemispheres(&self) -> [Hemisphere; 3] {
        let bs_side = Hemisphere::of(&self.p_r, &self.p_b);
        [Hemisphere::of(&self.p_b, &self.p_r), bs_side, bs_side.opposite()]
    }

    pub fn array(&self, channel: usize) -> &ArrayGeometry {
        if channel == 1 {
            &self.bs_array
        } else {
            &self.ris_array
        }
    }

    pub fn anchor(&self, channel: usize) -> &Position3D {
        if channel == 1 {
            &self.p_b
        } else {
            &self.p_r
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub h_hat: DVector<Complex64>,
    pub link_hat: LinkGeometry,
    pub angles: AngleEstimate,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `‖U y − γ U A ĥ‖ / ‖U y‖`.
    pub fit_residual: f64,
}

impl ChannelEstimate {
    pub fn rank_warning(&self) -> bool {
        self.angles.rank_warning()
    }
}

/// Result of one localization; channel failures are kept per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub p_u1: Option<Position3D>,
    pub p_u2: Option<Position3D>,
    pub channels: [std::result::Result<ChannelEstimate, LocError>; 3],
    /// Set when the outdoor position rests on a single branch (1 or 2)
    /// because the other failed.
    pub outdoor_single_branch: Option<usize>,
}

impl Localization {
    pub fn all_converged(&self) -> bool {
        self.channels.iter().all(|c| c.as_ref().is_ok_and(|e| e.converged))
    }

    pub fn complete(&self) -> bool {
        self.p_u1.is_some() && self.p_u2.is_some()
    }

    pub fn max_rank_ratio(&self) -> f64 {
        self.channels
            .iter()
            .filter_map(|c| c.as_ref().ok())
            .map(|e| e.angles.rank_ratio)
            .fold(0.0, f64::max)
    }

    pub fn any_rank_warning(&self) -> bool {
        self.channels.iter().any(|c| c.as_ref().is_ok_and(|e| e.rank_warning()))
    }
}

#[derive(Debug, Clone)]
struct Branch {
    op: NullingOperator,
    a_proj: DMatrix<Complex64>,
    gram: DMatrix<Complex64>,
}

/// Localizer bound to a deployment, an assumed RIS→BS channel and a phase
/// schedule. Nulling operators and Gram matrices are built once and reused
/// for every observation.
#[derive(Debug, Clone)]
pub struct Localizer {
    deployment: Deployment,
    power: PowerConfig,
    cfg: AnmConfig,
    fusion: OutdoorFusion,
    matrices: Arc<MeasurementMatrices>,
    branches: [std::result::Result<Branch, LocError>; 3],
}

impl Localizer {
    pub fn new(
        deployment: Deployment,
        h4_assumed: &RisBsChannel,
        schedule: &PhaseSchedule,
        power: PowerConfig,
        cfg: AnmConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        power.validate()?;
        deployment.bs_array.validate()?;
        deployment.ris_array.validate()?;
        deployment.pathloss.validate()?;
        let (m, n) = h4_assumed.0.shape();
        if m != deployment.bs_array.len() || n != deployment.ris_array.len() {
            return Err(LocError::DimensionMismatch(format!(
                "H4 is {m}x{n} but the arrays have {} and {} elements",
                deployment.bs_array.len(),
                deployment.ris_array.len()
            )));
        }
        let matrices = Arc::new(build_measurement_matrices(h4_assumed, schedule)?);
        let gammas = power.gammas();
        let branches = [1, 2, 3].map(|i| {
            if gammas[i - 1] <= 0.0 {
                return Err(LocError::InvalidPower(format!("channel {i} carries no power")));
            }
            let op = nulling_operator(i, &matrices)?;
            let a_proj = op.project_matrix(matrices.matrix(i));
            let gram = a_proj.adjoint() * &a_proj;
            Ok(Branch { op, a_proj, gram })
        });
        Ok(Self { deployment, power, cfg, fusion: OutdoorFusion::default(), matrices, branches })
    }

    pub fn with_fusion(mut self, fusion: OutdoorFusion) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn fusion(&self) -> OutdoorFusion {
        self.fusion
    }

    pub fn matrices(&self) -> &Arc<MeasurementMatrices> {
        &self.matrices
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    pub fn config(&self) -> &AnmConfig {
        &self.cfg
    }

    pub fn nulling(&self, channel: usize) -> Option<&NullingOperator> {
        self.branches.get(channel.wrapping_sub(1))?.as_ref().ok().map(|b| &b.op)
    }

    /// Nulling and ANM recovery of channel `i` from `y`.
    pub fn recover_channel(&self, channel: usize, y: &DVector<Complex64>, sigma2: f64) -> Result<AnmSolution> {
        let branch = self
            .branches
            .get(channel.wrapping_sub(1))
            .ok_or_else(|| LocError::DimensionMismatch(format!("channel index {channel} outside 1..=3")))?
            .as_ref()
            .map_err(Clone::clone)?;
        if y.len() != self.matrices.a1.nrows() {
            return Err(LocError::DimensionMismatch(format!(
                "observation length {} vs {}",
                y.len(),
                self.matrices.a1.nrows()
            )));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(LocError::InvalidNoise(sigma2));
        }
        let y_proj = branch.op.project(y);
        let ls = LeastSquaresTerm::with_gram(branch.gram.clone(), &branch.a_proj, &y_proj);
        let geom = self.deployment.array(channel);
        let mu = self.cfg.mu(sigma2.sqrt(), geom.len());
        anm_solve(&ls, self.power.gammas()[channel - 1], mu, &self.cfg, geom)
    }

    fn estimate_channel(&self, channel: usize, y: &DVector<Complex64>, sigma2: f64) -> Result<ChannelEstimate> {
        let sol = self.recover_channel(channel, y, sigma2)?;
        let geom = self.deployment.array(channel);
        let angles = extract_angles_clamped(&sol.h, geom, self.deployment.wavelength)?;
        let branch = self.branches[channel - 1].as_ref().map_err(Clone::clone)?;
        let y_proj = branch.op.project(y);
        let gamma = self.power.gammas()[channel - 1];
        let gain = refit_gain(&branch.a_proj, &y_proj, gamma, geom, &angles)?;
        let d = estimate_distance(&(upa_response(geom, angles.omega_x, angles.omega_z) * gain), geom.len(), &self.deployment.pathloss)?;
        let theta = self.deployment.hemispheres()[channel - 1].unfold(angles.theta_folded);
        let link_hat = LinkGeometry::new(theta, angles.phi, d)?;

        let fit = &y_proj - &branch.a_proj * &sol.h * Complex64::new(self.power.gammas()[channel - 1], 0.0);
        let fit_residual = if y_proj.norm() > 0.0 { fit.norm() / y_proj.norm() } else { 0.0 };

        Ok(ChannelEstimate {
            h_hat: sol.h,
            link_hat,
            angles,
            converged: sol.converged,
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            fit_residual,
        })
    }

    /// Estimate both MS positions from a stacked observation with noise
    /// variance `sigma2`.
    pub fn localize_raw(&self, y: &DVector<Complex64>, sigma2: f64) -> Result<Localization> {
        if y.len() != self.matrices.a1.nrows() {
            return Err(LocError::DimensionMismatch(format!(
                "observation length {} vs {}",
                y.len(),
                self.matrices.a1.nrows()
            )));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(LocError::InvalidNoise(sigma2));
        }
        let channels = [1, 2, 3].map(|i| self.estimate_channel(i, y, sigma2));
        let dep = &self.deployment;
        let (p_u1, outdoor_single_branch) = match (&channels[0], &channels[1]) {
            (Ok(c1), Ok(c2)) => {
                let blended = map_outdoor_weighted(&dep.p_b, &dep.p_r, &c1.link_hat, &c2.link_hat);
                let p = match self.fusion {
                    OutdoorFusion::PathLossWeighted => blended,
                    OutdoorFusion::WeightedLeastSquares => {
                        self.fuse_branches(c1, c2, sigma2, blended).unwrap_or(blended)
                    }
                };
                (Some(p), None)
            }
            (Ok(c1), Err(_)) => (Some(branch_point(&dep.p_b, &c1.link_hat)), Some(1)),
            (Err(_), Ok(c2)) => (Some(branch_point(&dep.p_r, &c2.link_hat)), Some(2)),
            (Err(_), Err(_)) => (None, None),
        };
        let p_u2 = channels[2].as_ref().ok().map(|c3| map_indoor(&dep.p_r, &c3.link_hat));
        Ok(Localization { p_u1, p_u2, channels, outdoor_single_branch })
    }

    fn fuse_branches(
        &self,
        c1: &ChannelEstimate,
        c2: &ChannelEstimate,
        sigma2: f64,
        initial: Position3D,
    ) -> Result<Position3D> {
        let dep = &self.deployment;
        let gammas = self.power.gammas();
        let mut measurements = Vec::with_capacity(2);
        for (channel, est) in [(1, c1), (2, c2)] {
            let branch = self.branches[channel - 1].as_ref().map_err(Clone::clone)?;
            let covariance = branch_covariance(
                &branch.a_proj,
                gammas[channel - 1],
                sigma2,
                dep.array(channel),
                dep.wavelength,
                &dep.pathloss,
                &est.link_hat,
            )?;
            measurements.push(BranchMeasurement { anchor: *dep.anchor(channel), link: est.link_hat, covariance });
        }
        fuse_outdoor(&measurements, initial)
    }

    pub fn localize(&self, obs: &ObservationBundle) -> Result<Localization> {
        if obs.matrices.a1.nrows() != self.matrices.a1.nrows() {
            return Err(LocError::DimensionMismatch("observation built for a different schedule".into()));
        }
        self.localize_raw(&obs.y, obs.sigma2)
    }
}

/// Least-squares complex gain of the recovered atom against the nulled
/// observation. ANM shrinks the channel norm; refitting the gain on the
/// atom support removes that bias before the distance is read off.
fn refit_gain(
    a_proj: &DMatrix<Complex64>,
    y_proj: &DVector<Complex64>,
    gamma: f64,
    geom: &ArrayGeometry,
    angles: &AngleEstimate,
) -> Result<Complex64> {
    let atom = a_proj * upa_response(geom, angles.omega_x, angles.omega_z) * Complex64::new(gamma, 0.0);
    let energy = atom.norm_squared();
    if !(energy > 0.0) {
        return Err(LocError::ZeroChannel);
    }
    Ok(atom.dotc(y_proj) / energy)
}

fn branch_point(anchor: &Position3D, link: &LinkGeometry) -> Position3D {
    Position3D::from_vector(anchor.to_vector() + link.d * direction_vector(link))
}

/// One-shot localization; builds a [`Localizer`] for the observation.
pub fn localize(
    obs: &ObservationBundle,
    deployment: &Deployment,
    h4_assumed: &RisBsChannel,
    schedule: &PhaseSchedule,
    cfg: &AnmConfig,
) -> Result<Localization> {
    Localizer::new(deployment.clone(), h4_assumed, schedule, obs.power, *cfg)?.localize(obs)
}
