//! Deployment description: node positions, array sizes, carrier and path loss.

use crate::channel::{ArrayGeometry, PathLossModel};
use crate::error::{LocError, Result};
use crate::geometry::{link_from_positions, Hemisphere, LinkGeometry, Position3D};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const DEFAULT_FC_GHZ: f64 = 28.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub p_b: Position3D,
    pub p_r: Position3D,
    /// Outdoor MS.
    pub p_u1: Position3D,
    /// Indoor MS.
    pub p_u2: Position3D,
    pub fc_ghz: f64,
    pub bs_array: ArrayGeometry,
    pub ris_array: ArrayGeometry,
    pub pathloss: PathLossModel,
}

impl Scenario {
    /// Reference deployment: BS (0,0,8), RIS (2,2,5), outdoor MS (5,1,2),
    /// indoor MS (1,5,2), 4×4 BS array and 6×6 STAR-RIS.
    pub fn reference() -> Self {
        Self::with_arrays(4, 4, 6, 6)
    }

    /// Same positions with a 4×4 STAR-RIS, small enough for fast Monte-Carlo.
    pub fn desk() -> Self {
        Self::with_arrays(4, 4, 4, 4)
    }

    pub fn with_arrays(bs_nx: usize, bs_nz: usize, ris_nx: usize, ris_nz: usize) -> Self {
        let lambda = wavelength(DEFAULT_FC_GHZ);
        Self {
            p_b: Position3D::new(0.0, 0.0, 8.0),
            p_r: Position3D::new(2.0, 2.0, 5.0),
            p_u1: Position3D::new(5.0, 1.0, 2.0),
            p_u2: Position3D::new(1.0, 5.0, 2.0),
            fc_ghz: DEFAULT_FC_GHZ,
            bs_array: ArrayGeometry::half_wavelength(bs_nx, bs_nz, lambda),
            ris_array: ArrayGeometry::half_wavelength(ris_nx, ris_nz, lambda),
            pathloss: PathLossModel::SquaredDistance,
        }
    }

    pub fn wavelength(&self) -> f64 {
        wavelength(self.fc_ghz)
    }

    /// Number of BS antennas `M`.
    pub fn m(&self) -> usize {
        self.bs_array.len()
    }

    /// Number of STAR-RIS elements `N`.
    pub fn n(&self) -> usize {
        self.ris_array.len()
    }

    /// Links 1..3: outdoor MS seen from the BS, outdoor MS seen from the
    /// RIS, indoor MS seen from the RIS.
    pub fn ms_links(&self) -> Result<[LinkGeometry; 3]> {
        Ok([
            link_from_positions(&self.p_b, &self.p_u1)?,
            link_from_positions(&self.p_r, &self.p_u1)?,
            link_from_positions(&self.p_r, &self.p_u2)?,
        ])
    }

    /// Link 4: RIS seen from the BS.
    pub fn ris_link(&self) -> Result<LinkGeometry> {
        link_from_positions(&self.p_b, &self.p_r)
    }

    /// Side of each receiving array on which the MS of links 1..3 sits.
    ///
    /// Derived from anchor positions only: the BS array faces the RIS wall,
    /// the reflected MS shares the BS side of the wall and the refracted MS
    /// is on the other side.
    pub fn hemispheres(&self) -> [Hemisphere; 3] {
        let bs_side = Hemisphere::of(&self.p_r, &self.p_b);
        [Hemisphere::of(&self.p_b, &self.p_r), bs_side, bs_side.opposite()]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_b", self.p_b), ("p_r", self.p_r), ("p_u1", self.p_u1), ("p_u2", self.p_u2)] {
            if !p.is_finite() {
                return Err(LocError::Config(format!("{name} is not finite")));
            }
        }
        if !(self.fc_ghz.is_finite() && self.fc_ghz > 0.0) {
            return Err(LocError::Config(format!("carrier {} GHz must be positive", self.fc_ghz)));
        }
        self.bs_array.validate()?;
        self.ris_array.validate()?;
        self.pathloss.validate()?;
        self.ms_links()?;
        self.ris_link()?;
        Ok(())
    }
}

pub fn wavelength(fc_ghz: f64) -> f64 {
    SPEED_OF_LIGHT / (fc_ghz * 1e9)
}

/// Factor a total element count into a near-square `(nx, nz)` grid.
pub fn square_grid(total: usize) -> (usize, usize) {
    let mut nz = (total as f64).sqrt().floor() as usize;
    while nz > 1 && !total.is_multiple_of(nz) {
        nz -= 1;
    }
    let nz = nz.max(1);
    (total / nz, nz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sides() {
        let s = Scenario::reference();
        assert_eq!(
            s.hemispheres(),
            [Hemisphere::PositiveY, Hemisphere::NegativeY, Hemisphere::PositiveY]
        );
        let links = s.ms_links().unwrap();
        for (link, side) in links.iter().zip(s.hemispheres()) {
            assert_eq!(link.hemisphere(), side);
        }
    }

    #[test]
    fn grid_factoring() {
        assert_eq!(square_grid(16), (4, 4));
        assert_eq!(square_grid(36), (6, 6));
        assert_eq!(square_grid(8), (4, 2));
        assert_eq!(square_grid(7), (7, 1));
        assert_eq!(square_grid(1), (1, 1));
    }

    #[test]
    fn default_carrier() {
        let s = Scenario::reference();
        assert!((s.wavelength() - 0.010_706_873_5).abs() < 1e-9);
        assert_eq!(s.m(), 16);
        assert_eq!(s.n(), 36);
    }
}
