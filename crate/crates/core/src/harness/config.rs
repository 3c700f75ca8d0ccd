//! Experiment configuration: profiles, the flat `key = value` file format
//! and the canonical form used for the configuration hash.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::channel::{ArrayGeometry, MpcCase, PathLossModel};
use crate::error::{LocError, Result};
use crate::geometry::Position3D;
use crate::scenario::{square_grid, wavelength, Scenario, DEFAULT_FC_GHZ};
use crate::signal::H4Perturbation;
use crate::star_ris::{PowerConfig, ScheduleKind};

/// Recognized configuration keys, in canonical order.
pub const KEYS: [&str; 18] = [
    "m",
    "n",
    "k",
    "snr_db_list",
    "eps1",
    "eta1",
    "schedule",
    "trials",
    "seed",
    "pathloss",
    "fc_ghz",
    "p_b",
    "p_r",
    "p_u1",
    "p_u2",
    "d_hat",
    "phi_hat",
    "mpc_case",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// M = 16, N = 16, K = 33: fast enough for repeated Monte-Carlo runs.
    #[default]
    Desk,
    /// M = 16, N = 36, K = 100.
    Paper,
}

impl FromStr for Profile {
    type Err = LocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(LocError::Config(format!("unknown profile '{other}' (expected desk or paper)"))),
        }
    }
}

/// Path-loss family; the carrier comes from `fc_ghz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathLossKind {
    #[default]
    Squared,
    FreeSpace,
    Umi,
}

impl PathLossKind {
    pub fn label(self) -> &'static str {
        match self {
            PathLossKind::Squared => "squared",
            PathLossKind::FreeSpace => "free-space",
            PathLossKind::Umi => "umi",
        }
    }

    pub fn model(self, fc_ghz: f64) -> PathLossModel {
        match self {
            PathLossKind::Squared => PathLossModel::SquaredDistance,
            PathLossKind::FreeSpace => PathLossModel::FreeSpace { fc_khz: fc_ghz * 1e6 },
            PathLossKind::Umi => PathLossModel::Umi3gpp { fc_ghz },
        }
    }
}

impl FromStr for PathLossKind {
    type Err = LocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(PathLossKind::Squared),
            "free-space" => Ok(PathLossKind::FreeSpace),
            "umi" => Ok(PathLossKind::Umi),
            other => Err(LocError::Config(format!("unknown pathloss '{other}' (expected squared, free-space or umi)"))),
        }
    }
}

fn parse_schedule(s: &str) -> Result<ScheduleKind> {
    match s {
        "dft" => Ok(ScheduleKind::Dft),
        "random" => Ok(ScheduleKind::Random),
        other => Err(LocError::Config(format!("unknown schedule '{other}' (expected dft or random)"))),
    }
}

fn parse_mpc(s: &str) -> Result<MpcCase> {
    match s {
        "los" => Ok(MpcCase::LosOnly),
        "case-i" => Ok(MpcCase::CaseI),
        "case-ii" => Ok(MpcCase::CaseII),
        other => Err(LocError::Config(format!("unknown mpc_case '{other}' (expected los, case-i or case-ii)"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// BS antennas, arranged as the most square grid.
    pub m: usize,
    /// STAR-RIS elements, arranged as the most square grid.
    pub n: usize,
    /// Training slots.
    pub k: usize,
    pub snr_db_list: Vec<f64>,
    pub eps1: f64,
    pub eta1: f64,
    pub schedule: ScheduleKind,
    pub trials: usize,
    pub seed: u64,
    pub pathloss: PathLossKind,
    pub fc_ghz: f64,
    pub p_b: Position3D,
    pub p_r: Position3D,
    pub p_u1: Position3D,
    pub p_u2: Position3D,
    /// Half-widths of the distance error on the assumed RIS→BS link.
    pub d_hat: Vec<f64>,
    /// Half-widths of the angle errors on the assumed RIS→BS link.
    pub phi_hat: Vec<f64>,
    pub mpc_case: MpcCase,
}

/// `-10, -5, …, 40` dB.
pub fn default_snr_grid() -> Vec<f64> {
    (0..=10).map(|i| -10.0 + 5.0 * i as f64).collect()
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let (n, k) = match profile {
            Profile::Desk => (16, 33),
            Profile::Paper => (36, 100),
        };
        let s = Scenario::reference();
        Self {
            m: 16,
            n,
            k,
            snr_db_list: default_snr_grid(),
            eps1: 0.9f64.sqrt(),
            eta1: 0.5f64.sqrt(),
            schedule: ScheduleKind::Dft,
            trials: 50,
            seed: 0,
            pathloss: PathLossKind::Squared,
            fc_ghz: DEFAULT_FC_GHZ,
            p_b: s.p_b,
            p_r: s.p_r,
            p_u1: s.p_u1,
            p_u2: s.p_u2,
            d_hat: Vec::new(),
            phi_hat: Vec::new(),
            mpc_case: MpcCase::LosOnly,
        }
    }

    /// Apply the `key = value` lines of `text` on top of `self`.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LocError::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| LocError::Config(format!("line {}: {}", lineno + 1, strip_prefix(e))))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_text(profile: Profile, text: &str) -> Result<Self> {
        Self::profile(profile).apply_text(text)
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "m" => self.m = parse_num(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "k" => self.k = parse_num(key, value)?,
            "snr_db_list" => self.snr_db_list = parse_list(key, value)?,
            "eps1" => self.eps1 = parse_num(key, value)?,
            "eta1" => self.eta1 = parse_num(key, value)?,
            "schedule" => self.schedule = parse_schedule(value)?,
            "trials" => self.trials = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "pathloss" => self.pathloss = value.parse()?,
            "fc_ghz" => self.fc_ghz = parse_num(key, value)?,
            "p_b" => self.p_b = parse_position(key, value)?,
            "p_r" => self.p_r = parse_position(key, value)?,
            "p_u1" => self.p_u1 = parse_position(key, value)?,
            "p_u2" => self.p_u2 = parse_position(key, value)?,
            "d_hat" => self.d_hat = parse_list(key, value)?,
            "phi_hat" => self.phi_hat = parse_list(key, value)?,
            "mpc_case" => self.mpc_case = parse_mpc(value)?,
            other => return Err(LocError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LocError::Config(msg));
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return bad(format!("m, n, k must be positive (got {}, {}, {})", self.m, self.n, self.k));
        }
        if self.schedule == ScheduleKind::Dft && self.k < 2 * self.n + 1 {
            return bad(format!("dft schedule needs k >= 2n+1 = {} (got k = {})", 2 * self.n + 1, self.k));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.snr_db_list.is_empty() {
            return bad("snr_db_list is empty".into());
        }
        if let Some(v) = self.snr_db_list.iter().find(|v| !v.is_finite()) {
            return bad(format!("snr_db_list contains {v}"));
        }
        if self.d_hat.len() != self.phi_hat.len() {
            return bad(format!(
                "d_hat has {} entries but phi_hat has {}",
                self.d_hat.len(),
                self.phi_hat.len()
            ));
        }
        if self.d_hat.iter().chain(&self.phi_hat).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("d_hat and phi_hat must be finite and non-negative".into());
        }
        PowerConfig::new(self.eps1, self.eta1, 1.0).map_err(|e| LocError::Config(strip_prefix(e)))?;
        self.scenario().validate().map_err(|e| LocError::Config(strip_prefix(e)))?;
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        let lambda = wavelength(self.fc_ghz);
        let (bx, bz) = square_grid(self.m);
        let (rx, rz) = square_grid(self.n);
        Scenario {
            p_b: self.p_b,
            p_r: self.p_r,
            p_u1: self.p_u1,
            p_u2: self.p_u2,
            fc_ghz: self.fc_ghz,
            bs_array: ArrayGeometry::half_wavelength(bx, bz, lambda),
            ris_array: ArrayGeometry::half_wavelength(rx, rz, lambda),
            pathloss: self.pathloss.model(self.fc_ghz),
        }
    }

    /// Unit-power split; the SNR sets the noise level.
    pub fn power(&self) -> Result<PowerConfig> {
        PowerConfig::new(self.eps1, self.eta1, 1.0)
    }

    /// The single H₄ perturbation used by sweeps other than the imperfect-H₄
    /// study: none when the lists are empty, the only pair otherwise.
    pub fn single_perturbation(&self) -> Result<H4Perturbation> {
        match self.d_hat.len() {
            0 => Ok(H4Perturbation::default()),
            1 => Ok(H4Perturbation { d_hat: self.d_hat[0], phi_hat: self.phi_hat[0] }),
            n => Err(LocError::Config(format!("this study takes one (d_hat, phi_hat) pair, got {n}"))),
        }
    }

    /// Pairs for the imperfect-H₄ study; `(0.5, 0.2)` and `(1, 0.4)` unless
    /// configured.
    pub fn perturbation_pairs(&self) -> Vec<H4Perturbation> {
        if self.d_hat.is_empty() {
            vec![H4Perturbation { d_hat: 0.5, phi_hat: 0.2 }, H4Perturbation { d_hat: 1.0, phi_hat: 0.4 }]
        } else {
            self.d_hat
                .iter()
                .zip(&self.phi_hat)
                .map(|(&d_hat, &phi_hat)| H4Perturbation { d_hat, phi_hat })
                .collect()
        }
    }

    /// One `key = value` line per key in [`KEYS`] order, floats in shortest
    /// round-trip form. Parsing the output reproduces `self`.
    pub fn canonical(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let pos = |p: &Position3D| format!("{},{},{}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z));
        let mpc = match self.mpc_case {
            MpcCase::LosOnly => "los",
            MpcCase::CaseI => "case-i",
            MpcCase::CaseII => "case-ii",
        };
        let values = [
            self.m.to_string(),
            self.n.to_string(),
            self.k.to_string(),
            list(&self.snr_db_list),
            fmt_f64(self.eps1),
            fmt_f64(self.eta1),
            self.schedule.label().to_string(),
            self.trials.to_string(),
            self.seed.to_string(),
            self.pathloss.label().to_string(),
            fmt_f64(self.fc_ghz),
            pos(&self.p_b),
            pos(&self.p_r),
            pos(&self.p_u1),
            pos(&self.p_u2),
            list(&self.d_hat),
            list(&self.phi_hat),
            mpc.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn strip_prefix(e: LocError) -> String {
    match e {
        LocError::Config(msg) => msg,
        other => other.to_string(),
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| LocError::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn parse_position(key: &str, value: &str) -> Result<Position3D> {
    let v = parse_list(key, value)?;
    if v.len() != 3 {
        return Err(LocError::Config(format!("{key}: expected three comma-separated coordinates")));
    }
    Ok(Position3D::new(v[0], v[1], v[2]))
}
