//! SNR sweeps: CRLB evaluation and Monte-Carlo localization, plus the
//! paired studies built from them.

use std::sync::Arc;

use rayon::prelude::*;

use crate::channel::{add_mpc, los_channel, ris_bs_channel, ChannelVector, MpcCase, RisBsChannel};
use crate::error::{LocError, Result};
use crate::estimator::{AnmConfig, Deployment, Localizer, OutdoorFusion};
use crate::fisher::{crlb_report, principal_angle_ratio, CrlbReport};
use crate::harness::config::ExperimentConfig;
use crate::scenario::Scenario;
use crate::signal::{
    build_measurement_matrices, perturb_h4_with_rng, synthesize_with_rng, trial_rng, H4Perturbation, MeasurementMatrices,
    H4_STREAM, NOISE_STREAM,
};
use crate::star_ris::{dft_design, random_design, PhaseSchedule, PowerConfig, ScheduleKind};

/// One CSV row plus diagnostics that stay in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub crlb_rmse_u1: Option<f64>,
    pub crlb_rmse_u2: Option<f64>,
    pub est_rmse_u1: Option<f64>,
    pub est_rmse_u2: Option<f64>,
    pub trials_ok: usize,
    pub config_hash: String,
    pub diagnostics: PointDiagnostics,
}

impl SweepRow {
    /// A point is flagged when its bound is unavailable or, for estimation
    /// sweeps, no trial succeeded.
    pub fn flagged(&self) -> bool {
        self.crlb_rmse_u1.is_none() || (self.diagnostics.trials > 0 && self.trials_ok == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointDiagnostics {
    /// Trials attempted; zero for bound-only sweeps.
    pub trials: usize,
    /// Trials with a position for both MSs but at least one unconverged solve.
    pub unconverged: usize,
    /// Trials that produced no position for at least one MS.
    pub failed: usize,
    /// Trials where the outdoor position used a single branch.
    pub single_branch: usize,
    /// Trials with a rank-one mismatch warning on any channel.
    pub rank_warnings: usize,
    /// Mean over trials of the largest `σ₂/σ₁` among the three channels.
    pub mean_rank_ratio: f64,
    /// Position errors of the successful trials, in trial order.
    pub errors_u1: Vec<f64>,
    pub errors_u2: Vec<f64>,
    /// Reason the bound is missing, if it is.
    pub crlb_error: Option<String>,
}

impl PointDiagnostics {
    pub fn median_u1(&self) -> Option<f64> {
        median(&self.errors_u1)
    }

    pub fn median_u2(&self) -> Option<f64> {
        median(&self.errors_u2)
    }

    pub fn mean_u1(&self) -> Option<f64> {
        mean(&self.errors_u1)
    }

    pub fn mean_u2(&self) -> Option<f64> {
        mean(&self.errors_u2)
    }
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn rms(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt())
}

/// A labelled sweep with its configuration hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub label: String,
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
    /// `‖Ĝ₂ᴴĜ₁‖_F / (‖Ĝ₁‖_F‖Ĝ₂‖_F)` of the schedule used.
    pub principal_angle: Option<f64>,
}

impl Sweep {
    pub fn all_flagged(&self) -> bool {
        self.rows.iter().all(SweepRow::flagged)
    }
}

/// Noise variance for unit transmit power at `snr_db`.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn build_schedule(cfg: &ExperimentConfig) -> Result<PhaseSchedule> {
    match cfg.schedule {
        ScheduleKind::Dft => dft_design(cfg.n, cfg.k),
        ScheduleKind::Random => Ok(random_design(cfg.n, cfg.k, cfg.seed)),
    }
}

pub fn true_h4(s: &Scenario) -> Result<RisBsChannel> {
    Ok(ris_bs_channel(&s.bs_array, &s.ris_array, &s.ris_link()?, &s.pathloss, s.wavelength()))
}

/// The three MS channels, with the configured multipath added.
pub fn ms_channels(s: &Scenario, mpc: MpcCase) -> Result<[ChannelVector; 3]> {
    let lambda = s.wavelength();
    let links = s.ms_links()?;
    let comps = mpc.components();
    let mut out = Vec::with_capacity(3);
    for (i, link) in links.iter().enumerate() {
        let geom = if i == 0 { &s.bs_array } else { &s.ris_array };
        let los = los_channel(geom, link, &s.pathloss, lambda);
        out.push(add_mpc(&los, link, &comps, geom, &s.pathloss, lambda)?);
    }
    let [a, b, c]: [ChannelVector; 3] = out.try_into().expect("three links");
    Ok([a, b, c])
}

/// Everything that stays fixed across the SNR grid of one sweep.
struct Setup {
    scenario: Scenario,
    power: PowerConfig,
    schedule: PhaseSchedule,
    matrices: Arc<MeasurementMatrices>,
    channels: [ChannelVector; 3],
    perturbation: H4Perturbation,
    /// Localizer built on the true H₄, shared when there is no perturbation.
    localizer: Localizer,
    anm: AnmConfig,
    fusion: OutdoorFusion,
}

impl Setup {
    fn new(cfg: &ExperimentConfig, perturbation: H4Perturbation, anm: AnmConfig, fusion: OutdoorFusion) -> Result<Self> {
        cfg.validate()?;
        let scenario = cfg.scenario();
        let power = cfg.power()?;
        let schedule = build_schedule(cfg)?;
        let h4 = true_h4(&scenario)?;
        let matrices = Arc::new(build_measurement_matrices(&h4, &schedule)?);
        let channels = ms_channels(&scenario, cfg.mpc_case)?;
        let localizer =
            Localizer::new(Deployment::from_scenario(&scenario), &h4, &schedule, power, anm)?.with_fusion(fusion);
        Ok(Self { scenario, power, schedule, matrices, channels, perturbation, localizer, anm, fusion })
    }

    fn crlb(&self, sigma2: f64) -> std::result::Result<CrlbReport, LocError> {
        crlb_report(&self.scenario, &self.matrices, &self.power, sigma2)
    }

    /// Localizer for one trial: the shared one, or one built on a perturbed
    /// H₄ drawn from the trial's H₄ stream.
    fn trial_localizer(&self, seed: u64, trial: u64) -> Result<Option<Localizer>> {
        if self.perturbation.is_identity() {
            return Ok(None);
        }
        let mut rng = trial_rng(seed, trial, H4_STREAM);
        let link4 = perturb_h4_with_rng(&self.scenario.ris_link()?, &self.perturbation, &mut rng)?;
        let s = &self.scenario;
        let h4 = ris_bs_channel(&s.bs_array, &s.ris_array, &link4, &s.pathloss, s.wavelength());
        Ok(Some(
            Localizer::new(Deployment::from_scenario(s), &h4, &self.schedule, self.power, self.anm)?.with_fusion(self.fusion),
        ))
    }
}

#[derive(Debug, Clone)]
enum TrialOutcome {
    Ok { e1: f64, e2: f64, converged: bool, single_branch: bool, rank_warning: bool, rank_ratio: f64 },
    Failed { rank_ratio: f64 },
}

fn run_trial(setup: &Setup, seed: u64, trial: u64, sigma2: f64) -> TrialOutcome {
    let attempt = || -> Result<TrialOutcome> {
        let own = setup.trial_localizer(seed, trial)?;
        let localizer = own.as_ref().unwrap_or(&setup.localizer);
        let mut rng = trial_rng(seed, trial, NOISE_STREAM);
        let [h1, h2, h3] = &setup.channels;
        let obs = synthesize_with_rng(setup.matrices.clone(), h1, h2, h3, &setup.power, sigma2, &mut rng)?;
        let out = localizer.localize_raw(&obs.y, sigma2)?;
        let rank_ratio = out.max_rank_ratio();
        Ok(match (out.p_u1, out.p_u2) {
            (Some(p1), Some(p2)) => TrialOutcome::Ok {
                e1: p1.distance(&setup.scenario.p_u1),
                e2: p2.distance(&setup.scenario.p_u2),
                converged: out.all_converged(),
                single_branch: out.outdoor_single_branch.is_some(),
                rank_warning: out.any_rank_warning(),
                rank_ratio,
            },
            _ => TrialOutcome::Failed { rank_ratio },
        })
    };
    attempt().unwrap_or(TrialOutcome::Failed { rank_ratio: 0.0 })
}

/// Knobs of a sweep that are not part of the configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOptions {
    pub anm: AnmConfig,
    pub fusion: OutdoorFusion,
}

fn sweep_points(
    cfg: &ExperimentConfig,
    perturbation: H4Perturbation,
    estimate: bool,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    let setup = Setup::new(cfg, perturbation, opts.anm, opts.fusion)?;
    let hash = cfg.hash();
    let mut rows = Vec::with_capacity(cfg.snr_db_list.len());
    for &snr_db in &cfg.snr_db_list {
        let sigma2 = noise_variance(snr_db);
        let mut diagnostics = PointDiagnostics::default();
        let (crlb_rmse_u1, crlb_rmse_u2) = match setup.crlb(sigma2) {
            Ok(r) => (Some(r.rmse_u1), Some(r.rmse_u2)),
            Err(e) => {
                diagnostics.crlb_error = Some(e.to_string());
                (None, None)
            }
        };
        let (mut est_rmse_u1, mut est_rmse_u2, mut trials_ok) = (None, None, 0);
        if estimate {
            // Results come back in trial order whatever the pool size.
            let outcomes: Vec<TrialOutcome> = (0..cfg.trials as u64)
                .into_par_iter()
                .map(|t| run_trial(&setup, cfg.seed, t, sigma2))
                .collect();
            diagnostics.trials = outcomes.len();
            let mut ratio_sum = 0.0;
            for o in &outcomes {
                match *o {
                    TrialOutcome::Ok { e1, e2, converged, single_branch, rank_warning, rank_ratio } => {
                        ratio_sum += rank_ratio;
                        diagnostics.single_branch += usize::from(single_branch);
                        diagnostics.rank_warnings += usize::from(rank_warning);
                        if converged {
                            diagnostics.errors_u1.push(e1);
                            diagnostics.errors_u2.push(e2);
                        } else {
                            diagnostics.unconverged += 1;
                        }
                    }
                    TrialOutcome::Failed { rank_ratio } => {
                        ratio_sum += rank_ratio;
                        diagnostics.failed += 1;
                    }
                }
            }
            diagnostics.mean_rank_ratio = ratio_sum / outcomes.len().max(1) as f64;
            trials_ok = diagnostics.errors_u1.len();
            est_rmse_u1 = rms(&diagnostics.errors_u1);
            est_rmse_u2 = rms(&diagnostics.errors_u2);
        }
        rows.push(SweepRow {
            snr_db,
            crlb_rmse_u1,
            crlb_rmse_u2,
            est_rmse_u1,
            est_rmse_u2,
            trials_ok,
            config_hash: hash.clone(),
            diagnostics,
        });
    }
    Ok(rows)
}

fn principal_angle(cfg: &ExperimentConfig) -> Result<f64> {
    let s = cfg.scenario();
    let mm = build_measurement_matrices(&true_h4(&s)?, &build_schedule(cfg)?)?;
    principal_angle_ratio(&s, &mm, &cfg.power()?)
}

fn make_sweep(label: &str, cfg: &ExperimentConfig, rows: Vec<SweepRow>) -> Sweep {
    Sweep { label: label.to_string(), config_hash: cfg.hash(), rows, principal_angle: principal_angle(cfg).ok() }
}

/// Bounds only; deterministic for a fixed schedule.
pub fn run_crlb_sweep(cfg: &ExperimentConfig) -> Result<Sweep> {
    let rows = sweep_points(cfg, H4Perturbation::default(), false, &SweepOptions::default())?;
    Ok(make_sweep("crlb", cfg, rows))
}

pub fn run_monte_carlo(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<Sweep> {
    let rows = sweep_points(cfg, cfg.single_perturbation()?, true, opts)?;
    Ok(make_sweep("monte-carlo", cfg, rows))
}

/// DFT and random schedules with identical seeds.
pub fn run_design_study(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<Vec<Sweep>> {
    let perturbation = cfg.single_perturbation()?;
    let mut out = Vec::new();
    for kind in [ScheduleKind::Dft, ScheduleKind::Random] {
        let mut c = cfg.clone();
        c.schedule = kind;
        let rows = sweep_points(&c, perturbation, true, opts)?;
        out.push(make_sweep(kind.label(), &c, rows));
    }
    Ok(out)
}

/// Perfect H₄ baseline followed by each configured perturbation pair.
pub fn run_imperfect_h4_study(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<Vec<Sweep>> {
    let pairs = cfg.perturbation_pairs();
    let mut out = Vec::new();
    let mut base = cfg.clone();
    base.d_hat.clear();
    base.phi_hat.clear();
    out.push(make_sweep("baseline", &base, sweep_points(&base, H4Perturbation::default(), true, opts)?));
    for p in pairs {
        let mut c = cfg.clone();
        c.d_hat = vec![p.d_hat];
        c.phi_hat = vec![p.phi_hat];
        let label = format!("d{}-phi{}", p.d_hat, p.phi_hat);
        out.push(make_sweep(&label, &c, sweep_points(&c, p, true, opts)?));
    }
    Ok(out)
}

/// LoS only, case i and case ii multipath.
pub fn run_mpc_study(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<Vec<Sweep>> {
    let perturbation = cfg.single_perturbation()?;
    let mut out = Vec::new();
    for case in [MpcCase::LosOnly, MpcCase::CaseI, MpcCase::CaseII] {
        let mut c = cfg.clone();
        c.mpc_case = case;
        out.push(make_sweep(case.label(), &c, sweep_points(&c, perturbation, true, opts)?));
    }
    Ok(out)
}
