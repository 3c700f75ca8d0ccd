//! Experiment orchestration: configuration, sweeps and CSV output.

pub mod config;
pub mod sweep;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub use config::{default_snr_grid, fmt_f64, ExperimentConfig, PathLossKind, Profile};
pub use sweep::{
    noise_variance, run_crlb_sweep, run_design_study, run_imperfect_h4_study, run_monte_carlo, run_mpc_study, PointDiagnostics,
    Sweep, SweepOptions, SweepRow,
};

pub const CSV_HEADER: &str = "snr_db,crlb_rmse_u1,crlb_rmse_u2,est_rmse_u1,est_rmse_u2,trials_ok,config_hash";

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// CSV text of one sweep; missing values are empty fields.
pub fn to_csv(sweep: &Sweep) -> String {
    let mut out = String::with_capacity(64 * (sweep.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &sweep.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(r.snr_db),
            opt(r.crlb_rmse_u1),
            opt(r.crlb_rmse_u2),
            opt(r.est_rmse_u1),
            opt(r.est_rmse_u2),
            r.trials_ok,
            r.config_hash
        ));
    }
    out
}

pub fn write_csv(path: &Path, sweep: &Sweep) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(to_csv(sweep).as_bytes())
}

/// Output path of one sweep of a multi-sweep study: `<stem>_<label>.<ext>`
/// next to `out`.
pub fn sweep_path(out: &Path, label: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}_{label}.{ext}"))
}
