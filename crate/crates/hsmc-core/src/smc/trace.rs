use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One row per sampler iteration: the move phase (if any) followed by the
/// temperature step. The terminal diversification pass at lambda = 1 adds a
/// final move-only row with a zero increment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub lambda: f64,
    pub ess: f64,
    pub resampled: bool,
    pub move_steps: usize,
    pub mean_accept: Option<f64>,
    pub logz_inc: f64,
    pub logz_cum: f64,
    pub lik_evals: u64,
    pub grad_evals: u64,
    pub esjd_mass: Option<f64>,
    pub esjd_euclid: Option<f64>,
    pub eps_q10: Option<f64>,
    pub eps_q50: Option<f64>,
    pub eps_q90: Option<f64>,
    pub l_q10: Option<f64>,
    pub l_q50: Option<f64>,
    pub l_q90: Option<f64>,
    pub eps_star: Option<f64>,
    pub l_max: Option<usize>,
    pub hit_max_steps: bool,
    /// Wall-clock seconds of the iteration; excluded from determinism
    /// comparisons.
    pub wall_s: f64,
}

/// Complete record of one sampler run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    pub n_particles: usize,
    pub dim: usize,
    pub rows: Vec<TraceRow>,
    pub log_z: f64,
    pub posterior_mean: Vec<f64>,
    pub posterior_var: Vec<f64>,
    pub mode_proportion: f64,
    pub esjd_final_mass: f64,
    pub esjd_final_euclid: f64,
    pub final_ess: f64,
    /// Temperature steps taken (rows that advanced lambda).
    pub n_steps: usize,
    pub mean_move_steps: f64,
    pub mean_accept: f64,
    pub lik_evals: u64,
    pub grad_evals: u64,
    pub warnings: Vec<String>,
}

impl RunTrace {
    pub fn load(&self) -> u64 {
        self.lik_evals + self.grad_evals
    }

    /// CSV with one row per iteration.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "t",
            "lambda",
            "ess",
            "resampled",
            "move_steps",
            "mean_accept",
            "logz_inc",
            "logz_cum",
            "lik_evals",
            "grad_evals",
            "esjd_mass",
            "esjd_euclid",
            "eps_q10",
            "eps_q50",
            "eps_q90",
            "l_q10",
            "l_q50",
            "l_q90",
            "eps_star",
            "l_max",
            "hit_max_steps",
            "wall_s",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                fmt_f64(r.lambda),
                fmt_f64(r.ess),
                r.resampled.to_string(),
                r.move_steps.to_string(),
                fmt_opt(r.mean_accept),
                fmt_f64(r.logz_inc),
                fmt_f64(r.logz_cum),
                r.lik_evals.to_string(),
                r.grad_evals.to_string(),
                fmt_opt(r.esjd_mass),
                fmt_opt(r.esjd_euclid),
                fmt_opt(r.eps_q10),
                fmt_opt(r.eps_q50),
                fmt_opt(r.eps_q90),
                fmt_opt(r.l_q10),
                fmt_opt(r.l_q50),
                fmt_opt(r.l_q90),
                fmt_opt(r.eps_star),
                r.l_max.map(|v| v.to_string()).unwrap_or_default(),
                r.hit_max_steps.to_string(),
                fmt_f64(r.wall_s),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| {
            crate::error::Error::Config(format!("csv buffer flush failed: {e}"))
        })?;
        write_atomic(path.as_ref(), &bytes)
    }

    /// JSON summary of the run (everything except the per-step rows).
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "n_particles": self.n_particles,
            "dim": self.dim,
            "log_z": self.log_z,
            "posterior_mean": self.posterior_mean,
            "posterior_var": self.posterior_var,
            "mode_proportion": self.mode_proportion,
            "esjd_final_mass": self.esjd_final_mass,
            "esjd_final_euclid": self.esjd_final_euclid,
            "final_ess": self.final_ess,
            "n_steps": self.n_steps,
            "mean_move_steps": self.mean_move_steps,
            "mean_accept": self.mean_accept,
            "lik_evals": self.lik_evals,
            "grad_evals": self.grad_evals,
            "warnings": self.warnings,
        })
    }
}

/// Shortest round-trip decimal form; parses back to the identical bits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Write via a temporary sibling and rename, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
