//! The tempered SMC engine: reweighting, ESS-driven exponent selection,
//! conditional resampling, adaptive repeated move sweeps and
//! normalizing-constant accumulation.

mod adapt;
mod cloud;
mod mass;
mod resample;
mod temperature;
mod trace;

pub use adapt::{adaptive_move, MoveReport, SweepStats};
pub use cloud::ParticleCloud;
pub use mass::{update_mass_matrix, MassMatrix, VARIANCE_FLOOR};
pub use resample::{resample, ResampleScheme};
pub use temperature::{ess, next_temperature, reweight, TemperatureLadder, BISECT_TOL};
pub use trace::{fmt_f64, write_atomic, RunTrace, TraceRow};

use crate::error::{Error, Result};
use crate::kernels::{kernel_step, KernelKind, KernelParams};
use crate::models::{build_model, ModelSpec, TemperedTarget};
use crate::numeric::quantile;
use crate::rng::{stream, Phase};
use crate::tuning::{
    ft_update, init_population, pr_pretune, scale_pretune, ParamPopulation, TuningConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunerKind {
    /// Utility-weighted resample-and-perturb of the parameter population.
    Ft,
    /// Pre-tuning pass at every temperature.
    Pr,
    /// Keep the initial parameter population unchanged.
    Fixed,
}

impl TunerKind {
    pub fn name(self) -> &'static str {
        match self {
            TunerKind::Ft => "ft",
            TunerKind::Pr => "pr",
            TunerKind::Fixed => "fixed",
        }
    }
}

/// When to replace the weighted cloud by an equally weighted resample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResampleTrigger {
    /// Resample when ESS < fraction * N.
    EssFraction(f64),
    /// "always": resample at every temperature step.
    Mode(String),
}

impl Default for ResampleTrigger {
    fn default() -> Self {
        ResampleTrigger::EssFraction(0.5)
    }
}

impl ResampleTrigger {
    fn validate(&self) -> Result<()> {
        match self {
            ResampleTrigger::EssFraction(f) if *f > 0.0 && *f <= 1.0 => Ok(()),
            ResampleTrigger::EssFraction(f) => Err(Error::Config(format!(
                "resample_trigger fraction {f} outside (0, 1]"
            ))),
            ResampleTrigger::Mode(m) if m == "always" => Ok(()),
            ResampleTrigger::Mode(m) => Err(Error::Config(format!(
                "unknown resample_trigger '{m}' (use a fraction or \"always\")"
            ))),
        }
    }

    fn fires(&self, ess: f64, n: usize) -> bool {
        match self {
            ResampleTrigger::EssFraction(f) => ess < f * n as f64,
            ResampleTrigger::Mode(_) => true,
        }
    }
}

fn default_n() -> usize {
    1024
}
fn default_alpha() -> f64 {
    0.9
}
fn default_alpha_prime() -> f64 {
    0.1
}
fn default_max_move_steps() -> usize {
    50
}

/// Full sampler configuration; serialized as the JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub model: ModelSpec,
    pub kernel: KernelKind,
    pub tuner: TunerKind,
    #[serde(default = "default_n")]
    pub n: usize,
    /// ESS fraction targeted by the exponent search.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Autocorrelation-product threshold of the move-step rule.
    #[serde(default = "default_alpha_prime")]
    pub alpha_prime: f64,
    #[serde(default = "default_max_move_steps")]
    pub max_move_steps: usize,
    #[serde(default)]
    pub resample_trigger: ResampleTrigger,
    #[serde(default)]
    pub resampling: ResampleScheme,
    #[serde(default)]
    pub seed: u64,
    /// Explicit exponent ladder for non-adaptive-temperature baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_ladder: Option<Vec<f64>>,
    /// Fixed number of move sweeps per temperature (disables the
    /// autocorrelation stopping rule).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_move_count: Option<usize>,
    #[serde(default)]
    pub tuning: TuningConfig,
}

impl SamplerConfig {
    pub fn new(model: ModelSpec, kernel: KernelKind, tuner: TunerKind, n: usize, seed: u64) -> Self {
        Self {
            model,
            kernel,
            tuner,
            n,
            alpha: default_alpha(),
            alpha_prime: default_alpha_prime(),
            max_move_steps: default_max_move_steps(),
            resample_trigger: ResampleTrigger::default(),
            resampling: ResampleScheme::default(),
            seed,
            fixed_ladder: None,
            fixed_move_count: None,
            tuning: TuningConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n = {} is below 2", self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.alpha_prime <= 0.0 {
            return Err(Error::Config("alpha_prime must be positive".into()));
        }
        if self.max_move_steps < 1 {
            return Err(Error::Config("max_move_steps must be at least 1".into()));
        }
        self.resample_trigger.validate()?;
        if let Some(ladder) = &self.fixed_ladder {
            TemperatureLadder::new(ladder.clone())?;
        }
        if self.fixed_move_count == Some(0) {
            return Err(Error::Config("fixed_move_count must be at least 1".into()));
        }
        if self.tuning.lmax_init < 1 || self.tuning.eps_init_hi <= 0.0 || self.tuning.scale_init_hi <= 0.0
        {
            return Err(Error::Config("tuning initialization ranges must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one move phase (tuning plus adaptive sweeps).
struct PhaseOutcome {
    report: MoveReport,
    eps_q: [f64; 3],
    l_q: Option<[f64; 3]>,
    eps_star: f64,
    l_max: usize,
    warnings: Vec<String>,
}

struct Engine<'a> {
    cfg: &'a SamplerConfig,
    target: &'a TemperedTarget,
    pop: ParamPopulation,
    have_utilities: bool,
}

impl<'a> Engine<'a> {
    /// One kernel sweep over the cloud; data-parallel across particles with
    /// per-particle streams addressed by (t, sweep, particle).
    fn sweep(
        &self,
        cloud: &mut ParticleCloud,
        mass: &MassMatrix,
        lambda: f64,
        t: u64,
        k: u64,
    ) -> Result<SweepStats> {
        let n = cloud.len();
        let rows: Vec<_> = cloud.positions.rows().into_iter().collect();
        let outcomes = rows
            .into_par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = stream(self.cfg.seed, Phase::Move, t, k, i as u64);
                kernel_step(
                    x,
                    &self.pop.params[i],
                    self.cfg.kernel,
                    lambda,
                    self.target,
                    mass,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut stats = SweepStats {
            utilities: Vec::with_capacity(n),
            ..Default::default()
        };
        let mut accepted = 0usize;
        for (i, out) in outcomes.iter().enumerate() {
            let x_prev = cloud.positions.row(i).to_owned();
            stats.esjd_mass += mass.mahalanobis_sq(&x_prev, &out.new_position);
            stats.esjd_euclid += x_prev
                .iter()
                .zip(out.new_position.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            stats.utilities.push(crate::tuning::wsjd_utility(
                &x_prev,
                &out.proposal_position,
                self.pop.params[i].leapfrog_count(),
                out.delta_e,
                mass,
            ));
            accepted += out.accepted as usize;
            cloud.positions.row_mut(i).assign(&out.new_position);
            cloud.cached_loglik[i] = out.new_density.log_lik;
            cloud.cached_logprior[i] = out.new_density.log_prior;
        }
        stats.accept_rate = accepted as f64 / n as f64;
        stats.esjd_mass /= n as f64;
        stats.esjd_euclid /= n as f64;
        Ok(stats)
    }

    /// Tune the kernel parameters for the move phase at iteration `t`.
    fn tune(
        &mut self,
        cloud: &ParticleCloud,
        mass: &MassMatrix,
        lambda: f64,
        t: u64,
    ) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        match self.cfg.tuner {
            TunerKind::Fixed => {}
            TunerKind::Pr => {
                let report = match self.cfg.kernel {
                    KernelKind::Hmc => pr_pretune(
                        cloud,
                        lambda,
                        self.target,
                        mass,
                        self.pop.eps_star,
                        self.pop.l_max,
                        &self.cfg.tuning,
                        self.cfg.seed,
                        t,
                    )?,
                    kind => scale_pretune(
                        cloud,
                        lambda,
                        self.target,
                        mass,
                        kind,
                        self.pop.eps_star,
                        &self.cfg.tuning,
                        self.cfg.seed,
                        t,
                    )?,
                };
                if report.fallback {
                    warnings.push(format!("t={t}: pretune solve fell back to halving eps*"));
                }
                if report.degenerate_utilities {
                    warnings.push(format!("t={t}: all pretune utilities zero, uniform resample"));
                }
                self.pop = report.population;
            }
            TunerKind::Ft => {
                // The first move phase has no utilities yet; keep the
                // initialization population untouched.
                if self.have_utilities {
                    let mut rng = stream(self.cfg.seed, Phase::TunerResample, t, 0, 0);
                    let (pop, degenerate) = ft_update(&self.pop, &self.cfg.tuning, &mut rng);
                    if degenerate {
                        warnings.push(format!("t={t}: all utilities zero, uniform FT ancestors"));
                    }
                    self.pop = pop;
                }
            }
        }
        Ok(warnings)
    }

    /// Tune, then run the adaptive move sweeps targeting `lambda`.
    fn move_phase(
        &mut self,
        cloud: &mut ParticleCloud,
        lambda: f64,
        t: u64,
        keep_snapshots: bool,
    ) -> Result<PhaseOutcome> {
        let mass = update_mass_matrix(cloud)?;
        let mut warnings = self.tune(cloud, &mass, lambda, t)?;

        let report = {
            let engine: &Engine<'_> = self;
            let mass_ref = &mass;
            adaptive_move(
                cloud,
                self.cfg.alpha_prime,
                self.cfg.max_move_steps,
                self.cfg.fixed_move_count,
                keep_snapshots,
                |cloud, k| engine.sweep(cloud, mass_ref, lambda, t, k as u64),
            )?
        };
        if report.hit_max_steps {
            warnings.push(format!(
                "t={t}: move phase hit max_move_steps = {}",
                self.cfg.max_move_steps
            ));
        }
        self.pop.utilities = report.last_utilities.clone();
        self.have_utilities = true;

        let eps = self.pop.eps_values();
        let eps_q = [
            quantile(&eps, 0.1),
            quantile(&eps, 0.5),
            quantile(&eps, 0.9),
        ];
        let ls = self.pop.l_values();
        let l_q = if ls.is_empty() {
            None
        } else {
            let lf: Vec<f64> = ls.iter().map(|&l| l as f64).collect();
            Some([quantile(&lf, 0.1), quantile(&lf, 0.5), quantile(&lf, 0.9)])
        };
        Ok(PhaseOutcome {
            report,
            eps_q,
            l_q,
            eps_star: self.pop.eps_star,
            l_max: self.pop.l_max,
            warnings,
        })
    }
}

/// Run the tempered SMC sampler to completion.
///
/// The loop per iteration: (from the second iteration) refresh the mass
/// matrix, tune, move the particles with the kernel invariant for the
/// current exponent; then pick the next exponent, reweight, accumulate the
/// normalizing-constant increment, and resample when the trigger fires.
/// After the exponent reaches 1 a terminal move pass diversifies the final
/// cloud and provides the final-target jump distances.
pub fn run_sampler(config: &SamplerConfig, target: &TemperedTarget) -> Result<RunTrace> {
    config.validate()?;
    let n = config.n;
    let seed = config.seed;
    let ladder = config
        .fixed_ladder
        .as_ref()
        .map(|l| TemperatureLadder::new(l.clone()))
        .transpose()?;

    let mut rng_init = stream(seed, Phase::Init, 0, 0, 0);
    let mut cloud = ParticleCloud::from_prior(target, n, &mut rng_init)
        .map_err(|e| e.with_context("initialization"))?;
    let mut engine = Engine {
        cfg: config,
        target,
        pop: init_population(config.kernel, n, &config.tuning, seed),
        have_utilities: false,
    };

    let mut rows: Vec<TraceRow> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut lambda_prev = 0.0f64;
    let mut logz = 0.0f64;
    let mut t: usize = 1;
    let mut accept_phases: Vec<f64> = Vec::new();
    let mut steps_phases: Vec<f64> = Vec::new();

    loop {
        let clock = Instant::now();
        let phase = if t > 1 {
            let out = engine
                .move_phase(&mut cloud, lambda_prev, t as u64, false)
                .map_err(|e| e.with_context(format!("move phase at t={t}")))?;
            warnings.extend(out.warnings.iter().cloned());
            accept_phases.push(out.report.mean_accept);
            steps_phases.push(out.report.steps as f64);
            Some(out)
        } else {
            None
        };

        let lambda = match &ladder {
            Some(l) => l.lambdas[t.min(l.lambdas.len() - 1)],
            None => next_temperature(
                cloud.cached_loglik.as_slice().unwrap(),
                lambda_prev,
                config.alpha,
            )
            .map_err(|e| e.with_context(format!("exponent selection at t={t}")))?,
        };
        let inc = reweight(&mut cloud, lambda_prev, lambda);
        logz += inc;
        let ess_now = ess(cloud.log_weights.as_slice().unwrap())
            .map_err(|e| e.with_context(format!("ESS at t={t}")))?;
        let fire = config.resample_trigger.fires(ess_now, n);
        if fire {
            let mut rng = stream(seed, Phase::Resample, t as u64, 0, 0);
            resample(&mut cloud, config.resampling, &mut rng)
                .map_err(|e| e.with_context(format!("resampling at t={t}")))?;
        }

        rows.push(TraceRow {
            t,
            lambda,
            ess: ess_now,
            resampled: fire,
            move_steps: phase.as_ref().map_or(0, |p| p.report.steps),
            mean_accept: phase.as_ref().map(|p| p.report.mean_accept),
            logz_inc: inc,
            logz_cum: logz,
            lik_evals: target.counters().likelihood(),
            grad_evals: target.counters().gradient(),
            esjd_mass: phase.as_ref().map(|p| p.report.esjd_mass),
            esjd_euclid: phase.as_ref().map(|p| p.report.esjd_euclid),
            eps_q10: phase.as_ref().map(|p| p.eps_q[0]),
            eps_q50: phase.as_ref().map(|p| p.eps_q[1]),
            eps_q90: phase.as_ref().map(|p| p.eps_q[2]),
            l_q10: phase.as_ref().and_then(|p| p.l_q).map(|q| q[0]),
            l_q50: phase.as_ref().and_then(|p| p.l_q).map(|q| q[1]),
            l_q90: phase.as_ref().and_then(|p| p.l_q).map(|q| q[2]),
            eps_star: phase.as_ref().map(|p| p.eps_star),
            l_max: phase.as_ref().map(|p| p.l_max),
            hit_max_steps: phase.as_ref().is_some_and(|p| p.report.hit_max_steps),
            wall_s: clock.elapsed().as_secs_f64(),
        });

        lambda_prev = lambda;
        t += 1;
        if lambda_prev >= 1.0 {
            break;
        }
    }
    let n_steps = rows.len();

    // Terminal diversification pass at lambda = 1; no reweighting, so the
    // normalizing-constant telescope is untouched.
    let clock = Instant::now();
    let final_phase = engine
        .move_phase(&mut cloud, 1.0, t as u64, true)
        .map_err(|e| e.with_context("terminal move pass"))?;
    warnings.extend(final_phase.warnings.iter().cloned());
    accept_phases.push(final_phase.report.mean_accept);
    steps_phases.push(final_phase.report.steps as f64);
    let final_ess = ess(cloud.log_weights.as_slice().unwrap())?;
    rows.push(TraceRow {
        t,
        lambda: 1.0,
        ess: final_ess,
        resampled: false,
        move_steps: final_phase.report.steps,
        mean_accept: Some(final_phase.report.mean_accept),
        logz_inc: 0.0,
        logz_cum: logz,
        lik_evals: target.counters().likelihood(),
        grad_evals: target.counters().gradient(),
        esjd_mass: Some(final_phase.report.esjd_mass),
        esjd_euclid: Some(final_phase.report.esjd_euclid),
        eps_q10: Some(final_phase.eps_q[0]),
        eps_q50: Some(final_phase.eps_q[1]),
        eps_q90: Some(final_phase.eps_q[2]),
        l_q10: final_phase.l_q.map(|q| q[0]),
        l_q50: final_phase.l_q.map(|q| q[1]),
        l_q90: final_phase.l_q.map(|q| q[2]),
        eps_star: Some(final_phase.eps_star),
        l_max: Some(final_phase.l_max),
        hit_max_steps: final_phase.report.hit_max_steps,
        wall_s: clock.elapsed().as_secs_f64(),
    });

    let posterior_mean = cloud.weighted_mean()?;
    let posterior_var = cloud.weighted_var_diag()?;
    let mode_proportion = crate::bench::mode_proportion(&cloud);

    Ok(RunTrace {
        seed,
        n_particles: n,
        dim: target.dim(),
        rows,
        log_z: logz,
        posterior_mean: posterior_mean.to_vec(),
        posterior_var: posterior_var.to_vec(),
        mode_proportion,
        esjd_final_mass: final_phase.report.esjd_mass,
        esjd_final_euclid: final_phase.report.esjd_euclid,
        final_ess,
        n_steps,
        mean_move_steps: steps_phases.iter().sum::<f64>() / steps_phases.len() as f64,
        mean_accept: accept_phases.iter().sum::<f64>() / accept_phases.len() as f64,
        lik_evals: target.counters().likelihood(),
        grad_evals: target.counters().gradient(),
        warnings,
    })
}

/// Build the model named in the config and run the sampler.
pub fn run_from_config(config: &SamplerConfig) -> Result<RunTrace> {
    let target = build_model(&config.model)?;
    run_sampler(config, &target)
}
