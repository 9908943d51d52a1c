//! Kernel-parameter adaptation: utility-weighted resample-and-perturb of
//! parameter populations (FT), and a per-temperature pre-tuning pass with
//! uniform exploration, median regression for the step-size bound and
//! utility-weighted categorical resampling (PR). Scale kernels (RW, MALA)
//! reuse both schemes with the leapfrog count pinned to 1.

mod median;

pub use median::{median_quadratic_fit, QuadraticFit};

use crate::error::{Error, Result};
use crate::kernels::{
    kernel_step, leapfrog, HmcParams, KernelKind, KernelParams, ScaleParams, DIVERGENCE_ABORT,
};
use crate::models::TemperedTarget;
use crate::rng::{stream, Phase};
use crate::smc::{MassMatrix, ParticleCloud};
use ndarray::Array1;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Tuning constants; every documented choice is overridable from the
/// config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// SD of the truncated-normal step-size perturbation in FT updates.
    pub perturb_sd: f64,
    /// Acceptance the step-size bound is solved for (HMC).
    pub hmc_target_accept: f64,
    /// Acceptance target for MALA scale pre-tuning.
    pub mala_target_accept: f64,
    /// Acceptance target for RW scale pre-tuning.
    pub rw_target_accept: f64,
    /// Amount L_max moves by when adaptation fires.
    pub lmax_step: usize,
    /// "Close to L_max" means above this fraction of it.
    pub lmax_upper_quantile: f64,
    /// "Far from L_max" means not above this fraction of it.
    pub lmax_lower_quantile: f64,
    /// Fraction of draws that must sit in a band to move L_max.
    pub lmax_fraction: f64,
    /// Upper end of the initial uniform step-size population.
    pub eps_init_hi: f64,
    /// Upper end of the initial uniform scale population.
    pub scale_init_hi: f64,
    /// Initial leapfrog-count cap.
    pub lmax_init: usize,
    /// Exploration draws use U[floor * bound, bound]; a zero step size would
    /// degenerate the integrator.
    pub eps_floor_factor: f64,
    /// Re-exploration rounds allowed when the fitted bound says the
    /// explored range was badly stale.
    pub max_pretune_rounds: usize,
    /// Growth cap of the bound per pre-tuning round.
    pub eps_growth_cap: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            perturb_sd: 0.015,
            hmc_target_accept: 0.9,
            mala_target_accept: 0.574,
            rw_target_accept: 0.234,
            lmax_step: 5,
            lmax_upper_quantile: 0.9,
            lmax_lower_quantile: 0.5,
            lmax_fraction: 0.1,
            eps_init_hi: 0.1,
            scale_init_hi: 1.0,
            lmax_init: 100,
            eps_floor_factor: 1e-6,
            max_pretune_rounds: 3,
            eps_growth_cap: 10.0,
        }
    }
}

/// Per-particle kernel parameters with their latest utilities and the
/// adaptive bounds.
#[derive(Debug, Clone)]
pub struct ParamPopulation {
    pub params: Vec<KernelParams>,
    pub utilities: Vec<f64>,
    pub eps_star: f64,
    pub l_max: usize,
}

impl ParamPopulation {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Sorted step sizes / scales, for trace summaries.
    pub fn eps_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.params.iter().map(|p| p.eps_or_sigma()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Sorted leapfrog counts (HMC populations only).
    pub fn l_values(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .params
            .iter()
            .filter_map(|p| match p {
                KernelParams::Hmc(h) => Some(h.l),
                KernelParams::Scale(_) => None,
            })
            .collect();
        v.sort_unstable();
        v
    }
}

/// Cost-normalized Rao-Blackwellized squared jump: the Mahalanobis
/// displacement of the proposal (mass-matrix metric), divided by the
/// leapfrog count, weighted by the acceptance probability min(1, e^dE).
pub fn wsjd_utility(
    x_prev: &Array1<f64>,
    x_hat: &Array1<f64>,
    l: usize,
    delta_e: f64,
    mass: &MassMatrix,
) -> f64 {
    let weight = delta_e.min(0.0).exp(); // min(1, exp(dE)), 0 at -inf
    mass.mahalanobis_sq(x_prev, x_hat) / l.max(1) as f64 * weight
}

/// Initial parameter population: step sizes uniform on (0, eps_init_hi]
/// with L uniform on {1..lmax_init} for HMC; scales uniform on
/// (0, scale_init_hi] for RW and MALA.
pub fn init_population(
    kind: KernelKind,
    n: usize,
    cfg: &TuningConfig,
    seed: u64,
) -> ParamPopulation {
    let mut rng = stream(seed, Phase::TunerResample, 0, 0, 0);
    let params = (0..n)
        .map(|_| match kind {
            KernelKind::Hmc => KernelParams::Hmc(HmcParams::new(
                rng.random_range(cfg.eps_floor_factor * cfg.eps_init_hi..cfg.eps_init_hi),
                rng.random_range(1..=cfg.lmax_init),
            )),
            KernelKind::Mala | KernelKind::Rw => KernelParams::Scale(ScaleParams::new(
                rng.random_range(cfg.eps_floor_factor * cfg.scale_init_hi..cfg.scale_init_hi),
            )),
        })
        .collect();
    ParamPopulation {
        params,
        utilities: vec![0.0; n],
        eps_star: match kind {
            KernelKind::Hmc => cfg.eps_init_hi,
            _ => cfg.scale_init_hi,
        },
        l_max: cfg.lmax_init,
    }
}

/// Sample from N(mean, sd^2) truncated to (0, inf). Rejection from the
/// untruncated normal when the mass below zero is small, exact inverse-CDF
/// otherwise; sd = 0 degenerates to the mean.
fn truncated_normal(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    use crate::numeric::{norm_cdf, norm_invcdf};
    if sd == 0.0 {
        return mean.max(f64::MIN_POSITIVE);
    }
    if mean >= 2.0 * sd {
        for _ in 0..64 {
            let draw = mean + sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
            if draw > 0.0 {
                return draw;
            }
        }
    }
    let a = norm_cdf(-mean / sd);
    let u: f64 = rng.random_range(a..1.0);
    let draw = mean + sd * norm_invcdf(u);
    draw.max(f64::MIN_POSITIVE)
}

/// Draw an index from the categorical distribution given by `cum`, the
/// inclusive cumulative weights with total `total`.
fn categorical(cum: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0) * total;
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

fn cumulative(weights: &[f64]) -> (Vec<f64>, f64) {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w.max(0.0);
        cum.push(acc);
    }
    (cum, acc)
}

/// FT update: resample parameters by utility, then perturb; step sizes get
/// truncated-normal noise, leapfrog counts move by -1/0/+1 with equal
/// chance (clamped to [1, l_max]). Returns the population and whether the
/// degenerate all-zero-utility fallback fired.
pub fn ft_update(
    pop: &ParamPopulation,
    cfg: &TuningConfig,
    rng: &mut impl Rng,
) -> (ParamPopulation, bool) {
    let n = pop.len();
    let (cum, total) = cumulative(&pop.utilities);
    let degenerate = !(total > 0.0) || !total.is_finite();
    let params = (0..n)
        .map(|_| {
            let anc = if degenerate {
                rng.random_range(0..n)
            } else {
                categorical(&cum, total, rng)
            };
            match &pop.params[anc] {
                KernelParams::Hmc(h) => {
                    let eps = truncated_normal(rng, h.eps, cfg.perturb_sd);
                    let l = match rng.random_range(0..3u8) {
                        0 => h.l.saturating_sub(1),
                        1 => h.l,
                        _ => h.l + 1,
                    }
                    .clamp(1, pop.l_max);
                    KernelParams::Hmc(HmcParams::new(eps, l))
                }
                KernelParams::Scale(s) => {
                    KernelParams::Scale(ScaleParams::new(truncated_normal(rng, s.sigma, cfg.perturb_sd)))
                }
            }
        })
        .collect();
    (
        ParamPopulation {
            params,
            utilities: vec![0.0; n],
            eps_star: pop.eps_star,
            l_max: pop.l_max,
        },
        degenerate,
    )
}

/// Fit |dE| = alpha0 + alpha1 eps^2 by median regression and solve
/// f(eps*) = target. Without a positive root the previous bound is halved
/// (flagged in the second return).
pub fn fit_eps_star(
    abs_delta_e: &[f64],
    eps_samples: &[f64],
    target: f64,
    eps_star_prev: f64,
) -> Result<(QuadraticFit, f64, bool)> {
    let fit = median_quadratic_fit(abs_delta_e, eps_samples)?;
    if fit.alpha1 > 0.0 && fit.alpha0 < target {
        Ok((fit, ((target - fit.alpha0) / fit.alpha1).sqrt(), false))
    } else {
        Ok((fit, 0.5 * eps_star_prev, true))
    }
}

/// L_max rule: grow by `lmax_step` when at least `lmax_fraction` of the
/// production draws sit above `lmax_upper_quantile * L_max`; shrink by the
/// same amount (floored at `lmax_step`) when fewer than `lmax_fraction`
/// even exceed `lmax_lower_quantile * L_max`.
pub fn adapt_lmax(sampled_l: &[usize], l_max: usize, cfg: &TuningConfig) -> usize {
    if sampled_l.is_empty() {
        return l_max;
    }
    let n = sampled_l.len() as f64;
    let hi = cfg.lmax_upper_quantile * l_max as f64;
    let lo = cfg.lmax_lower_quantile * l_max as f64;
    let frac_hi = sampled_l.iter().filter(|&&l| l as f64 > hi).count() as f64 / n;
    let frac_lo = sampled_l.iter().filter(|&&l| l as f64 > lo).count() as f64 / n;
    if frac_hi >= cfg.lmax_fraction {
        l_max + cfg.lmax_step
    } else if frac_lo < cfg.lmax_fraction {
        l_max.saturating_sub(cfg.lmax_step).max(cfg.lmax_step)
    } else {
        l_max
    }
}

/// Outcome of a pre-tuning pass.
#[derive(Debug, Clone)]
pub struct PretuneReport {
    pub population: ParamPopulation,
    /// Exploration rounds spent (> 1 means the bound was re-calibrated).
    pub rounds: usize,
    /// The eps* solve had no positive root and fell back to halving.
    pub fallback: bool,
    /// All utilities were zero; production parameters drawn uniformly.
    pub degenerate_utilities: bool,
}

struct Exploration {
    eps: Vec<f64>,
    l: Vec<usize>,
    abs_delta_e: Vec<f64>,
    utilities: Vec<f64>,
    proposals_kept: usize,
}

/// One uniform-exploration round: each particle runs a throwaway trajectory
/// with its own parameter draw; positions are never touched.
fn explore_round(
    cloud: &ParticleCloud,
    lambda: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
    kind: KernelKind,
    bound: f64,
    l_max: usize,
    cfg: &TuningConfig,
    seed: u64,
    t: u64,
    round: u64,
) -> Result<Exploration> {
    let n = cloud.len();
    let lo = cfg.eps_floor_factor * bound;
    let results: Vec<Result<(f64, usize, f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Phase::Pretune, t, round, i as u64);
            let x = cloud.positions.row(i);
            match kind {
                KernelKind::Hmc => {
                    let eps = rng.random_range(lo..bound);
                    let l = rng.random_range(1..=l_max);
                    let p = Array1::from_shape_fn(x.len(), |j| {
                        mass.sqrt_diag[j] * rng.sample::<f64, _>(rand_distr::StandardNormal)
                    });
                    let start = target.eval(x)?;
                    let h_old = -start.tempered(lambda) + mass.kinetic(&p);
                    let traj = leapfrog(x, &p, eps, l, lambda, target, mass);
                    let (abs_de, utility) = if traj.diverged {
                        (DIVERGENCE_ABORT, 0.0)
                    } else {
                        let end = target.eval(traj.position.view())?;
                        let h_new = -end.tempered(lambda) + mass.kinetic(&traj.momentum);
                        let de = h_old - h_new;
                        if !de.is_finite() || de.abs() > DIVERGENCE_ABORT {
                            (DIVERGENCE_ABORT, 0.0)
                        } else {
                            (
                                de.abs(),
                                wsjd_utility(&x.to_owned(), &traj.position, l, de, mass),
                            )
                        }
                    };
                    Ok((eps, l, abs_de, utility))
                }
                KernelKind::Mala | KernelKind::Rw => {
                    let sigma = rng.random_range(lo..bound);
                    let params = KernelParams::Scale(ScaleParams::new(sigma));
                    let out = kernel_step(x, &params, kind, lambda, target, mass, &mut rng)?;
                    let abs_de = if out.delta_e.is_finite() {
                        out.delta_e.abs().min(DIVERGENCE_ABORT)
                    } else {
                        DIVERGENCE_ABORT
                    };
                    let utility = wsjd_utility(&x.to_owned(), &out.proposal_position, 1, out.delta_e, mass);
                    Ok((sigma, 1, abs_de, utility))
                }
            }
        })
        .collect();
    let mut exploration = Exploration {
        eps: Vec::with_capacity(n),
        l: Vec::with_capacity(n),
        abs_delta_e: Vec::with_capacity(n),
        utilities: Vec::with_capacity(n),
        proposals_kept: 0,
    };
    for r in results {
        let (eps, l, abs_de, utility) = r?;
        exploration.eps.push(eps);
        exploration.l.push(l);
        exploration.abs_delta_e.push(abs_de);
        exploration.utilities.push(utility);
        if utility > 0.0 {
            exploration.proposals_kept += 1;
        }
    }
    Ok(exploration)
}

fn pretune_impl(
    cloud: &ParticleCloud,
    lambda: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
    kind: KernelKind,
    star_prev: f64,
    l_max: usize,
    cfg: &TuningConfig,
    seed: u64,
    t: u64,
) -> Result<PretuneReport> {
    if cloud.len() < 8 {
        return Err(Error::Pretune(format!(
            "need at least 8 particles, got {}",
            cloud.len()
        )));
    }
    let accept_target = match kind {
        KernelKind::Hmc => cfg.hmc_target_accept,
        KernelKind::Mala => cfg.mala_target_accept,
        KernelKind::Rw => cfg.rw_target_accept,
    };
    let de_target = accept_target.ln().abs();

    let mut bound = star_prev;
    let mut rounds = 0;
    let mut fallback = false;
    let mut star = star_prev;
    let mut exploration = None;
    while rounds < cfg.max_pretune_rounds.max(1) {
        let ex = explore_round(
            cloud, lambda, target, mass, kind, bound, l_max, cfg, seed, t, rounds as u64,
        )?;
        rounds += 1;
        let (_, star_raw, fb) = fit_eps_star(&ex.abs_delta_e, &ex.eps, de_target, bound)?;
        fallback = fb;
        star = star_raw.min(cfg.eps_growth_cap * bound);
        exploration = Some(ex);
        // Re-explore only when the solve says the bound was badly stale.
        if fb || star <= 1.5 * bound || rounds >= cfg.max_pretune_rounds.max(1) {
            break;
        }
        bound = star;
    }
    let exploration = exploration.expect("at least one round runs");

    // Production parameters: categorical over the explored pairs by utility.
    let n = cloud.len();
    let (cum, total) = cumulative(&exploration.utilities);
    let degenerate = !(total > 0.0) || !total.is_finite();
    let mut rng = stream(seed, Phase::TunerResample, t, 1, 0);
    let mut params = Vec::with_capacity(n);
    let mut sampled_l = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = if degenerate {
            rng.random_range(0..n)
        } else {
            categorical(&cum, total, &mut rng)
        };
        sampled_l.push(exploration.l[idx]);
        params.push(match kind {
            KernelKind::Hmc => {
                KernelParams::Hmc(HmcParams::new(exploration.eps[idx], exploration.l[idx]))
            }
            _ => KernelParams::Scale(ScaleParams::new(exploration.eps[idx])),
        });
    }
    let new_l_max = if kind == KernelKind::Hmc {
        adapt_lmax(&sampled_l, l_max, cfg)
    } else {
        l_max
    };
    Ok(PretuneReport {
        population: ParamPopulation {
            params,
            utilities: vec![0.0; n],
            eps_star: star,
            l_max: new_l_max,
        },
        rounds,
        fallback,
        degenerate_utilities: degenerate,
    })
}

/// PR pre-tuning of the HMC kernel at the current temperature: uniform
/// exploration of (eps, L), median regression for the next eps*, categorical
/// resampling of the production pairs, and the L_max adaptation.
/// Trajectories are discarded; the cloud is read-only.
#[allow(clippy::too_many_arguments)]
pub fn pr_pretune(
    cloud: &ParticleCloud,
    lambda_prev: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
    eps_star_prev: f64,
    l_max: usize,
    cfg: &TuningConfig,
    seed: u64,
    t: u64,
) -> Result<PretuneReport> {
    pretune_impl(
        cloud,
        lambda_prev,
        target,
        mass,
        KernelKind::Hmc,
        eps_star_prev,
        l_max,
        cfg,
        seed,
        t,
    )
}

/// Scale pre-tuning for RW and MALA kernels: one-proposal exploration of
/// the scale, median regression of |log acceptance ratio| on sigma^2 solved
/// at the kernel's acceptance target, categorical production resampling.
#[allow(clippy::too_many_arguments)]
pub fn scale_pretune(
    cloud: &ParticleCloud,
    lambda_prev: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
    kind: KernelKind,
    scale_star_prev: f64,
    cfg: &TuningConfig,
    seed: u64,
    t: u64,
) -> Result<PretuneReport> {
    if kind == KernelKind::Hmc {
        return Err(Error::Config("scale_pretune serves rw and mala kernels".into()));
    }
    pretune_impl(
        cloud,
        lambda_prev,
        target,
        mass,
        kind,
        scale_star_prev,
        1,
        cfg,
        seed,
        t,
    )
}
