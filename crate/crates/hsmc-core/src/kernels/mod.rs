//! Markov move kernels targeting the tempered density at a fixed exponent:
//! Hamiltonian Monte Carlo via the leapfrog integrator, the Metropolis
//! adjusted Langevin algorithm, and random-walk Metropolis. All kernels use
//! the diagonal mass matrix estimated from the particles.

use crate::error::Result;
use crate::models::{LogDensity, TemperedTarget};
use crate::smc::MassMatrix;
use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Trajectories whose energy error exceeds this are treated as diverged and
/// rejected outright, so numerical blowups cannot poison the cloud.
pub const DIVERGENCE_ABORT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcParams {
    pub eps: f64,
    pub l: usize,
}

impl HmcParams {
    pub fn new(eps: f64, l: usize) -> Self {
        assert!(eps > 0.0 && l >= 1, "require eps > 0 and L >= 1");
        Self { eps, l }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParams {
    pub sigma: f64,
}

impl ScaleParams {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma > 0.0, "require sigma > 0");
        Self { sigma }
    }
}

/// Per-particle kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelParams {
    Hmc(HmcParams),
    Scale(ScaleParams),
}

impl KernelParams {
    /// Leapfrog count entering cost-normalized utilities (1 for scale kernels).
    pub fn leapfrog_count(&self) -> usize {
        match self {
            KernelParams::Hmc(p) => p.l,
            KernelParams::Scale(_) => 1,
        }
    }

    pub fn eps_or_sigma(&self) -> f64 {
        match self {
            KernelParams::Hmc(p) => p.eps,
            KernelParams::Scale(p) => p.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Hmc,
    Mala,
    Rw,
}

impl KernelKind {
    pub fn uses_gradients(self) -> bool {
        !matches!(self, KernelKind::Rw)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Hmc => "hmc",
            KernelKind::Mala => "mala",
            KernelKind::Rw => "rw",
        }
    }
}

/// Result of one kernel application.
#[derive(Debug, Clone)]
pub struct MoveOutcome {
    pub new_position: Array1<f64>,
    /// Proposed position before the accept/reject step.
    pub proposal_position: Array1<f64>,
    /// Log acceptance exponent; accept iff log(u) <= delta_e.
    pub delta_e: f64,
    pub accepted: bool,
    pub grads_used: u64,
    /// Cached densities at `new_position`.
    pub new_density: LogDensity,
}

/// H(p, x) = -log pi_lambda(x) + 1/2 p^T M^{-1} p (one likelihood evaluation).
pub fn hamiltonian(
    x: ArrayView1<'_, f64>,
    p: &Array1<f64>,
    lambda: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
) -> Result<f64> {
    let pot = -target.tempered_logpdf(x, lambda)?;
    if !p.iter().all(|v| v.is_finite()) {
        return Err(crate::error::Error::InvalidState);
    }
    Ok(pot + mass.kinetic(p))
}

/// Outcome of a leapfrog integration.
#[derive(Debug, Clone)]
pub struct LeapfrogResult {
    pub position: Array1<f64>,
    pub momentum: Array1<f64>,
    pub diverged: bool,
    pub grads_used: u64,
}

/// Integrate Hamilton's equations for `l` steps of size `eps` with fused
/// half-kicks; exactly `l + 1` gradient evaluations on a finite trajectory.
pub fn leapfrog(
    x: ArrayView1<'_, f64>,
    p: &Array1<f64>,
    eps: f64,
    l: usize,
    lambda: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
) -> LeapfrogResult {
    debug_assert!(eps > 0.0 && l >= 1);
    let mut x = x.to_owned();
    let mut p = p.clone();
    let mut grads_used = 0u64;

    let mut grad = match target.tempered_grad(x.view(), lambda) {
        Ok(g) => {
            grads_used += 1;
            g
        }
        Err(_) => {
            return LeapfrogResult {
                position: x,
                momentum: p,
                diverged: true,
                grads_used,
            }
        }
    };
    let diverged = 'traj: {
        if !grad.iter().all(|v| v.is_finite()) {
            break 'traj true;
        }
        p.zip_mut_with(&grad, |pi, &gi| *pi += 0.5 * eps * gi);
        for step in 0..l {
            for j in 0..x.len() {
                x[j] += eps * mass.inv_diag[j] * p[j];
            }
            if !x.iter().all(|v| v.is_finite()) {
                break 'traj true;
            }
            grad = match target.tempered_grad(x.view(), lambda) {
                Ok(g) => {
                    grads_used += 1;
                    g
                }
                Err(_) => break 'traj true,
            };
            if !grad.iter().all(|v| v.is_finite()) {
                break 'traj true;
            }
            let kick = if step + 1 == l { 0.5 * eps } else { eps };
            p.zip_mut_with(&grad, |pi, &gi| *pi += kick * gi);
            if !p.iter().all(|v| v.is_finite()) {
                break 'traj true;
            }
        }
        false
    };
    LeapfrogResult {
        position: x,
        momentum: p,
        diverged,
        grads_used,
    }
}

fn finish_outcome(
    start: ArrayView1<'_, f64>,
    start_density: LogDensity,
    proposal: Array1<f64>,
    proposal_density: Option<LogDensity>,
    delta_e: f64,
    grads_used: u64,
    rng: &mut impl Rng,
) -> MoveOutcome {
    let delta_e = if delta_e.is_finite() && delta_e.abs() <= DIVERGENCE_ABORT {
        delta_e
    } else {
        f64::NEG_INFINITY
    };
    let u: f64 = rng.random_range(0.0..1.0);
    let accepted = delta_e > f64::NEG_INFINITY && u.ln() <= delta_e;
    if accepted {
        let density = proposal_density.expect("accepted proposals carry a density");
        MoveOutcome {
            new_position: proposal.clone(),
            proposal_position: proposal,
            delta_e,
            accepted: true,
            grads_used,
            new_density: density,
        }
    } else {
        MoveOutcome {
            new_position: start.to_owned(),
            proposal_position: proposal,
            delta_e,
            accepted: false,
            grads_used,
            new_density: start_density,
        }
    }
}

/// One HMC transition: sample p ~ N(0, M), integrate, accept with
/// probability min(1, exp(delta_e)) where delta_e = H(old) - H(new).
///
/// Costs exactly L+1 gradient and 2 likelihood evaluations on a finite
/// trajectory.
pub fn hmc_step(
    x: ArrayView1<'_, f64>,
    params: &HmcParams,
    lambda: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
    rng: &mut impl Rng,
) -> Result<MoveOutcome> {
    let d = x.len();
    let p = Array1::from_shape_fn(d, |j| {
        mass.sqrt_diag[j] * rng.sample::<f64, _>(StandardNormal)
    });
    let start_density = target.eval(x)?;
    let h_old = -start_density.tempered(lambda) + mass.kinetic(&p);
    let traj = leapfrog(x, &p, params.eps, params.l, lambda, target, mass);
    if traj.diverged {
        return Ok(finish_outcome(
            x,
            start_density,
            x.to_owned(),
            None,
            f64::NEG_INFINITY,
            traj.grads_used,
            rng,
        ));
    }
    let prop_density = target.eval(traj.position.view())?;
    let h_new = -prop_density.tempered(lambda) + mass.kinetic(&traj.momentum);
    let delta_e = h_old - h_new;
    Ok(finish_outcome(
        x,
        start_density,
        traj.position,
        Some(prop_density),
        delta_e,
        traj.grads_used,
        rng,
    ))
}

fn mala_log_q(
    to: &Array1<f64>,
    from: &Array1<f64>,
    grad_from: &Array1<f64>,
    sigma: f64,
    mass: &MassMatrix,
) -> f64 {
    // Proposal N(from + sigma^2/2 M^{-1} grad, sigma^2 M^{-1}), up to the
    // symmetric normalization that cancels in the ratio.
    let mut q = 0.0;
    for j in 0..to.len() {
        let mean = from[j] + 0.5 * sigma * sigma * mass.inv_diag[j] * grad_from[j];
        let diff = to[j] - mean;
        q -= mass.diag[j] * diff * diff / (2.0 * sigma * sigma);
    }
    q
}

/// One MALA transition with the exact asymmetric proposal correction.
/// Costs 2 gradient and 2 likelihood evaluations.
pub fn mala_step(
    x: ArrayView1<'_, f64>,
    params: &ScaleParams,
    lambda: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
    rng: &mut impl Rng,
) -> Result<MoveOutcome> {
    let d = x.len();
    let sigma = params.sigma;
    let xi = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
    let start_density = target.eval(x)?;
    let grad_x = target.tempered_grad(x, lambda)?;
    let x_owned = x.to_owned();
    let mut proposal = x_owned.clone();
    let mut diverged = !grad_x.iter().all(|v| v.is_finite());
    if !diverged {
        for j in 0..d {
            proposal[j] = x[j]
                + 0.5 * sigma * sigma * mass.inv_diag[j] * grad_x[j]
                + sigma * xi[j] / mass.sqrt_diag[j];
        }
        diverged = !proposal.iter().all(|v| v.is_finite());
    }
    if diverged {
        return Ok(finish_outcome(
            x,
            start_density,
            x_owned,
            None,
            f64::NEG_INFINITY,
            1,
            rng,
        ));
    }
    let prop_density = target.eval(proposal.view())?;
    let grad_prop = target.tempered_grad(proposal.view(), lambda)?;
    let delta_e = prop_density.tempered(lambda) - start_density.tempered(lambda)
        + mala_log_q(&x_owned, &proposal, &grad_prop, sigma, mass)
        - mala_log_q(&proposal, &x_owned, &grad_x, sigma, mass);
    Ok(finish_outcome(
        x,
        start_density,
        proposal,
        Some(prop_density),
        delta_e,
        2,
        rng,
    ))
}

/// One random-walk Metropolis transition; 2 likelihood evaluations, no
/// gradients.
pub fn rw_step(
    x: ArrayView1<'_, f64>,
    params: &ScaleParams,
    lambda: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
    rng: &mut impl Rng,
) -> Result<MoveOutcome> {
    let d = x.len();
    let xi = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
    let start_density = target.eval(x)?;
    let mut proposal = x.to_owned();
    for j in 0..d {
        proposal[j] += params.sigma * xi[j] / mass.sqrt_diag[j];
    }
    if !proposal.iter().all(|v| v.is_finite()) {
        return Ok(finish_outcome(
            x,
            start_density,
            x.to_owned(),
            None,
            f64::NEG_INFINITY,
            0,
            rng,
        ));
    }
    let prop_density = target.eval(proposal.view())?;
    let delta_e = prop_density.tempered(lambda) - start_density.tempered(lambda);
    Ok(finish_outcome(
        x,
        start_density,
        proposal,
        Some(prop_density),
        delta_e,
        0,
        rng,
    ))
}

/// Apply the kernel selected by `kind` with per-particle parameters.
pub fn kernel_step(
    x: ArrayView1<'_, f64>,
    params: &KernelParams,
    kind: KernelKind,
    lambda: f64,
    target: &TemperedTarget,
    mass: &MassMatrix,
    rng: &mut impl Rng,
) -> Result<MoveOutcome> {
    match (kind, params) {
        (KernelKind::Hmc, KernelParams::Hmc(p)) => hmc_step(x, p, lambda, target, mass, rng),
        (KernelKind::Mala, KernelParams::Scale(p)) => mala_step(x, p, lambda, target, mass, rng),
        (KernelKind::Rw, KernelParams::Scale(p)) => rw_step(x, p, lambda, target, mass, rng),
        _ => Err(crate::error::Error::Config(
            "kernel kind and parameter family mismatch".into(),
        )),
    }
}
