use super::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::numeric::logsumexp;

/// Bisection tolerance (in lambda) of the exponent search.
pub const BISECT_TOL: f64 = 1e-10;
const BISECT_MAX_ITERS: usize = 100;
const GRID_FALLBACK_POINTS: usize = 10_000;

/// Effective sample size (sum w)^2 / sum w^2, computed with max-log
/// shifting. Exactly N on equal weights, 1 on a single atom.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateCloud);
    }
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for lw in log_weights {
        let w = (lw - m).exp();
        sum += w;
        sumsq += w * w;
    }
    Ok(sum * sum / sumsq)
}

/// ESS of the incremental weights l_i^(lambda - lambda_prev).
fn incremental_ess(loglik: &[f64], lambda_prev: f64, lambda: f64) -> Result<f64> {
    let delta = lambda - lambda_prev;
    let lw: Vec<f64> = loglik.iter().map(|&l| delta * l).collect();
    ess(&lw)
}

/// Choose the next tempering exponent so the incremental ESS hits
/// `alpha * N`, by bisection on (lambda_prev, 1]; returns 1 when even the
/// full jump keeps the ESS above the target.
///
/// Bisection assumes the ESS decreases in lambda; when the bracket
/// degenerates without meeting the target, a grid scan picks the smallest
/// exponent that reaches it.
pub fn next_temperature(loglik: &[f64], lambda_prev: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda_prev) {
        return Err(Error::Temperature(format!(
            "lambda_prev {lambda_prev} outside [0, 1)"
        )));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(Error::Temperature(format!("alpha {alpha} outside (0, 1)")));
    }
    let n = loglik.len() as f64;
    let target = alpha * n;
    if incremental_ess(loglik, lambda_prev, 1.0)? >= target {
        return Ok(1.0);
    }

    let mut lo = lambda_prev; // ESS(lo) = N >= target
    let mut hi = 1.0; // ESS(hi) < target
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..BISECT_MAX_ITERS {
        mid = 0.5 * (lo + hi);
        if incremental_ess(loglik, lambda_prev, mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BISECT_TOL {
            break;
        }
    }
    let achieved = incremental_ess(loglik, lambda_prev, mid)?;
    // Tolerance in ESS units scaled by the local slope; a loose absolute
    // guard is enough to detect a non-monotone failure of the bracket.
    if (achieved - target).abs() > 0.05 * n {
        // Non-monotone weight pattern: scan for the smallest exponent that
        // lands at or below the target ESS.
        let mut found = None;
        for k in 1..=GRID_FALLBACK_POINTS {
            let lambda =
                lambda_prev + (1.0 - lambda_prev) * k as f64 / GRID_FALLBACK_POINTS as f64;
            if incremental_ess(loglik, lambda_prev, lambda)? <= target {
                found = Some(lambda);
                break;
            }
        }
        return found.ok_or_else(|| {
            Error::Temperature("no exponent increase reaches the ESS target".into())
        });
    }
    let lambda = mid.max(f64::from_bits(lambda_prev.to_bits() + 1));
    Ok(lambda.min(1.0))
}

/// Advance the cloud weights to the next exponent and return the
/// log normalizing-constant increment.
///
/// Incremental log-weights are (lambda - lambda_prev) * cached_loglik; the
/// increment is the log weighted mean, which reduces to
/// logsumexp(delta * loglik) - log N on an equally weighted cloud and keeps
/// the telescoping product exact when resampling is conditional.
pub fn reweight(cloud: &mut ParticleCloud, lambda_prev: f64, lambda: f64) -> f64 {
    assert!(lambda > lambda_prev, "reweight requires lambda > lambda_prev");
    let delta = lambda - lambda_prev;
    let before = logsumexp(cloud.log_weights.as_slice().unwrap());
    cloud
        .log_weights
        .zip_mut_with(&cloud.cached_loglik, |lw, &ll| *lw += delta * ll);
    let after = logsumexp(cloud.log_weights.as_slice().unwrap());
    cloud.resampled = false;
    after - before
}

/// An explicit tempering ladder for non-adaptive runs.
#[derive(Debug, Clone)]
pub struct TemperatureLadder {
    pub lambdas: Vec<f64>,
}

impl TemperatureLadder {
    /// Validate a user-supplied ladder: strictly increasing from 0 to 1.
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() < 2 || lambdas[0] != 0.0 || *lambdas.last().unwrap() != 1.0 {
            return Err(Error::Config(
                "fixed ladder must start at 0 and end at 1".into(),
            ));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("fixed ladder must be strictly increasing".into()));
        }
        Ok(Self { lambdas })
    }

    /// Equi-spaced ladder with `steps` temperature moves (steps+1 points).
    pub fn equispaced(steps: usize) -> Self {
        let steps = steps.max(1);
        Self {
            lambdas: (0..=steps).map(|k| k as f64 / steps as f64).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array1;
    use proptest::prelude::*;

    #[test]
    fn ess_identities() {
        assert_relative_eq!(ess(&[0.0; 4]).unwrap(), 4.0, max_relative = 1e-14);
        let one_hot = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert_relative_eq!(ess(&one_hot).unwrap(), 1.0, max_relative = 1e-14);
        // Weights (2, 1, 1): (2+1+1)^2 / (4+1+1) = 16/6.
        let lw = [2.0_f64.ln(), 0.0, 0.0];
        assert_relative_eq!(ess(&lw).unwrap(), 16.0 / 6.0, max_relative = 1e-12);
        assert!(matches!(
            ess(&[f64::NEG_INFINITY; 3]),
            Err(Error::DegenerateCloud)
        ));
    }

    proptest! {
        /// Shift invariance is exact: shifting all log-weights changes
        /// nothing after max-subtraction.
        #[test]
        fn ess_shift_invariant(
            lw in proptest::collection::vec(-30.0f64..30.0, 2..40),
            shift in -200.0f64..200.0,
        ) {
            let shifted: Vec<f64> = lw.iter().map(|v| v + shift).collect();
            prop_assert_eq!(ess(&lw).unwrap(), ess(&shifted).unwrap());
        }
    }

    #[test]
    fn constant_likelihoods_jump_to_one() {
        let loglik = vec![-3.7; 16];
        assert_eq!(next_temperature(&loglik, 0.0, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn near_the_end_returns_one() {
        let loglik: Vec<f64> = (0..32).map(|i| -(i as f64) * 0.05).collect();
        assert_eq!(next_temperature(&loglik, 0.999, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn two_particle_closed_form() {
        // logliks (0, log 0.01), alpha = 0.75: u = 0.01^lambda solves
        // (1+u)^2/(1+u^2) = 1.5, i.e. u = 2 - sqrt(3).
        let loglik = vec![0.0, 0.01_f64.ln()];
        let lambda = next_temperature(&loglik, 0.0, 0.75).unwrap();
        let expect = (2.0 - 3.0_f64.sqrt()).ln() / 0.01_f64.ln();
        assert!(
            (lambda - expect).abs() < 1e-6,
            "lambda {lambda} vs closed form {expect}"
        );
    }

    #[test]
    fn returned_exponent_hits_alpha_n() {
        let loglik: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * 4.0).collect();
        let mut lambda_prev = 0.0;
        while lambda_prev < 1.0 {
            let lambda = next_temperature(&loglik, lambda_prev, 0.6).unwrap();
            assert!(lambda > lambda_prev);
            if lambda < 1.0 {
                let e = incremental_ess(&loglik, lambda_prev, lambda).unwrap();
                assert!(
                    (e - 0.6 * 64.0).abs() < 1e-4,
                    "ESS {e} away from target at lambda {lambda}"
                );
            }
            lambda_prev = lambda;
        }
    }

    #[test]
    fn reweight_constant_shift() {
        let mut cloud = test_cloud(vec![-2.5; 8]);
        let inc = reweight(&mut cloud, 0.2, 0.6);
        assert_relative_eq!(inc, -2.5 * 0.4, max_relative = 1e-12);
    }

    #[test]
    fn reweight_two_particles() {
        let mut cloud = test_cloud(vec![0.0, -1.0]);
        let inc = reweight(&mut cloud, 0.0, 0.5);
        let expect = ((1.0 + (-0.5_f64).exp()) / 2.0).ln();
        assert_relative_eq!(inc, expect, max_relative = 1e-12);
        assert!((inc - (-0.18027)).abs() < 1e-4);
    }

    #[test]
    fn reweight_composes_with_carried_weights() {
        // Reweighting twice equals one combined jump, both in weights and in
        // the summed increments.
        let loglik = vec![0.3, -0.8, 1.7, 0.0];
        let mut two_steps = test_cloud(loglik.clone());
        let inc1 = reweight(&mut two_steps, 0.0, 0.3);
        let inc2 = reweight(&mut two_steps, 0.3, 0.9);
        let mut one_step = test_cloud(loglik);
        let inc = reweight(&mut one_step, 0.0, 0.9);
        assert_relative_eq!(inc1 + inc2, inc, max_relative = 1e-12);
        for i in 0..4 {
            assert_relative_eq!(
                two_steps.log_weights[i],
                one_step.log_weights[i],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn ladder_validation() {
        assert!(TemperatureLadder::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(TemperatureLadder::new(vec![0.0, 0.5]).is_err());
        assert!(TemperatureLadder::new(vec![0.1, 0.5, 1.0]).is_err());
        assert!(TemperatureLadder::new(vec![0.0, 0.6, 0.5, 1.0]).is_err());
        let l = TemperatureLadder::equispaced(4);
        assert_eq!(l.lambdas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    fn test_cloud(loglik: Vec<f64>) -> ParticleCloud {
        let n = loglik.len();
        ParticleCloud {
            positions: ndarray::Array2::zeros((n, 1)),
            log_weights: Array1::zeros(n),
            cached_loglik: Array1::from_vec(loglik),
            cached_logprior: Array1::zeros(n),
            resampled: true,
        }
    }
}
