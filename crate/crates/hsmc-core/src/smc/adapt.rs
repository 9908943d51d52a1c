use super::cloud::ParticleCloud;
use crate::error::Result;
use ndarray::{Array1, Array2};

/// Statistics one kernel sweep over the whole cloud reports back.
#[derive(Debug, Clone, Default)]
pub struct SweepStats {
    pub accept_rate: f64,
    /// Mean squared jump in the mass-matrix Mahalanobis metric.
    pub esjd_mass: f64,
    /// Mean squared jump in the raw Euclidean metric.
    pub esjd_euclid: f64,
    /// Cost-normalized utilities of the parameters each particle used.
    pub utilities: Vec<f64>,
}

/// Report of one adaptive move phase.
#[derive(Debug, Clone, Default)]
pub struct MoveReport {
    pub steps: usize,
    pub mean_accept: f64,
    pub esjd_mass: f64,
    pub esjd_euclid: f64,
    pub hit_max_steps: bool,
    /// Utilities from the final sweep, feeding the next tuner update.
    pub last_utilities: Vec<f64>,
    /// Cloud snapshots: the state before the first sweep and after each
    /// sweep (steps + 1 entries).
    pub snapshots: Vec<Array2<f64>>,
}

/// Summary statistic s(x) = x + x^2, tracking the first two moments.
fn moment_stat(x: f64) -> f64 {
    x + x * x
}

/// Componentwise Pearson correlation of s(x_prev) and s(x_next) over the
/// cloud; components with zero variance at either lag count as unmixed
/// (rho = 1).
fn component_correlations(prev: &Array2<f64>, next: &Array2<f64>) -> Array1<f64> {
    let (n, d) = (prev.nrows(), prev.ncols());
    let mut rho = Array1::zeros(d);
    for j in 0..d {
        let (mut sa, mut sb) = (0.0, 0.0);
        for i in 0..n {
            sa += moment_stat(prev[[i, j]]);
            sb += moment_stat(next[[i, j]]);
        }
        let (ma, mb) = (sa / n as f64, sb / n as f64);
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let a = moment_stat(prev[[i, j]]) - ma;
            let b = moment_stat(next[[i, j]]) - mb;
            va += a * a;
            vb += b * b;
            cov += a * b;
        }
        rho[j] = if va <= 0.0 || vb <= 0.0 {
            1.0
        } else {
            cov / (va * vb).sqrt()
        };
    }
    rho
}

/// Repeat kernel sweeps until fewer than 10% of the components keep a
/// running autocorrelation product above `alpha_prime`, or `max_steps`
/// sweeps were spent (recorded as a warning). `fixed_steps` bypasses the
/// stopping rule for non-adaptive baselines. At least one sweep always runs.
/// With `keep_snapshots` the cloud state before the first and after every
/// sweep is retained for jump-distance diagnostics.
pub fn adaptive_move<F>(
    cloud: &mut ParticleCloud,
    alpha_prime: f64,
    max_steps: usize,
    fixed_steps: Option<usize>,
    keep_snapshots: bool,
    mut sweep: F,
) -> Result<MoveReport>
where
    F: FnMut(&mut ParticleCloud, usize) -> Result<SweepStats>,
{
    let d = cloud.dim();
    let mut product = Array1::<f64>::ones(d);
    let mut report = MoveReport::default();
    let mut accept_sum = 0.0;
    let mut esjd_mass_sum = 0.0;
    let mut esjd_euclid_sum = 0.0;
    if keep_snapshots {
        report.snapshots.push(cloud.positions.clone());
    }

    let limit = fixed_steps.unwrap_or(max_steps).max(1);
    loop {
        let prev = cloud.positions.clone();
        let stats = sweep(cloud, report.steps)?;
        report.steps += 1;
        accept_sum += stats.accept_rate;
        esjd_mass_sum += stats.esjd_mass;
        esjd_euclid_sum += stats.esjd_euclid;
        report.last_utilities = stats.utilities;
        if keep_snapshots {
            report.snapshots.push(cloud.positions.clone());
        }

        if fixed_steps.is_some() {
            if report.steps >= limit {
                break;
            }
            continue;
        }
        let rho = component_correlations(&prev, &cloud.positions);
        product.zip_mut_with(&rho, |p, &r| *p *= r);
        let unmixed = product.iter().filter(|&&p| p > alpha_prime).count();
        // Strictly-below-10% stopping; exactly 10% keeps moving.
        if (unmixed as f64) / (d as f64) < 0.10 {
            break;
        }
        if report.steps >= limit {
            report.hit_max_steps = true;
            break;
        }
    }
    let k = report.steps as f64;
    report.mean_accept = accept_sum / k;
    report.esjd_mass = esjd_mass_sum / k;
    report.esjd_euclid = esjd_euclid_sum / k;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::Rng;

    fn fresh_cloud(n: usize, d: usize, seed: u64) -> ParticleCloud {
        let mut rng = crate::rng::stream(seed, crate::rng::Phase::Init, 0, 0, 0);
        let positions = Array2::from_shape_fn((n, d), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        ParticleCloud {
            positions,
            log_weights: Array1::zeros(n),
            cached_loglik: Array1::zeros(n),
            cached_logprior: Array1::zeros(n),
            resampled: true,
        }
    }

    #[test]
    fn independent_sampler_stops_after_one_sweep() {
        let mut cloud = fresh_cloud(4096, 5, 61);
        let report = adaptive_move(&mut cloud, 0.1, 50, None, false, |cloud, k| {
            let mut rng = crate::rng::stream(62, crate::rng::Phase::Move, 0, k as u64, 0);
            cloud
                .positions
                .mapv_inplace(|_| rng.sample::<f64, _>(rand_distr::StandardNormal));
            Ok(SweepStats {
                accept_rate: 1.0,
                ..Default::default()
            })
        })
        .unwrap();
        assert_eq!(report.steps, 1);
        assert!(!report.hit_max_steps);
    }

    #[test]
    fn identity_kernel_hits_max_steps_with_warning() {
        let mut cloud = fresh_cloud(256, 3, 63);
        let report =
            adaptive_move(&mut cloud, 0.1, 50, None, false, |_cloud, _k| Ok(SweepStats::default()))
                .unwrap();
        assert_eq!(report.steps, 50);
        assert!(report.hit_max_steps);
    }

    #[test]
    fn alpha_prime_one_stops_immediately() {
        // Any correlation product is <= 1, never > 1: one sweep.
        let mut cloud = fresh_cloud(512, 4, 64);
        let report =
            adaptive_move(&mut cloud, 1.0, 50, None, false, |_cloud, _k| Ok(SweepStats::default()))
                .unwrap();
        assert_eq!(report.steps, 1);
        assert!(!report.hit_max_steps);
    }

    #[test]
    fn fixed_steps_override_runs_exactly_k_sweeps() {
        let mut cloud = fresh_cloud(64, 2, 65);
        let mut calls = 0;
        let report = adaptive_move(&mut cloud, 0.1, 50, Some(7), false, |_cloud, _k| {
            calls += 1;
            Ok(SweepStats::default())
        })
        .unwrap();
        assert_eq!(report.steps, 7);
        assert_eq!(calls, 7);
        assert!(!report.hit_max_steps);
    }

    #[test]
    fn snapshots_record_every_sweep() {
        let mut cloud = fresh_cloud(32, 2, 66);
        let report = adaptive_move(&mut cloud, 0.1, 50, Some(3), true, |cloud, _k| {
            cloud.positions.mapv_inplace(|x| x + 1.0);
            Ok(SweepStats::default())
        })
        .unwrap();
        assert_eq!(report.snapshots.len(), 4);
        let drift = &report.snapshots[3] - &report.snapshots[0];
        assert!(drift.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn boundary_fraction_keeps_moving() {
        // d = 10 components, exactly one (10%) stays unmixed: the >= 10%
        // condition must continue, so an always-stuck single component out
        // of ten forces max_steps.
        let n = 128;
        let d = 10;
        let mut cloud = fresh_cloud(n, d, 67);
        let report = adaptive_move(&mut cloud, 0.1, 12, None, false, |cloud, k| {
            let mut rng = crate::rng::stream(68, crate::rng::Phase::Move, 0, k as u64, 0);
            // Resample components 1..d independently; freeze component 0.
            for i in 0..n {
                for j in 1..d {
                    cloud.positions[[i, j]] = rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
            Ok(SweepStats::default())
        })
        .unwrap();
        assert_eq!(report.steps, 12);
        assert!(report.hit_max_steps);
    }
}
