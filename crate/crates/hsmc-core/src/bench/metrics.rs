use crate::error::{Error, Result};
use crate::smc::{MassMatrix, ParticleCloud};
use ndarray::Array2;

/// Mean squared jump per move at the final target, in the mass-matrix
/// Mahalanobis metric, from the chain of per-sweep cloud snapshots
/// (initial state plus one entry per sweep).
pub fn esjd_final(snapshots: &[Array2<f64>], mass: &MassMatrix) -> Result<f64> {
    esjd_impl(snapshots, |prev, next, i| {
        let mut s = 0.0;
        for j in 0..prev.ncols() {
            let d = prev[[i, j]] - next[[i, j]];
            s += mass.diag[j] * d * d;
        }
        s
    })
}

/// Raw-Euclidean variant of [`esjd_final`]; the scale the reference
/// jump-distance tables use.
pub fn esjd_final_euclid(snapshots: &[Array2<f64>]) -> Result<f64> {
    esjd_impl(snapshots, |prev, next, i| {
        let mut s = 0.0;
        for j in 0..prev.ncols() {
            let d = prev[[i, j]] - next[[i, j]];
            s += d * d;
        }
        s
    })
}

fn esjd_impl<F>(snapshots: &[Array2<f64>], dist_sq: F) -> Result<f64>
where
    F: Fn(&Array2<f64>, &Array2<f64>, usize) -> f64,
{
    if snapshots.len() < 2 {
        return Err(Error::Metric(
            "no sweep at the final temperature: cannot compute ESJD".into(),
        ));
    }
    let n = snapshots[0].nrows();
    let mut per_sweep = Vec::with_capacity(snapshots.len() - 1);
    for w in snapshots.windows(2) {
        let mut total = 0.0;
        for i in 0..n {
            total += dist_sq(&w[0], &w[1], i);
        }
        per_sweep.push(total / n as f64);
    }
    Ok(per_sweep.iter().sum::<f64>() / per_sweep.len() as f64)
}

/// Share of positive components, averaged over particles: the mixture
/// mode-balance statistic. Zero counts as positive.
pub fn mode_proportion(cloud: &ParticleCloud) -> f64 {
    let (n, d) = (cloud.len(), cloud.dim());
    let mut total = 0.0;
    for i in 0..n {
        let mut pos = 0usize;
        for j in 0..d {
            pos += (cloud.positions[[i, j]] >= 0.0) as usize;
        }
        total += pos as f64 / d as f64;
    }
    total / n as f64
}
