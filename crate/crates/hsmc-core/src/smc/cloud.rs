use crate::error::{Error, Result};
use crate::models::{LogDensity, TemperedTarget};
use crate::numeric::logsumexp;
use ndarray::{Array1, Array2};
use rayon::prelude::*;

/// The particle population: positions, unnormalized log-weights and cached
/// prior/likelihood log-densities (kept coherent with the positions).
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub positions: Array2<f64>,
    pub log_weights: Array1<f64>,
    pub cached_loglik: Array1<f64>,
    pub cached_logprior: Array1<f64>,
    /// True while the weights are uniform because of a resampling step.
    pub resampled: bool,
}

impl ParticleCloud {
    /// Draw `n` particles from the initial distribution and cache their
    /// densities (n likelihood evaluations).
    pub fn from_prior(
        target: &TemperedTarget,
        n: usize,
        rng: &mut impl rand::RngCore,
    ) -> Result<Self> {
        let positions = target.sample_prior(rng, n);
        let densities: Vec<Result<LogDensity>> = positions
            .rows()
            .into_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|row| target.eval(row))
            .collect();
        let mut cached_loglik = Array1::zeros(n);
        let mut cached_logprior = Array1::zeros(n);
        for (i, d) in densities.into_iter().enumerate() {
            let d = d?;
            cached_loglik[i] = d.log_lik;
            cached_logprior[i] = d.log_prior;
        }
        Ok(Self {
            positions,
            log_weights: Array1::zeros(n),
            cached_loglik,
            cached_logprior,
            resampled: false,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    /// Normalized weights; errors when every particle has zero weight.
    pub fn normalized_weights(&self) -> Result<Array1<f64>> {
        let lse = logsumexp(self.log_weights.as_slice().unwrap());
        if !lse.is_finite() {
            return Err(Error::DegenerateCloud);
        }
        Ok(self.log_weights.mapv(|lw| (lw - lse).exp()))
    }

    /// Self-normalized weighted mean of the positions.
    pub fn weighted_mean(&self) -> Result<Array1<f64>> {
        let w = self.normalized_weights()?;
        let mut mean = Array1::zeros(self.dim());
        for (i, row) in self.positions.rows().into_iter().enumerate() {
            mean.zip_mut_with(&row, |m, &x| *m += w[i] * x);
        }
        Ok(mean)
    }

    /// Self-normalized weighted variance of each component.
    pub fn weighted_var_diag(&self) -> Result<Array1<f64>> {
        let w = self.normalized_weights()?;
        let mean = self.weighted_mean()?;
        let mut var = Array1::zeros(self.dim());
        for (i, row) in self.positions.rows().into_iter().enumerate() {
            for j in 0..self.dim() {
                let c = row[j] - mean[j];
                var[j] += w[i] * c * c;
            }
        }
        Ok(var)
    }

    /// Recompute the cached densities of particle `i` from the target; test
    /// hook for cache-coherence checks (counts one likelihood evaluation).
    pub fn recomputed_density(&self, target: &TemperedTarget, i: usize) -> Result<LogDensity> {
        target.eval(self.positions.row(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_gaussian_shift_model;
    use crate::rng::{stream, Phase};
    use approx::assert_relative_eq;

    #[test]
    fn init_caches_are_coherent() {
        let target = build_gaussian_shift_model(3).unwrap();
        let mut rng = stream(1, Phase::Init, 0, 0, 0);
        let cloud = ParticleCloud::from_prior(&target, 32, &mut rng).unwrap();
        for i in [0, 7, 31] {
            let d = cloud.recomputed_density(&target, i).unwrap();
            assert_eq!(d.log_lik, cloud.cached_loglik[i]);
            assert_eq!(d.log_prior, cloud.cached_logprior[i]);
        }
    }

    #[test]
    fn weighted_moments_reduce_to_plain_moments_on_uniform_weights() {
        let target = build_gaussian_shift_model(2).unwrap();
        let mut rng = stream(2, Phase::Init, 0, 0, 0);
        let cloud = ParticleCloud::from_prior(&target, 500, &mut rng).unwrap();
        let mean = cloud.weighted_mean().unwrap();
        let plain = cloud.positions.mean_axis(ndarray::Axis(0)).unwrap();
        for j in 0..2 {
            assert_relative_eq!(mean[j], plain[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_weights_error() {
        let target = build_gaussian_shift_model(2).unwrap();
        let mut rng = stream(3, Phase::Init, 0, 0, 0);
        let mut cloud = ParticleCloud::from_prior(&target, 8, &mut rng).unwrap();
        cloud.log_weights.fill(f64::NEG_INFINITY);
        assert!(matches!(
            cloud.normalized_weights(),
            Err(Error::DegenerateCloud)
        ));
    }
}
