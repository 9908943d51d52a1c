use super::cloud::ParticleCloud;
use crate::error::Result;
use ndarray::Array1;

/// Variance floor applied before inverting, so fully collapsed clouds still
/// produce a finite mass matrix.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Diagonal mass matrix: masses are inverse componentwise particle variances.
#[derive(Debug, Clone)]
pub struct MassMatrix {
    /// Masses, 1 / var_j.
    pub diag: Array1<f64>,
    /// Inverse masses, var_j.
    pub inv_diag: Array1<f64>,
    /// sqrt(diag), used to draw momenta p = sqrt(M) xi.
    pub sqrt_diag: Array1<f64>,
}

impl MassMatrix {
    pub fn from_variances(var: &Array1<f64>) -> Self {
        let inv_diag = var.mapv(|v| v.max(VARIANCE_FLOOR));
        let diag = inv_diag.mapv(|v| 1.0 / v);
        let sqrt_diag = diag.mapv(f64::sqrt);
        Self {
            diag,
            inv_diag,
            sqrt_diag,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_variances(&Array1::ones(dim))
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Squared Mahalanobis displacement sum_j diag_j (a_j - b_j)^2, the
    /// quadratic form with the mass matrix (inverse particle covariance).
    pub fn mahalanobis_sq(&self, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        self.diag
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(&m, (&ai, &bi))| m * (ai - bi) * (ai - bi))
            .sum()
    }

    /// Kinetic energy 1/2 p^T M^{-1} p.
    pub fn kinetic(&self, p: &Array1<f64>) -> f64 {
        0.5 * self
            .inv_diag
            .iter()
            .zip(p.iter())
            .map(|(&v, &pi)| v * pi * pi)
            .sum::<f64>()
    }
}

/// Refresh the mass matrix from the weighted componentwise particle
/// variances, floored at `VARIANCE_FLOOR`.
pub fn update_mass_matrix(cloud: &ParticleCloud) -> Result<MassMatrix> {
    let var = cloud.weighted_var_diag()?;
    Ok(MassMatrix::from_variances(&var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    fn cloud_with_positions(positions: Array2<f64>) -> ParticleCloud {
        let n = positions.nrows();
        ParticleCloud {
            positions,
            log_weights: Array1::zeros(n),
            cached_loglik: Array1::zeros(n),
            cached_logprior: Array1::zeros(n),
            resampled: true,
        }
    }

    #[test]
    fn masses_invert_componentwise_variances() {
        let m = MassMatrix::from_variances(&array![4.0, 1.0]);
        assert_relative_eq!(m.diag[0], 0.25, max_relative = 1e-15);
        assert_relative_eq!(m.diag[1], 1.0, max_relative = 1e-15);
        for j in 0..2 {
            assert_relative_eq!(m.diag[j] * m.inv_diag[j], 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn identical_particles_hit_the_floor() {
        let positions = Array2::from_elem((16, 3), 1.3);
        let m = update_mass_matrix(&cloud_with_positions(positions)).unwrap();
        for j in 0..3 {
            assert!(m.diag[j].is_finite() && m.diag[j] > 0.0);
            assert_relative_eq!(m.inv_diag[j], VARIANCE_FLOOR, max_relative = 1e-12);
        }
    }

    #[test]
    fn monte_carlo_variances_recovered_within_5_percent() {
        use rand::Rng;
        let sigmas = [0.5_f64, 2.0, 7.0];
        let n = 100_000;
        let mut rng = crate::rng::stream(4, crate::rng::Phase::Init, 0, 0, 0);
        let mut positions = Array2::zeros((n, 3));
        for i in 0..n {
            for (j, s) in sigmas.iter().enumerate() {
                positions[[i, j]] =
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        let m = update_mass_matrix(&cloud_with_positions(positions)).unwrap();
        for (j, s) in sigmas.iter().enumerate() {
            let expect = 1.0 / (s * s);
            assert!(
                (m.diag[j] - expect).abs() / expect < 0.05,
                "mass[{j}] = {} vs 1/sigma^2 = {expect}",
                m.diag[j]
            );
        }
    }
}
