//! Heavy-tailed toy target: tempering from an isotropic Student-t with 3
//! degrees of freedom to a shifted correlated Student-t with 10 degrees of
//! freedom, location and scale as in the Gaussian shift model.

use super::gaussian::{correlated_cov, linspace};
use super::{Model, TemperedTarget};
use crate::error::{Error, Result};
use crate::numeric::MvNormal;
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

/// Multivariate Student-t with the scale matrix held as a Gaussian helper
/// (reusing its Cholesky machinery for solves and determinants).
struct MvStudent {
    nu: f64,
    scale: MvNormal,
    log_norm: f64,
}

impl MvStudent {
    fn new(nu: f64, location: Array1<f64>, scale: Array2<f64>) -> Result<Self> {
        let d = location.len() as f64;
        let gauss = MvNormal::new(location, scale)?;
        let log_norm = ln_gamma((nu + d) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * d * (nu * std::f64::consts::PI).ln()
            - 0.5 * gauss.log_det();
        Ok(Self {
            nu,
            scale: gauss,
            log_norm,
        })
    }

    fn dim(&self) -> f64 {
        self.scale.dim() as f64
    }

    fn logpdf(&self, x: ArrayView1<'_, f64>) -> f64 {
        let q = self.scale.mahalanobis_sq(x);
        self.log_norm - 0.5 * (self.nu + self.dim()) * (q / self.nu).ln_1p()
    }

    /// grad log t = -(nu + d) / (nu + q) * S^{-1}(x - mu).
    fn grad_logpdf(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let q = self.scale.mahalanobis_sq(x);
        let z = self.scale.precision_mul(x);
        z * (-(self.nu + self.dim()) / (self.nu + q))
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Array1<f64> {
        let d = self.scale.dim();
        let chi2 = ChiSquared::new(self.nu).expect("nu > 0");
        let w: f64 = chi2.sample(rng);
        let factor = (self.nu / w).sqrt();
        let z = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        let l = self.scale.chol_lower();
        self.scale.mean() + l.dot(&z) * factor
    }
}

pub struct StudentModel {
    dim: usize,
    prior: MvStudent,
    target: MvStudent,
}

impl StudentModel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("student model requires dim >= 2".into()));
        }
        let prior = MvStudent::new(3.0, Array1::zeros(dim), Array2::eye(dim))?;
        let variances = linspace(0.1, 10.0, dim);
        let target = MvStudent::new(
            10.0,
            Array1::from_elem(dim, 2.0),
            correlated_cov(&variances, 0.7),
        )?;
        Ok(Self { dim, prior, target })
    }
}

impl Model for StudentModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.prior.logpdf(x)
    }

    fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.target.logpdf(x) - self.prior.logpdf(x)
    }

    fn grad_log_prior(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.prior.grad_logpdf(x)
    }

    fn grad_log_likelihood(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.target.grad_logpdf(x) - self.prior.grad_logpdf(x)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim));
        for i in 0..n {
            out.row_mut(i).assign(&self.prior.sample(rng));
        }
        out
    }
}

/// Build the shifted correlated Student-t target of dimension `d >= 2`.
pub fn build_student_model(dim: usize) -> Result<TemperedTarget> {
    Ok(TemperedTarget::new(std::sync::Arc::new(StudentModel::new(
        dim,
    )?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::check_gradients;
    use approx::assert_relative_eq;
    use ndarray::array;

    /// Independent re-derivation of the multivariate-t log-density for the
    /// d=2 identity-scale case.
    fn t_logpdf_oracle(nu: f64, d: f64, q: f64, log_det_scale: f64) -> f64 {
        ln_gamma((nu + d) / 2.0) - ln_gamma(nu / 2.0)
            - 0.5 * d * (nu * std::f64::consts::PI).ln()
            - 0.5 * log_det_scale
            - 0.5 * (nu + d) * (1.0 + q / nu).ln()
    }

    #[test]
    fn rejects_small_dims() {
        assert!(build_student_model(1).is_err());
    }

    #[test]
    fn prior_density_matches_closed_form() {
        let m = StudentModel::new(2).unwrap();
        let x = array![1.0, -0.5];
        let q = 1.25;
        assert_relative_eq!(
            m.log_prior(x.view()),
            t_logpdf_oracle(3.0, 2.0, q, 0.0),
            max_relative = 1e-12
        );
    }

    #[test]
    fn target_tail_decay_matches_closed_form() {
        // Density along mu + r e_1: with S = target scale, the quadratic is
        // q(r) = r^2 (S^{-1})_{11}; reconstructed here independently.
        let m = StudentModel::new(3).unwrap();
        let variances = linspace(0.1, 10.0, 3);
        let cov = correlated_cov(&variances, 0.7);
        let s = nalgebra::DMatrix::from_fn(3, 3, |i, j| cov[[i, j]]);
        let s_inv = nalgebra::Cholesky::new(s.clone()).unwrap().inverse();
        let log_det = nalgebra::Cholesky::new(s)
            .unwrap()
            .l()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>()
            * 2.0;
        for r in [0.5, 2.0, 8.0, 30.0] {
            let x = array![2.0 + r, 2.0, 2.0];
            let q = r * r * s_inv[(0, 0)];
            let target_logpdf = m.log_likelihood(x.view()) + m.log_prior(x.view());
            assert_relative_eq!(
                target_logpdf,
                t_logpdf_oracle(10.0, 3.0, q, log_det),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn lambda_zero_reduces_to_t3() {
        let target = build_student_model(2).unwrap();
        let x = array![0.7, -1.3];
        assert_eq!(
            target.tempered_logpdf(x.view(), 0.0).unwrap(),
            target.model().log_prior(x.view())
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(&build_student_model(4).unwrap(), 30, 21, 1e-5);
    }

    #[test]
    fn prior_samples_have_heavy_tails_but_zero_median() {
        let target = build_student_model(2).unwrap();
        let mut rng = crate::rng::stream(5, crate::rng::Phase::Init, 0, 0, 0);
        let xs = target.sample_prior(&mut rng, 4000);
        let mut col: Vec<f64> = xs.column(0).to_vec();
        col.sort_by(f64::total_cmp);
        let median = col[2000];
        assert!(median.abs() < 0.1, "median {median}");
        // t_3 kurtosis: a non-trivial share of |x| > 4 draws.
        let extreme = col.iter().filter(|v| v.abs() > 4.0).count();
        assert!(extreme > 10, "only {extreme} extreme draws");
    }
}
