//! Gaussian toy targets: tempering from an isotropic normal to a shifted
//! correlated normal, and to a two-component mixture of correlated normals.
//!
//! Both models define the likelihood as the ratio of normalized densities
//! `pi_T(x) / pi_0(x)`, so the tempered path interpolates between the two
//! normalized distributions and the true normalizing-constant ratio is 1.

use super::{Model, TemperedTarget};
use crate::error::{Error, Result};
use crate::numeric::{logsumexp, MvNormal, LN_2PI};
use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use rand::RngCore;
use rand_distr::StandardNormal;

/// `d` equally spaced points on `[lo, hi]`; a single point collapses to `lo`.
pub(crate) fn linspace(lo: f64, hi: f64, d: usize) -> Array1<f64> {
    if d == 1 {
        return Array1::from_elem(1, lo);
    }
    let step = (hi - lo) / (d - 1) as f64;
    Array1::from_shape_fn(d, |j| lo + step * j as f64)
}

/// Covariance with unit-diagonal correlation `rho` and the given marginal
/// variances: `D^{1/2} C D^{1/2}`.
pub(crate) fn correlated_cov(variances: &Array1<f64>, rho: f64) -> Array2<f64> {
    let d = variances.len();
    Array2::from_shape_fn((d, d), |(i, j)| {
        let c = if i == j { 1.0 } else { rho };
        c * (variances[i] * variances[j]).sqrt()
    })
}

/// Tempering from N(0, I) to a shifted correlated Gaussian N(2*1, Xi) with
/// marginal variances equally spaced on [0.1, 10] and correlation 0.7.
pub struct GaussianShiftModel {
    dim: usize,
    target: MvNormal,
}

impl GaussianShiftModel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(
                "gaussian shift model requires dim >= 2".into(),
            ));
        }
        let variances = linspace(0.1, 10.0, dim);
        let cov = correlated_cov(&variances, 0.7);
        let target = MvNormal::new(Array1::from_elem(dim, 2.0), cov)?;
        Ok(Self { dim, target })
    }

    pub fn target_mean(&self) -> Array1<f64> {
        self.target.mean()
    }

    pub fn target_cov(&self) -> Array2<f64> {
        self.target.covariance()
    }

    fn log_prior_at(&self, x: ArrayView1<'_, f64>) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.dim as f64 * LN_2PI
    }

    /// The tempered density `pi_0^{1-lambda} pi_T^lambda` is itself Gaussian;
    /// exact parameters for oracle tests and exact sampling at any lambda.
    pub fn tempered_gaussian(&self, lambda: f64) -> MvNormal {
        let d = self.dim;
        let xi = self.target.covariance();
        let xi = DMatrix::from_fn(d, d, |i, j| xi[[i, j]]);
        let xi_chol = Cholesky::new(xi).expect("target covariance is PD");
        let xi_inv = xi_chol.inverse();
        let a = DMatrix::identity(d, d) * (1.0 - lambda) + &xi_inv * lambda;
        let mu = DVector::from_element(d, 2.0);
        let b = &xi_inv * &mu * lambda;
        let a_chol = Cholesky::new(a).expect("tempered precision is PD");
        let mean = a_chol.solve(&b);
        let cov = a_chol.inverse();
        MvNormal::new(
            Array1::from_iter(mean.iter().cloned()),
            Array2::from_shape_fn((d, d), |(i, j)| cov[(i, j)]),
        )
        .expect("tempered covariance is PD")
    }

    /// Exact log Z_lambda / Z_0 of the geometric bridge; 0 at both endpoints.
    pub fn log_z(&self, lambda: f64) -> f64 {
        let d = self.dim;
        let xi = self.target.covariance();
        let xi = DMatrix::from_fn(d, d, |i, j| xi[[i, j]]);
        let xi_chol = Cholesky::new(xi).expect("target covariance is PD");
        let log_det_xi: f64 = xi_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let xi_inv = xi_chol.inverse();
        let mu = DVector::from_element(d, 2.0);
        let a = DMatrix::identity(d, d) * (1.0 - lambda) + &xi_inv * lambda;
        let b = &xi_inv * &mu * lambda;
        let a_chol = Cholesky::new(a).expect("tempered precision is PD");
        let log_det_a: f64 = a_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let quad = b.dot(&a_chol.solve(&b));
        -0.5 * lambda * mu.dot(&(&xi_inv * &mu)) - 0.5 * lambda * log_det_xi - 0.5 * log_det_a
            + 0.5 * quad
    }
}

impl Model for GaussianShiftModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.log_prior_at(x)
    }

    fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.target.logpdf(x) - self.log_prior_at(x)
    }

    fn grad_log_prior(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        -x.to_owned()
    }

    fn grad_log_likelihood(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.target.grad_logpdf(x) + x.to_owned()
    }

    fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, self.dim), |_| {
            rand::Rng::sample::<f64, _>(rng, StandardNormal)
        })
    }
}

/// Build the shifted correlated Gaussian target of dimension `d >= 2`.
pub fn build_gaussian_shift_model(dim: usize) -> Result<TemperedTarget> {
    Ok(TemperedTarget::new(std::sync::Arc::new(
        GaussianShiftModel::new(dim)?,
    )))
}

/// Tempering from N(1, 5 I) to 0.3 N(4*1, Xi_1) + 0.7 N(-4*1, Xi_2) with
/// marginal variances equally spaced on [1, 2] and correlations 0.7 / 0.1.
pub struct MixtureModel {
    dim: usize,
    prior: MvNormal,
    comps: [(f64, MvNormal); 2],
}

impl MixtureModel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 1 {
            return Err(Error::Config("mixture model requires dim >= 1".into()));
        }
        let variances = linspace(1.0, 2.0, dim);
        let prior = MvNormal::new(
            Array1::from_elem(dim, 1.0),
            Array2::from_diag(&Array1::from_elem(dim, 5.0)),
        )?;
        let comp1 = MvNormal::new(
            Array1::from_elem(dim, 4.0),
            correlated_cov(&variances, 0.7),
        )?;
        let comp2 = MvNormal::new(
            Array1::from_elem(dim, -4.0),
            correlated_cov(&variances, 0.1),
        )?;
        Ok(Self {
            dim,
            prior,
            comps: [(0.3, comp1), (0.7, comp2)],
        })
    }

    fn log_target(&self, x: ArrayView1<'_, f64>) -> f64 {
        let terms: Vec<f64> = self
            .comps
            .iter()
            .map(|(w, c)| w.ln() + c.logpdf(x))
            .collect();
        logsumexp(&terms)
    }

    fn grad_log_target(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let terms: Vec<f64> = self
            .comps
            .iter()
            .map(|(w, c)| w.ln() + c.logpdf(x))
            .collect();
        let total = logsumexp(&terms);
        let mut g = Array1::zeros(self.dim);
        for ((_, comp), term) in self.comps.iter().zip(&terms) {
            let resp = (term - total).exp();
            g.zip_mut_with(&comp.grad_logpdf(x), |a, b| *a += resp * b);
        }
        g
    }
}

impl Model for MixtureModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.prior.logpdf(x)
    }

    fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.log_target(x) - self.prior.logpdf(x)
    }

    fn grad_log_prior(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.prior.grad_logpdf(x)
    }

    fn grad_log_likelihood(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.grad_log_target(x) - self.prior.grad_logpdf(x)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim));
        for i in 0..n {
            out.row_mut(i).assign(&self.prior.sample(rng));
        }
        out
    }
}

/// Build the two-component Gaussian mixture target of dimension `d >= 1`.
pub fn build_mixture_model(dim: usize) -> Result<TemperedTarget> {
    Ok(TemperedTarget::new(std::sync::Arc::new(MixtureModel::new(
        dim,
    )?)))
}

/// Diagonal Gaussian bridge between two fully specified normals, with every
/// tempered quantity available in closed form. Not part of the benchmark
/// zoo; used for exact-invariance and unbiasedness diagnostics at any
/// dimension (including 1).
pub struct GaussianPairModel {
    prior_mean: Array1<f64>,
    prior_var: Array1<f64>,
    target_mean: Array1<f64>,
    target_var: Array1<f64>,
}

impl GaussianPairModel {
    pub fn new(
        prior_mean: Array1<f64>,
        prior_var: Array1<f64>,
        target_mean: Array1<f64>,
        target_var: Array1<f64>,
    ) -> Result<Self> {
        let d = prior_mean.len();
        if [prior_var.len(), target_mean.len(), target_var.len()] != [d, d, d] {
            return Err(Error::Config("gaussian pair shape mismatch".into()));
        }
        if prior_var.iter().chain(target_var.iter()).any(|v| *v <= 0.0) {
            return Err(Error::Config("gaussian pair variances must be positive".into()));
        }
        Ok(Self {
            prior_mean,
            prior_var,
            target_mean,
            target_var,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(
            Array1::zeros(dim),
            Array1::ones(dim),
            Array1::zeros(dim),
            Array1::ones(dim),
        )
        .expect("valid by construction")
    }

    fn diag_logpdf(x: ArrayView1<'_, f64>, mean: &Array1<f64>, var: &Array1<f64>) -> f64 {
        x.iter()
            .zip(mean.iter().zip(var.iter()))
            .map(|(&xi, (&mi, &vi))| -0.5 * ((xi - mi) * (xi - mi) / vi + LN_2PI + vi.ln()))
            .sum()
    }

    /// Mean and standard deviation of the (Gaussian) tempered density.
    pub fn tempered_params(&self, lambda: f64) -> (Array1<f64>, Array1<f64>) {
        let d = self.prior_mean.len();
        let mut mean = Array1::zeros(d);
        let mut sd = Array1::zeros(d);
        for j in 0..d {
            let a = (1.0 - lambda) / self.prior_var[j] + lambda / self.target_var[j];
            let b = (1.0 - lambda) * self.prior_mean[j] / self.prior_var[j]
                + lambda * self.target_mean[j] / self.target_var[j];
            mean[j] = b / a;
            sd[j] = (1.0 / a).sqrt();
        }
        (mean, sd)
    }

    /// Exact log Z_lambda of the geometric bridge (0 at both endpoints).
    pub fn log_z(&self, lambda: f64) -> f64 {
        let mut total = 0.0;
        for j in 0..self.prior_mean.len() {
            let (v0, v1) = (self.prior_var[j], self.target_var[j]);
            let (m0, m1) = (self.prior_mean[j], self.target_mean[j]);
            let a = (1.0 - lambda) / v0 + lambda / v1;
            let b = (1.0 - lambda) * m0 / v0 + lambda * m1 / v1;
            let c = -0.5 * ((1.0 - lambda) * m0 * m0 / v0 + lambda * m1 * m1 / v1)
                - 0.5 * ((1.0 - lambda) * (LN_2PI + v0.ln()) + lambda * (LN_2PI + v1.ln()));
            total += 0.5 * (LN_2PI - a.ln()) + c + b * b / (2.0 * a);
        }
        total
    }
}

impl Model for GaussianPairModel {
    fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn log_prior(&self, x: ArrayView1<'_, f64>) -> f64 {
        Self::diag_logpdf(x, &self.prior_mean, &self.prior_var)
    }

    fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64 {
        Self::diag_logpdf(x, &self.target_mean, &self.target_var) - self.log_prior(x)
    }

    fn grad_log_prior(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_shape_fn(self.dim(), |j| {
            -(x[j] - self.prior_mean[j]) / self.prior_var[j]
        })
    }

    fn grad_log_likelihood(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_shape_fn(self.dim(), |j| {
            -(x[j] - self.target_mean[j]) / self.target_var[j]
                + (x[j] - self.prior_mean[j]) / self.prior_var[j]
        })
    }

    fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, self.dim()), |(_, j)| {
            self.prior_mean[j]
                + self.prior_var[j].sqrt() * rand::Rng::sample::<f64, _>(rng, StandardNormal)
        })
    }
}
