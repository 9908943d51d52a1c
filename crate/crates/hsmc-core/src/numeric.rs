//! Shared numerical helpers: log-space reductions, Gaussian utilities and a
//! dense multivariate normal backed by a Cholesky factorization.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Numerically stable log(sum(exp(v))). Returns -inf on an all-(-inf) input.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// log(1 + exp(x)) without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard normal log-density.
pub fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Log of the standard normal CDF, stable over the whole real line.
///
/// Below -30 the CDF underflows well before the log does, so the tail uses
/// the Mills-ratio expansion log Phi(z) = log phi(z) - log(-z) + log(1 - 1/z^2 + 3/z^4 - 15/z^6).
pub fn norm_logcdf(z: f64) -> f64 {
    if z < -30.0 {
        let z2 = z * z;
        let series = -1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        norm_logpdf(z) - (-z).ln() + series.ln_1p()
    } else if z > 8.0 {
        // log(1 - Q) ~ -Q for the tiny upper-tail mass Q.
        -norm_cdf(-z)
    } else {
        norm_cdf(z).ln()
    }
}

/// Inverse CDF of the standard normal (Acklam/Wichura via statrs).
pub fn norm_invcdf(p: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    statrs::distribution::Normal::standard().inverse_cdf(p)
}

/// Empirical quantile by linear interpolation on the sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn all_finite(x: ArrayView1<'_, f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Dense multivariate normal with precomputed Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl MvNormal {
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Config("covariance shape mismatch".into()));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
        let chol = Cholesky::new(cov)
            .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        Ok(Self {
            mean: DVector::from_iterator(d, mean.iter().cloned()),
            chol,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    /// Build from a precision (inverse covariance) matrix.
    pub fn from_precision(mean: Array1<f64>, precision: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        let prec = DMatrix::from_fn(d, d, |i, j| precision[[i, j]]);
        let cov = Cholesky::new(prec)
            .ok_or_else(|| Error::Config("precision is not positive definite".into()))?
            .inverse();
        let cov = Array2::from_shape_fn((d, d), |(i, j)| cov[(i, j)]);
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> Array1<f64> {
        Array1::from_iter(self.mean.iter().cloned())
    }

    pub fn covariance(&self) -> Array2<f64> {
        let l = self.chol.l();
        let cov = &l * l.transpose();
        Array2::from_shape_fn((self.dim(), self.dim()), |(i, j)| cov[(i, j)])
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol_lower(&self) -> Array2<f64> {
        let l = self.chol.l();
        Array2::from_shape_fn((self.dim(), self.dim()), |(i, j)| l[(i, j)])
    }

    /// log |Sigma|.
    pub fn log_det(&self) -> f64 {
        self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0
    }

    fn centered(&self, x: ArrayView1<'_, f64>) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().cloned()) - &self.mean
    }

    pub fn logpdf(&self, x: ArrayView1<'_, f64>) -> f64 {
        let diff = self.centered(x);
        let y = self.chol.l().solve_lower_triangular(&diff).unwrap();
        self.log_norm - 0.5 * y.norm_squared()
    }

    /// Gradient of the log-density: -Sigma^{-1}(x - mean).
    pub fn grad_logpdf(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let z = self.precision_mul(x);
        -z
    }

    /// Sigma^{-1}(x - mean).
    pub fn precision_mul(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let diff = self.centered(x);
        let z = self.chol.solve(&diff);
        Array1::from_iter(z.iter().cloned())
    }

    /// Squared Mahalanobis distance (x - mean)^T Sigma^{-1} (x - mean).
    pub fn mahalanobis_sq(&self, x: ArrayView1<'_, f64>) -> f64 {
        let diff = self.centered(x);
        let y = self.chol.l().solve_lower_triangular(&diff).unwrap();
        y.norm_squared()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Array1<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.mean + self.chol.l() * z;
        Array1::from_iter(x.iter().cloned())
    }
}
