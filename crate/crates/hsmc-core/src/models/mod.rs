//! Target distributions: the tempered-target interface plus the shipped
//! models (Gaussian shift, Gaussian mixture, Student-t shift, binary
//! regression, log Gaussian Cox grid).

mod binary;
mod gaussian;
mod lgcp;
mod student;

pub use binary::{
    build_logit_model, build_probit_model, laplace_init, laplace_init_from, load_binary_dataset,
    with_gaussian_init, BinaryDataset, Link,
};
pub use gaussian::{
    build_gaussian_shift_model, build_mixture_model, GaussianPairModel, GaussianShiftModel,
};
pub use lgcp::{build_lgcp_model, cell_intensity_scale, load_point_pattern, synthetic_counts, LgcpGrid};
pub use student::build_student_model;

use crate::error::{Error, Result};
use crate::numeric::all_finite;
use ndarray::{Array1, Array2, ArrayView1};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Prior and likelihood log-densities at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensity {
    pub log_prior: f64,
    pub log_lik: f64,
}

impl LogDensity {
    /// log p(x) + lambda * log l(y|x).
    pub fn tempered(&self, lambda: f64) -> f64 {
        self.log_prior + lambda * self.log_lik
    }
}

/// A prior/likelihood pair with analytic gradients and prior sampling.
///
/// Implementations must be pure: the same `x` always produces the same
/// values, and nothing is mutated by evaluation.
pub trait Model: Send + Sync {
    fn dim(&self) -> usize;
    fn log_prior(&self, x: ArrayView1<'_, f64>) -> f64;
    fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64;
    fn grad_log_prior(&self, x: ArrayView1<'_, f64>) -> Array1<f64>;
    fn grad_log_likelihood(&self, x: ArrayView1<'_, f64>) -> Array1<f64>;
    /// Draw `n` prior samples as an `n x d` matrix.
    fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64>;
}

/// Monotone evaluation counters, shared across parallel particle moves.
#[derive(Debug, Default)]
pub struct EvalCounters {
    likelihood: AtomicU64,
    gradient: AtomicU64,
}

impl EvalCounters {
    pub fn likelihood(&self) -> u64 {
        self.likelihood.load(Ordering::Relaxed)
    }

    pub fn gradient(&self) -> u64 {
        self.gradient.load(Ordering::Relaxed)
    }

    fn bump_likelihood(&self) {
        self.likelihood.fetch_add(1, Ordering::Relaxed);
    }

    fn bump_gradient(&self) {
        self.gradient.fetch_add(1, Ordering::Relaxed);
    }
}

/// A model together with its evaluation counters; the unit every sampler
/// component works against.
#[derive(Clone)]
pub struct TemperedTarget {
    model: Arc<dyn Model>,
    counters: Arc<EvalCounters>,
}

impl TemperedTarget {
    pub fn new(model: Arc<dyn Model>) -> Self {
        Self {
            model,
            counters: Arc::new(EvalCounters::default()),
        }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn counters(&self) -> &EvalCounters {
        &self.counters
    }

    pub fn model(&self) -> &Arc<dyn Model> {
        &self.model
    }

    /// Evaluate prior and likelihood log-densities; one likelihood evaluation.
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Result<LogDensity> {
        if !all_finite(x) {
            return Err(Error::InvalidState);
        }
        self.counters.bump_likelihood();
        Ok(LogDensity {
            log_prior: self.model.log_prior(x),
            log_lik: self.model.log_likelihood(x),
        })
    }

    /// log p(x) + lambda * log l(y|x); one likelihood evaluation.
    pub fn tempered_logpdf(&self, x: ArrayView1<'_, f64>, lambda: f64) -> Result<f64> {
        Ok(self.eval(x)?.tempered(lambda))
    }

    /// grad log p(x) + lambda * grad log l(y|x); one gradient evaluation.
    pub fn tempered_grad(&self, x: ArrayView1<'_, f64>, lambda: f64) -> Result<Array1<f64>> {
        if !all_finite(x) {
            return Err(Error::InvalidState);
        }
        self.counters.bump_gradient();
        let mut g = self.model.grad_log_prior(x);
        let gl = self.model.grad_log_likelihood(x);
        g.zip_mut_with(&gl, |a, b| *a += lambda * b);
        Ok(g)
    }

    /// Draw `n` prior samples.
    pub fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        self.model.sample_prior(rng, n)
    }
}

/// Model selector used by configs and the CLI.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Grid side for the Cox-process model (total dimension is side^2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    /// CSV with predictors and a binary label column (logit/probit models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    /// Drop predictors whose absolute correlation with an earlier column
    /// exceeds this threshold (left-to-right scan).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_correlated: Option<f64>,
    /// Replace the N(0, I) initial distribution of binary-regression models
    /// by a Laplace approximation of the posterior (default true).
    #[serde(default = "default_true")]
    pub laplace_init: bool,
    /// Optional point-pattern CSV for the Cox-process model; two columns in
    /// [0,1)^2, binned to the grid. Without it a bundled synthetic count
    /// grid is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn toy(name: &str, dim: usize) -> Self {
        Self {
            name: name.to_string(),
            dim: Some(dim),
            side: None,
            dataset: None,
            label_column: None,
            drop_correlated: None,
            laplace_init: true,
            points: None,
        }
    }
}

/// Build a tempered target from its spec.
pub fn build_model(spec: &ModelSpec) -> Result<TemperedTarget> {
    let need_dim = || {
        spec.dim
            .ok_or_else(|| Error::Config(format!("model '{}' requires a dimension", spec.name)))
    };
    match spec.name.as_str() {
        "gaussian" => build_gaussian_shift_model(need_dim()?),
        "mixture" => build_mixture_model(need_dim()?),
        "student" => build_student_model(need_dim()?),
        "logit" | "probit" => {
            let path = spec
                .dataset
                .as_ref()
                .ok_or_else(|| Error::Config("binary regression requires a dataset".into()))?;
            let label = spec
                .label_column
                .as_deref()
                .ok_or_else(|| Error::Config("binary regression requires a label column".into()))?;
            let mut data = load_binary_dataset(path, label)?;
            if let Some(threshold) = spec.drop_correlated {
                data = data.drop_correlated(threshold);
            }
            let target = match spec.name.as_str() {
                "logit" => build_logit_model(data)?,
                _ => build_probit_model(data)?,
            };
            if spec.laplace_init {
                let init = laplace_init(&target)?;
                Ok(with_gaussian_init(&target, init))
            } else {
                Ok(target)
            }
        }
        "lgcp" => {
            let side = spec
                .side
                .or(spec.dim)
                .ok_or_else(|| Error::Config("lgcp requires a grid side".into()))?;
            let counts = match &spec.points {
                Some(path) => load_point_pattern(path, side)?,
                None => synthetic_counts(side),
            };
            build_lgcp_model(side, counts)
        }
        other => Err(Error::Config(format!("unknown model '{other}'"))),
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;

    /// Central finite differences of the tempered log-density; the
    /// independent oracle for gradient checks.
    pub fn fd_tempered_grad(
        target: &TemperedTarget,
        x: ArrayView1<'_, f64>,
        lambda: f64,
        h: f64,
    ) -> Array1<f64> {
        let d = x.len();
        let mut g = Array1::zeros(d);
        let mut xp = x.to_owned();
        for j in 0..d {
            let orig = xp[j];
            xp[j] = orig + h;
            let hi = target.tempered_logpdf(xp.view(), lambda).unwrap();
            xp[j] = orig - h;
            let lo = target.tempered_logpdf(xp.view(), lambda).unwrap();
            xp[j] = orig;
            g[j] = (hi - lo) / (2.0 * h);
        }
        g
    }

    /// Relative L2 error between analytic and finite-difference gradients.
    pub fn grad_rel_err(target: &TemperedTarget, x: ArrayView1<'_, f64>, lambda: f64) -> f64 {
        let ana = target.tempered_grad(x, lambda).unwrap();
        let fd = fd_tempered_grad(target, x, lambda, 1e-5);
        let num = (&ana - &fd).mapv(|v| v * v).sum().sqrt();
        let den = ana.mapv(|v| v * v).sum().sqrt().max(1.0);
        num / den
    }

    /// Check the gradient at `n` points drawn near the prior scale.
    pub fn check_gradients(target: &TemperedTarget, n: usize, seed: u64, tol: f64) {
        let mut rng = crate::rng::stream(seed, crate::rng::Phase::Init, 0, 0, 0);
        for k in 0..n {
            let x = Array1::from_shape_fn(target.dim(), |_| rng.random_range(-2.0..2.0));
            let lambda = rng.random_range(0.0..1.0);
            let err = grad_rel_err(target, x.view(), lambda);
            assert!(
                err < tol,
                "gradient mismatch at point {k}: rel err {err:.3e} >= {tol:.1e}"
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn tempered_logpdf_standard_normal_at_origin() {
        let target = build_gaussian_shift_model(2).unwrap();
        let v = target.tempered_logpdf(array![0.0, 0.0].view(), 0.0).unwrap();
        assert_relative_eq!(v, -crate::numeric::LN_2PI, max_relative = 1e-12);
    }

    #[test]
    fn lambda_zero_equals_log_prior() {
        let target = build_mixture_model(3).unwrap();
        let x = array![0.3, -0.7, 1.1];
        let lp = target.model().log_prior(x.view());
        assert_eq!(target.tempered_logpdf(x.view(), 0.0).unwrap(), lp);
    }

    #[test]
    fn tempered_grad_prior_only() {
        let target = build_gaussian_shift_model(2).unwrap();
        let g = target.tempered_grad(array![1.0, -2.0].view(), 0.0).unwrap();
        assert_relative_eq!(g[0], -1.0, max_relative = 1e-12);
        assert_relative_eq!(g[1], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let target = build_gaussian_shift_model(2).unwrap();
        assert!(matches!(
            target.tempered_logpdf(array![f64::NAN, 0.0].view(), 0.5),
            Err(Error::InvalidState)
        ));
        assert!(matches!(
            target.tempered_grad(array![f64::INFINITY, 0.0].view(), 0.5),
            Err(Error::InvalidState)
        ));
    }

    #[test]
    fn counters_track_each_call_exactly() {
        let target = build_gaussian_shift_model(2).unwrap();
        let x = array![0.1, 0.2];
        assert_eq!(target.counters().likelihood(), 0);
        target.tempered_logpdf(x.view(), 0.3).unwrap();
        target.eval(x.view()).unwrap();
        target.tempered_grad(x.view(), 0.3).unwrap();
        assert_eq!(target.counters().likelihood(), 2);
        assert_eq!(target.counters().gradient(), 1);
        // Failed calls do not count.
        let _ = target.tempered_logpdf(array![f64::NAN, 0.0].view(), 0.5);
        assert_eq!(target.counters().likelihood(), 2);
    }

    #[test]
    fn build_model_rejects_unknown_names() {
        assert!(build_model(&ModelSpec::toy("nope", 3)).is_err());
    }
}
