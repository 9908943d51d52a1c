//! Bayesian binary regression: CSV ingestion with standardization, logit and
//! probit posteriors with stable log-space evaluation, and a Laplace
//! approximation used as the initial distribution of the tempered path.

use super::{Model, TemperedTarget};
use crate::error::{Error, Result};
use crate::numeric::{log1p_exp, norm_logcdf, norm_logpdf, MvNormal, LN_2PI};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::RngCore;
use rand_distr::StandardNormal;
use std::path::Path;
use std::sync::Arc;

/// A design matrix with intercept column, standardized predictors and
/// binary labels.
#[derive(Debug, Clone)]
pub struct BinaryDataset {
    /// J x d matrix; column 0 is the intercept, the rest are standardized.
    pub design: Array2<f64>,
    /// J labels in {0, 1}.
    pub labels: Array1<f64>,
    /// Column names; `names[0] == "intercept"`.
    pub names: Vec<String>,
}

impl BinaryDataset {
    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    /// Drop predictors whose absolute correlation with an earlier-indexed
    /// column exceeds `threshold`, scanning left to right. The intercept is
    /// always kept.
    pub fn drop_correlated(self, threshold: f64) -> Self {
        let j = self.n_obs() as f64;
        let mut kept: Vec<usize> = vec![0];
        for col in 1..self.dim() {
            let c = self.design.column(col);
            // Columns are standardized (mean 0, sample variance 1), so the
            // correlation is the normalized dot product.
            let correlated = kept[1..].iter().any(|&prev| {
                let p = self.design.column(prev);
                let corr = c.dot(&p) / (j - 1.0);
                corr.abs() > threshold
            });
            if !correlated {
                kept.push(col);
            }
        }
        let design = self.design.select(Axis(1), &kept);
        let names = kept.iter().map(|&k| self.names[k].clone()).collect();
        BinaryDataset {
            design,
            labels: self.labels,
            names,
        }
    }
}

/// Load a CSV with a header row, standardize the predictors (mean 0, sample
/// variance 1) and prepend an intercept column.
pub fn load_binary_dataset(path: impl AsRef<Path>, label_column: &str) -> Result<BinaryDataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Ingestion(format!("label column '{label_column}' not found")))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Ingestion(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (idx, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(Error::Ingestion(format!(
                    "missing value in column '{}' at row {}",
                    headers[idx],
                    line + 2
                )));
            }
            let value: f64 = field.parse().map_err(|_| {
                Error::Ingestion(format!(
                    "non-numeric value '{field}' in column '{}' at row {}",
                    headers[idx],
                    line + 2
                ))
            })?;
            if idx == label_idx {
                if value != 0.0 && value != 1.0 {
                    return Err(Error::Ingestion(format!(
                        "label column '{label_column}' must be binary, found {value}"
                    )));
                }
                labels.push(value);
            } else {
                row.push(value);
            }
        }
        rows.push(row);
    }
    let j = rows.len();
    if j < 2 {
        return Err(Error::Ingestion("need at least two observations".into()));
    }
    let p = headers.len() - 1;
    let mut design = Array2::zeros((j, p + 1));
    design.column_mut(0).fill(1.0);
    let mut names = Vec::with_capacity(p + 1);
    names.push("intercept".to_string());
    let predictor_names: Vec<&String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h)
        .collect();

    for (col, name) in predictor_names.iter().enumerate() {
        let values: Vec<f64> = rows.iter().map(|r| r[col]).collect();
        let mean = values.iter().sum::<f64>() / j as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (j as f64 - 1.0);
        if var <= 0.0 {
            return Err(Error::Ingestion(format!(
                "column '{name}' is constant (zero variance)"
            )));
        }
        let sd = var.sqrt();
        for (i, v) in values.iter().enumerate() {
            design[[i, col + 1]] = (v - mean) / sd;
        }
        names.push((*name).clone());
    }

    Ok(BinaryDataset {
        design,
        labels: Array1::from_vec(labels),
        names,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Logit,
    Probit,
}

/// Binary regression posterior with N(0, I) prior on the coefficients.
pub struct BinaryRegressionModel {
    data: Arc<BinaryDataset>,
    link: Link,
}

impl BinaryRegressionModel {
    fn linear_predictor(&self, beta: ArrayView1<'_, f64>) -> Array1<f64> {
        self.data.design.dot(&beta)
    }
}

impl Model for BinaryRegressionModel {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn log_prior(&self, x: ArrayView1<'_, f64>) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.dim() as f64 * LN_2PI
    }

    fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64 {
        let s = self.linear_predictor(x);
        match self.link {
            // Per datum: -log(1 + exp(-s)) for y=1 and -log(1 + exp(s)) for y=0.
            Link::Logit => s
                .iter()
                .zip(self.data.labels.iter())
                .map(|(&si, &yi)| -log1p_exp(if yi > 0.5 { -si } else { si }))
                .sum(),
            Link::Probit => s
                .iter()
                .zip(self.data.labels.iter())
                .map(|(&si, &yi)| norm_logcdf(if yi > 0.5 { si } else { -si }))
                .sum(),
        }
    }

    fn grad_log_prior(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        -x.to_owned()
    }

    fn grad_log_likelihood(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let s = self.linear_predictor(x);
        let residual: Array1<f64> = match self.link {
            // y - sigmoid(s), evaluated through the stable tail form.
            Link::Logit => s
                .iter()
                .zip(self.data.labels.iter())
                .map(|(&si, &yi)| {
                    let sign = if yi > 0.5 { 1.0 } else { -1.0 };
                    sign / (1.0 + (sign * si).exp())
                })
                .collect(),
            // (2y-1) * phi(s~)/Phi(s~) with s~ = (2y-1) s.
            Link::Probit => s
                .iter()
                .zip(self.data.labels.iter())
                .map(|(&si, &yi)| {
                    let sign = if yi > 0.5 { 1.0 } else { -1.0 };
                    let st = sign * si;
                    sign * (norm_logpdf(st) - norm_logcdf(st)).exp()
                })
                .collect(),
        };
        self.data.design.t().dot(&residual)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, self.dim()), |_| {
            rand::Rng::sample::<f64, _>(rng, StandardNormal)
        })
    }
}

pub fn build_logit_model(data: BinaryDataset) -> Result<TemperedTarget> {
    Ok(TemperedTarget::new(Arc::new(BinaryRegressionModel {
        data: Arc::new(data),
        link: Link::Logit,
    })))
}

pub fn build_probit_model(data: BinaryDataset) -> Result<TemperedTarget> {
    Ok(TemperedTarget::new(Arc::new(BinaryRegressionModel {
        data: Arc::new(data),
        link: Link::Probit,
    })))
}

/// Laplace approximation N(m, H^{-1}) of the lambda=1 posterior, with the
/// mode found by gradient ascent (Barzilai-Borwein steps with backtracking)
/// and the Hessian by central differences of the gradient.
pub fn laplace_init(target: &TemperedTarget) -> Result<MvNormal> {
    laplace_init_from(target, Array1::zeros(target.dim()))
}

pub fn laplace_init_from(target: &TemperedTarget, start: Array1<f64>) -> Result<MvNormal> {
    const MAX_ITERS: usize = 1000;
    const GRAD_TOL: f64 = 1e-10;

    let f = |x: ArrayView1<'_, f64>| -> Result<f64> { target.tempered_logpdf(x, 1.0) };
    let grad = |x: ArrayView1<'_, f64>| -> Result<Array1<f64>> { target.tempered_grad(x, 1.0) };

    let mut x = start;
    let mut fx = f(x.view())?;
    let mut g = grad(x.view())?;
    if !g.iter().all(|v| v.is_finite()) || !fx.is_finite() {
        return Err(Error::Config(
            "laplace init: non-finite objective or gradient at start point".into(),
        ));
    }
    let mut step = 1.0 / (1.0 + g.mapv(|v| v * v).sum().sqrt());
    let mut prev: Option<(Array1<f64>, Array1<f64>)> = None;
    let mut converged = false;
    let mut iters = 0;

    for it in 0..MAX_ITERS {
        iters = it + 1;
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < GRAD_TOL {
            converged = true;
            break;
        }
        // Barzilai-Borwein step proposal from the previous pair.
        if let Some((dx, dg)) = &prev {
            let num = dx.dot(dx);
            let den = -dx.dot(dg); // ascent: dg aligns against dx
            if den > 0.0 && num.is_finite() {
                step = (num / den).clamp(1e-12, 1e6);
            }
        }
        // Backtracking on the ascent direction.
        let g2 = g.dot(&g);
        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x + &(&g * t);
            if let Ok(fc) = f(cand.view()) {
                if fc.is_finite() && fc >= fx + 1e-4 * t * g2 {
                    let gc = grad(cand.view())?;
                    prev = Some((&cand - &x, &gc - &g));
                    x = cand;
                    fx = fc;
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // Even the smallest step failed to improve; treat as stationary.
            converged = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-6;
            break;
        }
    }

    if !converged {
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm >= 1e-6 {
            return Err(Error::LaplaceNoConvergence {
                iters,
                grad_norm: gnorm,
                last_iterate: x.to_vec(),
            });
        }
    }

    // Negative Hessian via central differences of the gradient, symmetrized.
    let d = x.len();
    let mut h = Array2::zeros((d, d));
    for k in 0..d {
        let step = 1e-5 * (1.0 + x[k].abs());
        let mut xp = x.clone();
        xp[k] += step;
        let gp = grad(xp.view())?;
        xp[k] = x[k] - step;
        let gm = grad(xp.view())?;
        let col = (&gp - &gm) / (2.0 * step);
        for j in 0..d {
            h[[j, k]] -= col[j];
        }
    }
    let h = (&h + &h.t()) / 2.0;
    MvNormal::from_precision(x, h)
        .map_err(|_| Error::Config("laplace init: Hessian at the mode is not positive definite".into()))
}

/// Model wrapper that replaces the initial distribution by `init` and folds
/// the original prior into the likelihood, so the tempered path runs from
/// `init` to the unchanged posterior.
struct GaussianInitModel {
    inner: Arc<dyn Model>,
    init: MvNormal,
}

impl Model for GaussianInitModel {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_prior(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.init.logpdf(x)
    }

    fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.inner.log_prior(x) + self.inner.log_likelihood(x) - self.init.logpdf(x)
    }

    fn grad_log_prior(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.init.grad_logpdf(x)
    }

    fn grad_log_likelihood(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.inner.grad_log_prior(x) + self.inner.grad_log_likelihood(x)
            - self.init.grad_logpdf(x)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim()));
        for i in 0..n {
            out.row_mut(i).assign(&self.init.sample(rng));
        }
        out
    }
}

/// Rebase a target on a Gaussian initial distribution (fresh counters).
pub fn with_gaussian_init(target: &TemperedTarget, init: MvNormal) -> TemperedTarget {
    TemperedTarget::new(Arc::new(GaussianInitModel {
        inner: Arc::clone(target.model()),
        init,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::check_gradients;
    use approx::assert_relative_eq;
    use ndarray::array;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    /// Deterministic synthetic dataset for gradient and sampler tests.
    pub(crate) fn synthetic_dataset(j: usize, p: usize, seed: u64) -> BinaryDataset {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, crate::rng::Phase::Init, 0, 0, 7);
        let mut csv = String::from("y");
        for k in 0..p {
            csv.push_str(&format!(",x{k}"));
        }
        csv.push('\n');
        for _ in 0..j {
            let y = if rng.random_range(0.0..1.0) < 0.5 { 0 } else { 1 };
            csv.push_str(&y.to_string());
            for _ in 0..p {
                csv.push_str(&format!(",{:.6}", rng.random_range(-3.0..3.0)));
            }
            csv.push('\n');
        }
        let f = write_csv(&csv);
        load_binary_dataset(f.path(), "y").unwrap()
    }

    #[test]
    fn toy_standardization_is_exact() {
        let f = write_csv("y,x\n0,0\n1,2\n");
        let data = load_binary_dataset(f.path(), "y").unwrap();
        // Values {0, 2}: mean 1, sample variance 2, so standardized +-1/sqrt(2).
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert_relative_eq!(data.design[[0, 1]], -inv_sqrt2, max_relative = 1e-15);
        assert_relative_eq!(data.design[[1, 1]], inv_sqrt2, max_relative = 1e-15);
        assert_eq!(data.design.column(0).to_vec(), vec![1.0, 1.0]);
        let col = data.design.column(1);
        let mean = col.sum() / 2.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-10);
    }

    #[test]
    fn standardization_is_bit_reproducible() {
        let f = write_csv("y,a,b\n0,0.25,9\n1,1.5,-3\n1,-0.75,4.5\n0,2.25,1.5\n");
        let a = load_binary_dataset(f.path(), "y").unwrap();
        let b = load_binary_dataset(f.path(), "y").unwrap();
        assert_eq!(a.design, b.design);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn ingestion_errors() {
        assert!(matches!(
            load_binary_dataset("/nonexistent/file.csv", "y"),
            Err(Error::Ingestion(_))
        ));
        let f = write_csv("y,x\n0,1\n2,3\n");
        assert!(matches!(
            load_binary_dataset(f.path(), "y"),
            Err(Error::Ingestion(_))
        ));
        let f = write_csv("y,x\n0,5\n1,5\n");
        let err = load_binary_dataset(f.path(), "y").unwrap_err();
        assert!(err.to_string().contains("'x'"), "error should name the column: {err}");
        let f = write_csv("y,x\n0,\n1,2\n");
        assert!(matches!(
            load_binary_dataset(f.path(), "y"),
            Err(Error::Ingestion(_))
        ));
    }

    #[test]
    fn drop_correlated_removes_duplicate_columns() {
        let f = write_csv("y,a,b,c\n0,1,2,5\n1,2,4,1\n1,3,6,4\n0,4,8,2\n0,5,10,8\n1,6,12,3\n");
        let data = load_binary_dataset(f.path(), "y").unwrap();
        let reduced = data.drop_correlated(0.95);
        // b is an exact multiple of a and must go; c survives.
        assert_eq!(reduced.names, vec!["intercept", "a", "c"]);
        assert_eq!(reduced.dim(), 3);
    }

    #[test]
    fn logit_loglik_at_zero_is_minus_j_log2() {
        let data = synthetic_dataset(40, 3, 1);
        let target = build_logit_model(data).unwrap();
        let beta = Array1::zeros(4);
        let ll = target.model().log_likelihood(beta.view());
        assert_relative_eq!(ll, -(40.0) * 2.0_f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn logit_single_datum_at_zero() {
        let f = write_csv("y,x\n1,1\n0,-1\n");
        let data = load_binary_dataset(f.path(), "y").unwrap();
        let target = build_logit_model(data).unwrap();
        // beta = 0: each datum contributes -log 2.
        let ll = target.model().log_likelihood(array![0.0, 0.0].view());
        assert_relative_eq!(ll, -2.0 * 2.0_f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn probit_zero_predictor_contribution() {
        assert_relative_eq!(norm_logcdf(0.0), -(2.0_f64.ln()), max_relative = 1e-12);
        let data = synthetic_dataset(24, 2, 2);
        let target = build_probit_model(data).unwrap();
        let ll = target.model().log_likelihood(Array1::zeros(3).view());
        assert_relative_eq!(ll, -24.0 * 2.0_f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = synthetic_dataset(30, 3, 3);
        check_gradients(&build_logit_model(data.clone()).unwrap(), 25, 31, 1e-5);
        check_gradients(&build_probit_model(data).unwrap(), 25, 32, 1e-5);
    }

    #[test]
    fn probit_survives_extreme_linear_predictors() {
        let data = synthetic_dataset(20, 2, 4);
        let target = build_probit_model(data).unwrap();
        let beta = array![40.0, -35.0, 50.0];
        let ll = target.model().log_likelihood(beta.view());
        assert!(ll.is_finite(), "log-likelihood overflowed: {ll}");
        let g = target.model().grad_log_likelihood(beta.view());
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn laplace_is_exact_on_gaussian_posteriors() {
        let target = crate::models::build_gaussian_shift_model(3).unwrap();
        let model = crate::models::GaussianShiftModel::new(3).unwrap();
        let approx = laplace_init(&target).unwrap();
        let mean = approx.mean();
        let cov = approx.covariance();
        let true_cov = model.target_cov();
        for j in 0..3 {
            assert_relative_eq!(mean[j], 2.0, epsilon = 1e-6);
            for k in 0..3 {
                assert_relative_eq!(cov[[j, k]], true_cov[[j, k]], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn laplace_matches_newton_on_1d_logit() {
        // One datum, z = 1 (standardize-free path: build design by hand).
        let data = BinaryDataset {
            design: Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            labels: array![1.0],
            names: vec!["z".into()],
        };
        let target = build_logit_model(data).unwrap();
        // Scalar Newton on f(b) = -b^2/2 - log(1 + exp(-b)).
        let mut b = 0.0f64;
        for _ in 0..60 {
            let sig = 1.0 / (1.0 + (-b).exp());
            let f1 = -b + (1.0 - sig);
            let f2 = -1.0 - sig * (1.0 - sig);
            b -= f1 / f2;
        }
        let approx = laplace_init(&target).unwrap();
        assert_relative_eq!(approx.mean()[0], b, epsilon = 1e-8);
    }

    #[test]
    fn laplace_rejects_non_finite_start() {
        struct BadModel;
        impl Model for BadModel {
            fn dim(&self) -> usize {
                1
            }
            fn log_prior(&self, _x: ArrayView1<'_, f64>) -> f64 {
                f64::NAN
            }
            fn log_likelihood(&self, _x: ArrayView1<'_, f64>) -> f64 {
                0.0
            }
            fn grad_log_prior(&self, _x: ArrayView1<'_, f64>) -> Array1<f64> {
                array![f64::NAN]
            }
            fn grad_log_likelihood(&self, _x: ArrayView1<'_, f64>) -> Array1<f64> {
                array![0.0]
            }
            fn sample_prior(&self, _rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
                Array2::zeros((n, 1))
            }
        }
        let target = TemperedTarget::new(Arc::new(BadModel));
        assert!(laplace_init(&target).is_err());
    }

    #[test]
    fn gaussian_init_wrapper_interpolates_to_the_same_posterior() {
        let data = synthetic_dataset(30, 2, 5);
        let target = build_logit_model(data).unwrap();
        let init = laplace_init(&target).unwrap();
        let wrapped = with_gaussian_init(&target, init);
        let x = array![0.3, -0.2, 0.4];
        // lambda = 1 tempered density identical to the original posterior.
        let orig = target.tempered_logpdf(x.view(), 1.0).unwrap();
        let new = wrapped.tempered_logpdf(x.view(), 1.0).unwrap();
        assert_relative_eq!(orig, new, max_relative = 1e-10);
        check_gradients(&wrapped, 20, 33, 1e-5);
    }
}
