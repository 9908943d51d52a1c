//! Log Gaussian Cox process on a square grid: Gaussian-process prior over the
//! log-intensity field and Poisson cell counts.

use super::{Model, TemperedTarget};
use crate::error::{Error, Result};
use crate::numeric::MvNormal;
use crate::rng::{stream, Phase};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, RngCore};
use std::path::Path;
use std::sync::Arc;

/// Total number of points in the bundled synthetic pattern; also pins the
/// prior mean through mu = log(126) - sigma^2/2.
pub const TOTAL_POINTS: u64 = 126;

/// Poisson intensity scale per cell.
///
/// The exposure of one cell of the unit square split into `side x side`
/// cells is its area, 1/side^2. We read the model's "1/d^2" with d as the
/// grid side; the literal reading (d = total dimension) would give 1/side^4
/// and starve every cell of mass.
pub fn cell_intensity_scale(side: usize) -> f64 {
    1.0 / (side * side) as f64
}

/// Grid geometry plus the fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct LgcpGrid {
    pub side: usize,
    pub beta: f64,
    pub sigma2: f64,
    pub mu: f64,
    pub counts: Array2<u64>,
}

impl LgcpGrid {
    pub fn new(side: usize, counts: Array2<u64>) -> Result<Self> {
        if side < 2 {
            return Err(Error::Config("lgcp grid requires side >= 2".into()));
        }
        if counts.nrows() != side || counts.ncols() != side {
            return Err(Error::Config(format!(
                "count grid must be {side} x {side}"
            )));
        }
        Ok(Self {
            side,
            beta: 1.0 / 33.0,
            sigma2: 1.91,
            mu: (TOTAL_POINTS as f64).ln() - 1.91 / 2.0,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    /// Sigma_{(j,k)(j',k')} = sigma^2 exp(-sqrt((j-j')^2 + (k-k')^2) / (side * beta)).
    pub fn covariance(&self) -> Array2<f64> {
        let d = self.dim();
        let g = self.side;
        let scale = g as f64 * self.beta;
        Array2::from_shape_fn((d, d), |(a, b)| {
            let (j1, k1) = (a / g, a % g);
            let (j2, k2) = (b / g, b % g);
            let dj = j1 as f64 - j2 as f64;
            let dk = k1 as f64 - k2 as f64;
            self.sigma2 * (-(dj * dj + dk * dk).sqrt() / scale).exp()
        })
    }

    fn flat_counts(&self) -> Array1<f64> {
        Array1::from_iter(self.counts.iter().map(|&c| c as f64))
    }
}

struct LgcpModel {
    grid: LgcpGrid,
    prior: MvNormal,
    counts: Array1<f64>,
    m: f64,
}

impl Model for LgcpModel {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn log_prior(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.prior.logpdf(x)
    }

    /// sum_i [ y_i x_i - m exp(x_i) ]; -inf only when exp overflows.
    fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64 {
        x.iter()
            .zip(self.counts.iter())
            .map(|(&xi, &yi)| yi * xi - self.m * xi.exp())
            .sum()
    }

    fn grad_log_prior(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.prior.grad_logpdf(x)
    }

    fn grad_log_likelihood(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_shape_fn(self.dim(), |i| self.counts[i] - self.m * x[i].exp())
    }

    fn sample_prior(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim()));
        for i in 0..n {
            out.row_mut(i).assign(&self.prior.sample(rng));
        }
        out
    }
}

/// Build the Cox-process target for a `side x side` grid of counts.
pub fn build_lgcp_model(side: usize, counts: Array2<u64>) -> Result<TemperedTarget> {
    let grid = LgcpGrid::new(side, counts)?;
    let prior = MvNormal::new(Array1::from_elem(grid.dim(), grid.mu), grid.covariance())
        .map_err(|_| Error::Config("lgcp prior covariance failed to factorize".into()))?;
    let counts = grid.flat_counts();
    let m = cell_intensity_scale(side);
    Ok(TemperedTarget::new(Arc::new(LgcpModel {
        grid,
        prior,
        counts,
        m,
    })))
}

/// Synthetic count grid: one latent field drawn from the prior with a fixed
/// internal seed, then 126 points spread multinomially over the cells with
/// probabilities proportional to the cell intensities.
pub fn synthetic_counts(side: usize) -> Array2<u64> {
    let grid = LgcpGrid::new(side, Array2::zeros((side, side))).expect("side checked by callers");
    let prior = MvNormal::new(Array1::from_elem(grid.dim(), grid.mu), grid.covariance())
        .expect("exponential covariance is PD");
    let mut rng = stream(0x1ccb_5eed, Phase::Init, side as u64, 0, 0);
    let field = prior.sample(&mut rng);
    let weights: Vec<f64> = {
        let m = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        field.iter().map(|&x| (x - m).exp()).collect()
    };
    let total: f64 = weights.iter().sum();
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cum.push(acc);
    }
    let mut counts = Array2::zeros((side, side));
    for _ in 0..TOTAL_POINTS {
        let u: f64 = rng.random_range(0.0..1.0);
        let idx = cum.partition_point(|&c| c <= u).min(weights.len() - 1);
        counts[[idx / side, idx % side]] += 1;
    }
    counts
}

/// Bin a two-column CSV of points in [0,1)^2 onto a `side x side` grid.
pub fn load_point_pattern(path: impl AsRef<Path>, side: usize) -> Result<Array2<u64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    let mut counts = Array2::zeros((side, side));
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Ingestion(format!(
                "point file row {} has {} fields, expected 2",
                line + 2,
                record.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse()
                .map_err(|_| Error::Ingestion(format!("bad coordinate at row {}", line + 2)))
        };
        let (x, y) = (parse(0)?, parse(1)?);
        if !(0.0..1.0).contains(&x) || !(0.0..1.0).contains(&y) {
            return Err(Error::Ingestion(format!(
                "point ({x}, {y}) at row {} outside [0,1)^2",
                line + 2
            )));
        }
        let j = (x * side as f64) as usize;
        let k = (y * side as f64) as usize;
        counts[[j, k]] += 1;
    }
    Ok(counts)
}
