use crate::error::{Error, Result};

/// Coefficients of the energy-error model |dE| = alpha0 + alpha1 * eps^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    pub alpha0: f64,
    pub alpha1: f64,
}

const IRLS_ITERS: usize = 50;
const IRLS_RESIDUAL_FLOOR: f64 = 1e-8;
const IRLS_COEFF_TOL: f64 = 1e-10;

/// L1 (median) regression of `y` on `[1, x^2]` by iteratively reweighted
/// least squares with weights 1/max(|residual|, floor). Robust to the heavy
/// energy-error outliers near the integrator's stability limit.
pub fn median_quadratic_fit(y: &[f64], x: &[f64]) -> Result<QuadraticFit> {
    let n = y.len();
    if n < 8 {
        return Err(Error::Pretune(format!("need at least 8 points, got {n}")));
    }
    if x.len() != n {
        return Err(Error::Pretune("x and y length mismatch".into()));
    }
    let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
    let spread = x2.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - x2.iter().cloned().fold(f64::INFINITY, f64::min);
    if !spread.is_finite() || spread <= 0.0 {
        return Err(Error::Pretune("degenerate design: all step sizes equal".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Pretune("non-finite response".into()));
    }

    let mut w = vec![1.0; n];
    let mut fit = QuadraticFit {
        alpha0: 0.0,
        alpha1: 0.0,
    };
    for _ in 0..IRLS_ITERS {
        // Weighted normal equations for the 2-parameter design.
        let (mut s_w, mut s_wx, mut s_wxx, mut s_wy, mut s_wxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            s_w += w[i];
            s_wx += w[i] * x2[i];
            s_wxx += w[i] * x2[i] * x2[i];
            s_wy += w[i] * y[i];
            s_wxy += w[i] * x2[i] * y[i];
        }
        let det = s_w * s_wxx - s_wx * s_wx;
        if det.abs() < 1e-300 {
            return Err(Error::Pretune("singular design in IRLS step".into()));
        }
        let alpha0 = (s_wxx * s_wy - s_wx * s_wxy) / det;
        let alpha1 = (s_w * s_wxy - s_wx * s_wy) / det;
        let change = (alpha0 - fit.alpha0).abs().max((alpha1 - fit.alpha1).abs());
        let scale = fit.alpha0.abs().max(fit.alpha1.abs()).max(1.0);
        fit = QuadraticFit { alpha0, alpha1 };
        if change / scale < IRLS_COEFF_TOL {
            break;
        }
        for i in 0..n {
            let r = (y[i] - alpha0 - alpha1 * x2[i]).abs();
            w[i] = 1.0 / r.max(IRLS_RESIDUAL_FLOOR);
        }
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_quadratic_is_recovered_exactly() {
        let x: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 + 2.5 * v * v).collect();
        let fit = median_quadratic_fit(&y, &x).unwrap();
        assert!((fit.alpha0 - 0.3).abs() < 1e-6);
        assert!((fit.alpha1 - 2.5).abs() < 1e-6);
    }

    #[test]
    fn contamination_barely_moves_the_fit() {
        let x: Vec<f64> = (1..=50).map(|i| 0.02 * i as f64).collect();
        let mut y: Vec<f64> = x.iter().map(|v| v * v).collect();
        for i in (0..50).step_by(10) {
            y[i] = 1e6;
        }
        let fit = median_quadratic_fit(&y, &x).unwrap();
        assert!(fit.alpha0.abs() < 0.05, "alpha0 {}", fit.alpha0);
        assert!((fit.alpha1 - 1.0).abs() < 0.05, "alpha1 {}", fit.alpha1);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(median_quadratic_fit(&[1.0; 4], &[0.1; 4]).is_err());
        assert!(median_quadratic_fit(&[1.0; 10], &[0.1; 10]).is_err());
        let x: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let mut y = vec![1.0; 10];
        y[3] = f64::INFINITY;
        assert!(median_quadratic_fit(&y, &x).is_err());
    }
}
