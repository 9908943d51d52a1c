use super::cloud::ParticleCloud;
use crate::error::Result;
use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResampleScheme {
    #[default]
    Systematic,
    Multinomial,
}

/// Ancestor indices under systematic resampling: one uniform offset, N
/// equally spaced points against the cumulative weights. Equal weights give
/// the identity assignment.
fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut indices = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut j = 0usize;
    let mut cum_j = weights[0];
    for i in 0..n {
        let point = (i as f64 + u) / n as f64;
        while point >= cum + cum_j && j + 1 < n {
            cum += cum_j;
            j += 1;
            cum_j = weights[j];
        }
        indices.push(j);
    }
    indices
}

fn multinomial_indices(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let n = weights.len();
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(0.0..1.0) * acc;
            cum.partition_point(|&c| c <= u).min(n - 1)
        })
        .collect()
}

/// Resample the cloud in place; weights reset to uniform, caches gathered
/// with the positions.
pub fn resample(
    cloud: &mut ParticleCloud,
    scheme: ResampleScheme,
    rng: &mut impl Rng,
) -> Result<()> {
    let weights = cloud.normalized_weights()?;
    let w = weights.as_slice().unwrap();
    let indices = match scheme {
        ResampleScheme::Systematic => systematic_indices(w, rng.random_range(0.0..1.0)),
        ResampleScheme::Multinomial => multinomial_indices(w, rng),
    };
    cloud.positions = cloud.positions.select(Axis(0), &indices);
    cloud.cached_loglik = cloud.cached_loglik.select(Axis(0), &indices);
    cloud.cached_logprior = cloud.cached_logprior.select(Axis(0), &indices);
    cloud.log_weights.fill(0.0);
    cloud.resampled = true;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use ndarray::{Array1, Array2};
    use proptest::prelude::*;

    fn cloud_with_weights(log_weights: Vec<f64>) -> ParticleCloud {
        let n = log_weights.len();
        let positions = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        ParticleCloud {
            positions,
            log_weights: Array1::from_vec(log_weights),
            cached_loglik: Array1::from_shape_fn(n, |i| i as f64 * 10.0),
            cached_logprior: Array1::from_shape_fn(n, |i| -(i as f64)),
            resampled: false,
        }
    }

    #[test]
    fn equal_weights_systematic_is_identity() {
        let mut cloud = cloud_with_weights(vec![0.0; 6]);
        let mut rng = crate::rng::stream(1, crate::rng::Phase::Resample, 0, 0, 0);
        resample(&mut cloud, ResampleScheme::Systematic, &mut rng).unwrap();
        for i in 0..6 {
            assert_eq!(cloud.positions[[i, 0]], i as f64);
            assert_eq!(cloud.cached_loglik[i], i as f64 * 10.0);
        }
        assert!(cloud.resampled);
        assert!(cloud.log_weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn degenerate_weight_takes_over() {
        let mut cloud = cloud_with_weights(vec![0.0, f64::NEG_INFINITY]);
        let mut rng = crate::rng::stream(2, crate::rng::Phase::Resample, 0, 0, 0);
        resample(&mut cloud, ResampleScheme::Systematic, &mut rng).unwrap();
        assert_eq!(cloud.positions[[0, 0]], 0.0);
        assert_eq!(cloud.positions[[1, 0]], 0.0);
    }

    #[test]
    fn all_zero_weights_error() {
        let mut cloud = cloud_with_weights(vec![f64::NEG_INFINITY; 4]);
        let mut rng = crate::rng::stream(3, crate::rng::Phase::Resample, 0, 0, 0);
        assert!(matches!(
            resample(&mut cloud, ResampleScheme::Systematic, &mut rng),
            Err(Error::DegenerateCloud)
        ));
    }

    #[test]
    fn systematic_offspring_counts_are_unbiased() {
        // Weights (0.75, 0.25) on N = 4: expected offspring (3, 1).
        let trials = 100_000;
        let mut totals = [0.0f64; 2];
        for t in 0..trials {
            let mut cloud = cloud_with_weights(vec![0.75f64.ln(); 1]
                .into_iter()
                .chain([0.25f64.ln()])
                .chain([f64::NEG_INFINITY, f64::NEG_INFINITY])
                .collect());
            let mut rng = crate::rng::stream(4, crate::rng::Phase::Resample, t, 0, 0);
            resample(&mut cloud, ResampleScheme::Systematic, &mut rng).unwrap();
            for i in 0..4 {
                let idx = cloud.positions[[i, 0]] as usize;
                totals[idx.min(1)] += 1.0;
            }
        }
        let mean0 = totals[0] / trials as f64;
        let mean1 = totals[1] / trials as f64;
        // Systematic with these weights is exact: 3 and 1 every time.
        assert!((mean0 - 3.0).abs() < 1e-12, "offspring {mean0}");
        assert!((mean1 - 1.0).abs() < 1e-12, "offspring {mean1}");
    }

    #[test]
    fn multinomial_offspring_counts_are_unbiased() {
        let trials = 100_000;
        let mut totals = [0.0f64; 2];
        for t in 0..trials {
            let mut cloud = cloud_with_weights(vec![
                0.75f64.ln(),
                0.25f64.ln(),
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ]);
            let mut rng = crate::rng::stream(5, crate::rng::Phase::Resample, t, 0, 0);
            resample(&mut cloud, ResampleScheme::Multinomial, &mut rng).unwrap();
            for i in 0..4 {
                let idx = cloud.positions[[i, 0]] as usize;
                totals[idx.min(1)] += 1.0;
            }
        }
        let mean0 = totals[0] / trials as f64;
        // Binomial(4, 0.75): sd of the per-trial count is sqrt(0.75) ~ 0.866.
        let se = (4.0 * 0.75 * 0.25 / trials as f64).sqrt();
        assert!(
            (mean0 - 3.0).abs() < 3.0 * se,
            "offspring {mean0}, se {se:.2e}"
        );
    }

    #[test]
    fn resampling_preserves_the_weighted_mean_in_expectation() {
        let log_weights = vec![0.9f64.ln(), -0.3, 0.4, -1.7];
        let base = cloud_with_weights(log_weights);
        let w = base.normalized_weights().unwrap();
        let truth: f64 = (0..4).map(|i| w[i] * base.positions[[i, 0]]).sum();
        let trials = 20_000;
        let mut means = Vec::with_capacity(trials);
        for t in 0..trials as u64 {
            let mut cloud = base.clone();
            let mut rng = crate::rng::stream(6, crate::rng::Phase::Resample, t, 0, 0);
            resample(&mut cloud, ResampleScheme::Systematic, &mut rng).unwrap();
            means.push(cloud.positions.column(0).sum() / 4.0);
        }
        let grand = means.iter().sum::<f64>() / trials as f64;
        let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
            / (trials as f64 - 1.0);
        let se = (var / trials as f64).sqrt();
        assert!(
            (grand - truth).abs() < 3.0 * se + 1e-12,
            "mean {grand} vs weighted mean {truth} (se {se:.2e})"
        );
    }

    proptest! {
        /// After resampling: uniform weights and positions form a multiset
        /// drawn from the original cloud.
        #[test]
        fn resampled_cloud_is_a_multiset_of_the_original(
            lw in proptest::collection::vec(-8.0f64..2.0, 3..24),
            seed in 0u64..500,
        ) {
            let n = lw.len();
            let mut cloud = cloud_with_weights(lw);
            let mut rng = crate::rng::stream(seed, crate::rng::Phase::Resample, 0, 0, 0);
            resample(&mut cloud, ResampleScheme::Systematic, &mut rng).unwrap();
            prop_assert!(cloud.log_weights.iter().all(|&w| w == 0.0));
            for i in 0..n {
                let v = cloud.positions[[i, 0]];
                prop_assert!(v.fract() == 0.0 && (0.0..n as f64).contains(&v));
                // Caches gathered along with positions.
                prop_assert_eq!(cloud.cached_loglik[i], v * 10.0);
            }
        }
    }
}
