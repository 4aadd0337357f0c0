//! Gaussian-posterior baselines: deep-kernel GP regression ([`dkt`]) and
//! Bayesian linear regression on learned features ([`alpaca`]).

pub mod alpaca;
pub mod dkt;

pub use alpaca::{AlpacaConfig, AlpacaModel, AlpacaPosterior};
pub use dkt::{DktConfig, DktModel};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::MultivariateGaussian;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::training::SeededRng;

/// `n_samples x dim` reparameterized draws `mean + chol · ε`.
pub fn gaussian_to_samples<T: Scalar>(
    g: &MultivariateGaussian<T>,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<Matrix<T>> {
    if n_samples == 0 {
        return Err(Error::contract("gaussian_to_samples needs n_samples >= 1"));
    }
    let mean = g.mean().value();
    let l = g.chol().value();
    let m = g.dim();
    let mut out = Matrix::zeros(n_samples, m);
    let mut eps = vec![T::zero(); m];
    for s in 0..n_samples {
        for e in eps.iter_mut() {
            *e = T::lit(rng.sample::<f64, _>(StandardNormal));
        }
        for i in 0..m {
            let mut v = mean.data[i];
            for (j, e) in eps.iter().enumerate().take(i + 1) {
                v = v + l.get(i, j) * *e;
            }
            out.set(s, i, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;
    use crate::training::seeded;

    fn gauss() -> MultivariateGaussian<f64> {
        let g = Graph::new();
        MultivariateGaussian::new(
            g.column(vec![1.0, -2.0]),
            g.matrix(2, 2, vec![0.5, 0.1, 0.1, 2.0]),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn single_sample_is_finite_and_seeded() {
        let g = gauss();
        let a = gaussian_to_samples(&g, 1, &mut seeded(4)).unwrap();
        assert_eq!(a.shape(), [1, 2]);
        assert!(a.data.iter().all(|v| v.is_finite()));
        assert_eq!(a, gaussian_to_samples(&g, 1, &mut seeded(4)).unwrap());
        assert!(gaussian_to_samples(&g, 0, &mut seeded(4)).is_err());
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        let g = gauss();
        let n = 20_000;
        let s = gaussian_to_samples(&g, n, &mut seeded(5)).unwrap();
        for (j, (mu, var)) in [(1.0, 0.5), (-2.0, 2.0)].into_iter().enumerate() {
            let mean: f64 = (0..n).map(|i| s.get(i, j)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - mu).abs() < 3.0 * se, "coord {j}: {mean}");
        }
    }
}
