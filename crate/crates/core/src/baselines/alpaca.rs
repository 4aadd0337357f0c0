//! Bayesian last-layer regression: a learned feature map `φ` with a
//! conjugate Gaussian prior over the output weights.
//!
//! The prior is `K ~ N(K̄₀, Σε Λ₀⁻¹)` and `y = Kᵀφ(x) + N(0, Σε)`. With `k`
//! support features `Φ` the posterior precision is `Λ = Λ₀ + ΦᵀΦ` and the
//! posterior mean `K̄ = Λ⁻¹(Λ₀K̄₀ + Φᵀy)`.

use rand::Rng;

use super::gaussian_to_samples;
use crate::distributions::MultivariateGaussian;
use crate::environments::Task;
use crate::error::{Error, Result};
use crate::networks::{Mlp, DEFAULT_HIDDEN};
use crate::scalar::Scalar;
use crate::tensor::{Bound, Graph, Matrix, ParamId, Params, Tensor};
use crate::training::{with_jitter_retry, MetaLearner, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct AlpacaConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// Initial log noise variance `log Σε`.
    pub init_log_noise: f64,
}

impl Default for AlpacaConfig {
    fn default() -> Self {
        AlpacaConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            feature_dim: 32,
            init_log_noise: (0.1f64).ln(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlpacaModel<T: Scalar> {
    params: Params<T>,
    pub basis: Mlp,
    pub prior_mean: ParamId,
    /// Strictly lower part of the prior precision factor.
    pub prior_factor_offdiag: ParamId,
    /// Log of the factor's diagonal.
    pub prior_factor_logdiag: ParamId,
    pub log_noise: ParamId,
}

/// Posterior over the output weights.
#[derive(Debug, Clone)]
pub struct AlpacaPosterior<T: Scalar> {
    pub mean: Tensor<T>,
    pub precision: Tensor<T>,
    /// Lower Cholesky factor of `precision` (plus jitter).
    pub chol: Tensor<T>,
}

fn column<T: Scalar>(g: &Graph<T>, v: &[f64]) -> Tensor<T> {
    g.column(v.iter().map(|&x| T::lit(x)).collect())
}

impl<T: Scalar> AlpacaModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &AlpacaConfig, rng: &mut R) -> Self {
        let mut params = Params::new();
        let f = cfg.feature_dim;
        let mut sizes = vec![1];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(f);
        let basis = Mlp::new(&mut params, "alpaca.basis", &sizes, rng);
        let prior_mean = params.add("alpaca.prior_mean", Matrix::zeros(f, 1));
        let prior_factor_offdiag = params.add("alpaca.prior_factor_offdiag", Matrix::zeros(f, f));
        let prior_factor_logdiag = params.add("alpaca.prior_factor_logdiag", Matrix::zeros(f, 1));
        let log_noise = params.add(
            "alpaca.log_noise",
            Matrix::new(1, 1, vec![T::lit(cfg.init_log_noise)]),
        );
        AlpacaModel {
            params,
            basis,
            prior_mean,
            prior_factor_offdiag,
            prior_factor_logdiag,
            log_noise,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.basis.output_dim()
    }

    pub fn noise_variance(&self) -> T {
        self.params.get(self.log_noise).data[0].exp()
    }

    /// `(L₀, Λ₀ = L₀L₀ᵀ)`.
    fn prior_precision(&self, bound: &Bound<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let l0 = bound[self.prior_factor_offdiag]
            .tril(true)
            .add(&bound[self.prior_factor_logdiag].exp().diag()?)?;
        let lambda0 = l0.matmul(&l0.transpose())?;
        Ok((l0, lambda0))
    }

    pub fn features(&self, bound: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.basis.forward(bound, x)
    }

    /// Conjugate update from support features `phi` (`k x f`). With `k = 0`
    /// the prior is returned unchanged.
    pub fn posterior(
        &self,
        bound: &Bound<T>,
        phi: &Tensor<T>,
        y: &Tensor<T>,
        jitter: T,
    ) -> Result<AlpacaPosterior<T>> {
        let (l0, lambda0) = self.prior_precision(bound)?;
        let k0 = &bound[self.prior_mean];
        let k = phi.rows();
        if y.shape() != [k, 1] || (k > 0 && phi.cols() != self.feature_dim()) {
            return Err(Error::dim("alpaca_posterior", phi.shape(), y.shape()));
        }
        if k == 0 {
            return Ok(AlpacaPosterior {
                mean: k0.clone(),
                precision: lambda0,
                chol: l0,
            });
        }
        let phi_t = phi.transpose();
        let precision = lambda0.add(&phi_t.matmul(phi)?)?;
        let chol = precision.cholesky(jitter)?;
        let rhs = lambda0.matmul(k0)?.add(&phi_t.matmul(y)?)?;
        let mean = chol.solve_lower_transposed(&chol.solve_lower(&rhs)?)?;
        Ok(AlpacaPosterior {
            mean,
            precision,
            chol,
        })
    }

    /// Joint predictive over query features `phi_q` (`m x f`):
    /// `N(Φq K̄, Σε (I + Φq Λ⁻¹ Φqᵀ))`.
    pub fn predict_from(
        &self,
        bound: &Bound<T>,
        post: &AlpacaPosterior<T>,
        phi_q: &Tensor<T>,
        jitter: T,
    ) -> Result<MultivariateGaussian<T>> {
        let m = phi_q.rows();
        let mean = phi_q.matmul(&post.mean)?;
        let v = post.chol.solve_lower(&phi_q.transpose())?;
        let noise = bound[self.log_noise].exp();
        let cov = v
            .transpose()
            .matmul(&v)?
            .add(&phi_q.graph().constant(Matrix::identity(m)))?
            .scale_by(&noise)?;
        let cov = cov.add(&cov.transpose())?.scale(T::lit(0.5));
        MultivariateGaussian::new(mean, cov, jitter)
    }

    /// Sum over query points of the marginal Gaussian predictive NLL.
    pub fn predictive_nll(
        &self,
        bound: &Bound<T>,
        post: &AlpacaPosterior<T>,
        phi_q: &Tensor<T>,
        y_q: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let m = phi_q.rows();
        if m == 0 || y_q.shape() != [m, 1] {
            return Err(Error::dim(
                "alpaca_predictive_nll",
                phi_q.shape(),
                y_q.shape(),
            ));
        }
        let mean = phi_q.matmul(&post.mean)?;
        let v = post.chol.solve_lower(&phi_q.transpose())?;
        let noise = bound[self.log_noise].exp();
        let var = v
            .square()
            .sum_rows()
            .transpose()
            .add_scalar(T::one())
            .scale_by(&noise)?;
        let log_2pi = T::lit(2.0 * std::f64::consts::PI).ln();
        Ok(y_q
            .sub(&mean)?
            .square()
            .div(&var)?
            .add(&var.log())?
            .add_scalar(log_2pi)
            .sum()
            .scale(T::lit(0.5)))
    }

    pub fn predict(
        &self,
        x_supp: &[f64],
        y_supp: &[f64],
        x_query: &[f64],
        jitter: T,
    ) -> Result<MultivariateGaussian<T>> {
        with_jitter_retry(jitter, |jitter| {
            let g = Graph::new();
            let bound = g.bind_frozen(&self.params);
            let post = self.posterior_from_inputs(&bound, x_supp, y_supp, jitter)?;
            let phi_q = self.features(&bound, &column(&g, x_query))?;
            self.predict_from(&bound, &post, &phi_q, jitter)
        })
    }

    fn posterior_from_inputs(
        &self,
        bound: &Bound<T>,
        x_supp: &[f64],
        y_supp: &[f64],
        jitter: T,
    ) -> Result<AlpacaPosterior<T>> {
        let g = bound[self.log_noise].graph().clone();
        let phi = if x_supp.is_empty() {
            g.constant(Matrix::zeros(0, self.feature_dim()))
        } else {
            self.features(bound, &column(&g, x_supp))?
        };
        self.posterior(bound, &phi, &column(&g, y_supp), jitter)
    }
}

impl<T: Scalar> MetaLearner<T> for AlpacaModel<T> {
    fn name(&self) -> &'static str {
        "alpaca"
    }

    fn params(&self) -> &Params<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    fn task_loss(
        &self,
        bound: &Bound<T>,
        task: &Task,
        jitter: T,
        _rng: &mut SeededRng,
    ) -> Result<Tensor<T>> {
        let g = bound[self.log_noise].graph().clone();
        let post = self.posterior_from_inputs(bound, &task.x_supp, &task.y_supp, jitter)?;
        let phi_q = self.features(bound, &column(&g, &task.x_query))?;
        self.predictive_nll(bound, &post, &phi_q, &column(&g, &task.y_query))
    }

    fn predictive_samples(
        &self,
        task: &Task,
        n_samples: usize,
        jitter: T,
        rng: &mut SeededRng,
    ) -> Result<Matrix<T>> {
        let pred = self.predict(&task.x_supp, &task.y_supp, &task.x_query, jitter)?;
        gaussian_to_samples(&pred, n_samples, rng)
    }
}
