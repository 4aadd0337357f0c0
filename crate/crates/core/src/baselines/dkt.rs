//! GP regression with a learned deep kernel, fit by type-II maximum
//! likelihood across tasks.

use rand::Rng;

use super::gaussian_to_samples;
use crate::distributions::MultivariateGaussian;
use crate::environments::Task;
use crate::error::{Error, Result};
use crate::networks::{DeepKernel, RbfParams, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};
use crate::scalar::Scalar;
use crate::tensor::{Bound, Graph, Matrix, ParamId, Params, Tensor};
use crate::training::{with_jitter_retry, MetaLearner, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct DktConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub init_rbf: RbfParams<f64>,
    /// Initial log observation-noise variance.
    pub init_log_noise: f64,
}

impl Default for DktConfig {
    fn default() -> Self {
        DktConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            embed_dim: DEFAULT_EMBED_DIM,
            init_rbf: RbfParams {
                log_lengthscale: 0.0,
                log_outputscale: 0.0,
            },
            init_log_noise: (0.1f64).ln(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DktModel<T: Scalar> {
    params: Params<T>,
    pub kernel: DeepKernel,
    pub mean: ParamId,
    pub log_noise: ParamId,
}

fn column<T: Scalar>(g: &Graph<T>, v: &[f64]) -> Tensor<T> {
    g.column(v.iter().map(|&x| T::lit(x)).collect())
}

impl<T: Scalar> DktModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &DktConfig, rng: &mut R) -> Self {
        let mut params = Params::new();
        let mut sizes = vec![1];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(cfg.embed_dim);
        let init = RbfParams {
            log_lengthscale: T::lit(cfg.init_rbf.log_lengthscale),
            log_outputscale: T::lit(cfg.init_rbf.log_outputscale),
        };
        let kernel = DeepKernel::new(&mut params, "dkt.kernel", &sizes, init, rng);
        let mean = params.add("dkt.mean", Matrix::zeros(1, 1));
        let log_noise = params.add(
            "dkt.log_noise",
            Matrix::new(1, 1, vec![T::lit(cfg.init_log_noise)]),
        );
        DktModel {
            params,
            kernel,
            mean,
            log_noise,
        }
    }

    pub fn noise_variance(&self) -> T {
        self.params.get(self.log_noise).data[0].exp()
    }

    /// `½ rᵀ(K + σ²I)⁻¹ r + ½ log|K + σ²I| + (n/2) log 2π` with `r = y − mean`.
    pub fn marginal_nll(
        &self,
        bound: &Bound<T>,
        x: &Tensor<T>,
        y: &Tensor<T>,
        jitter: T,
    ) -> Result<Tensor<T>> {
        let n = x.rows();
        if n == 0 || y.shape() != [n, 1] {
            return Err(Error::dim("dkt_marginal_nll", x.shape(), y.shape()));
        }
        let noise = bound[self.log_noise].exp();
        let k = self.kernel.gram_self(bound, x)?.add_diag(&noise)?;
        let l = k.cholesky(jitter)?;
        let r = y.sub(&bound[self.mean].expand(n, 1)?)?;
        let alpha = l.solve_lower(&r)?;
        let half = T::lit(0.5);
        let norm = T::from_usize(n).unwrap() * half * T::lit(2.0 * std::f64::consts::PI).ln();
        Ok(alpha
            .square()
            .sum()
            .add(&l.log_det_chol()?)?
            .scale(half)
            .add_scalar(norm))
    }

    /// Exact GP posterior over the query labels, including observation noise.
    pub fn predict_with(
        &self,
        bound: &Bound<T>,
        x_supp: &Tensor<T>,
        y_supp: &Tensor<T>,
        x_query: &Tensor<T>,
        jitter: T,
    ) -> Result<MultivariateGaussian<T>> {
        let (k, m) = (x_supp.rows(), x_query.rows());
        if k == 0 || m == 0 || y_supp.shape() != [k, 1] {
            return Err(Error::dim("dkt_predict", x_supp.shape(), y_supp.shape()));
        }
        let noise = bound[self.log_noise].exp();
        let c = &bound[self.mean];
        let l = self
            .kernel
            .gram_self(bound, x_supp)?
            .add_diag(&noise)?
            .cholesky(jitter)?;
        let k_qs = self.kernel.gram(bound, x_query, x_supp)?;
        let a = l.solve_lower(&k_qs.transpose())?;
        let w = l.solve_lower(&y_supp.sub(&c.expand(k, 1)?)?)?;
        let mean = c.expand(m, 1)?.add(&a.transpose().matmul(&w)?)?;
        let cov = self
            .kernel
            .gram_self(bound, x_query)?
            .sub(&a.transpose().matmul(&a)?)?;
        let cov = cov
            .add(&cov.transpose())?
            .scale(T::lit(0.5))
            .add_diag(&noise)?;
        MultivariateGaussian::new(mean, cov, jitter)
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
            self.predict_with(
                &bound,
                &column(&g, x_supp),
                &column(&g, y_supp),
                &column(&g, x_query),
                jitter,
            )
        })
    }
}

impl<T: Scalar> MetaLearner<T> for DktModel<T> {
    fn name(&self) -> &'static str {
        "dkt"
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
        let g = bound[self.mean].graph().clone();
        self.marginal_nll(
            bound,
            &column(&g, &task.all_x()),
            &column(&g, &task.all_y()),
            jitter,
        )
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::seeded;

    fn model() -> DktModel<f64> {
        DktModel::new(&DktConfig::default(), &mut seeded(0))
    }

    #[test]
    fn nll_reduces_to_normalizer() {
        let mut m = model();
        *m.params.get_mut(m.kernel.log_outputscale) = Matrix::new(1, 1, vec![-60.0]);
        *m.params.get_mut(m.log_noise) = Matrix::new(1, 1, vec![0.0]);
        let g = Graph::new();
        let b = g.bind_frozen(&m.params);
        let n = 4;
        let nll = m
            .marginal_nll(
                &b,
                &g.column(vec![0.1, 0.5, -1.0, 2.0]),
                &g.column(vec![0.0; n]),
                0.0,
            )
            .unwrap()
            .item();
        let expect = n as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((nll - expect).abs() < 1e-12);
    }

    #[test]
    fn single_point_nll() {
        let mut m = model();
        // s + σ² = 1
        *m.params.get_mut(m.kernel.log_outputscale) = Matrix::new(1, 1, vec![0.5f64.ln()]);
        *m.params.get_mut(m.log_noise) = Matrix::new(1, 1, vec![0.5f64.ln()]);
        let g = Graph::new();
        let b = g.bind_frozen(&m.params);
        let nll = m
            .marginal_nll(&b, &g.column(vec![0.3]), &g.column(vec![0.0]), 0.0)
            .unwrap()
            .item();
        assert!((nll - 0.9189385332046727).abs() < 1e-12);
    }

    #[test]
    fn interpolates_support_with_tiny_noise() {
        let mut m = model();
        *m.params.get_mut(m.log_noise) = Matrix::new(1, 1, vec![1e-8f64.ln()]);
        let pred = m
            .predict(&[-1.0, 0.0, 1.5], &[0.3, -0.7, 1.1], &[0.0], 1e-10)
            .unwrap();
        assert!((pred.mean().item() + 0.7).abs() < 1e-3);
    }

    #[test]
    fn reverts_to_prior_far_from_support() {
        let cfg = DktConfig {
            hidden: vec![],
            embed_dim: 1,
            init_rbf: RbfParams {
                log_lengthscale: (0.1f64).ln(),
                log_outputscale: 0.4,
            },
            init_log_noise: -1.0,
        };
        let mut m = DktModel::<f64>::new(&cfg, &mut seeded(1));
        let (w, b) = m.kernel.embed.layer_params().next().unwrap();
        *m.params.get_mut(w) = Matrix::new(1, 1, vec![1.0]);
        *m.params.get_mut(b) = Matrix::zeros(1, 1);
        *m.params.get_mut(m.mean) = Matrix::new(1, 1, vec![0.25]);
        let pred = m.predict(&[0.0, 0.2], &[3.0, -2.0], &[5.0], 1e-6).unwrap();
        assert!((pred.mean().item() - 0.25).abs() < 1e-6);
        let var = pred.cov().item();
        assert!((var - (0.4f64.exp() + (-1.0f64).exp())).abs() < 1e-6);
    }
}
