//! Variational meta-learning GP.
//!
//! Three learned pieces, one scalar latent per datapoint:
//!
//! * prior `p_θ(z | x)`: constant-mean GP with a deep kernel over `x`;
//! * variational posterior `q_ψ(z | x, y)`: GP with an MLP mean and a deep
//!   kernel, both over the concatenated row `[x, y]`;
//! * decoder `f_φ: z → y`, an MLP applied pointwise.
//!
//! Training minimizes `KL(q_ψ ‖ p_θ) + ε⁻¹ ‖f_φ(z) − y‖²` with `z ~ q_ψ`
//! reparameterized. Prediction samples `z_supp ~ q_ψ` on the support set,
//! conditions the joint prior over `[query; support]` on it, samples the
//! query latents and decodes them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::{kl_divergence, DiagonalGaussian, MultivariateGaussian};
use crate::environments::Task;
use crate::error::{Error, Result};
use crate::networks::{DeepKernel, Mlp, RbfParams, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};
use crate::scalar::Scalar;
use crate::tensor::{Bound, Checkpoint, Graph, Matrix, ParamId, Params, Record, Tensor};
use crate::training::{with_jitter_retry, MetaLearner, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct VmgpConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Decoder variance; the reconstruction term is `‖f(z) − y‖² / ε`.
    pub epsilon: f64,
    /// Reparameterized draws per task for the reconstruction expectation.
    pub mc_samples_train: usize,
    /// Add `N(0, ε/2)` noise to decoded predictive samples.
    pub decoder_noise: bool,
    /// Initial log RBF parameters of the prior kernel.
    pub init_rbf: RbfParams<f64>,
    /// Initial log RBF parameters of the variational kernel. A small output
    /// scale keeps early latent draws close to the variational mean.
    pub init_q_rbf: RbfParams<f64>,
}

impl Default for VmgpConfig {
    fn default() -> Self {
        VmgpConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            embed_dim: DEFAULT_EMBED_DIM,
            epsilon: 0.01,
            mc_samples_train: 1,
            decoder_noise: false,
            init_rbf: RbfParams {
                log_lengthscale: 0.0,
                log_outputscale: 0.0,
            },
            init_q_rbf: RbfParams {
                log_lengthscale: 0.0,
                log_outputscale: -6.0,
            },
        }
    }
}

const EPSILON_KEY: &str = "epsilon";

#[derive(Debug, Clone)]
pub struct VmgpModel<T: Scalar> {
    params: Params<T>,
    pub p_mean: ParamId,
    pub p_kernel: DeepKernel,
    pub q_mean: Mlp,
    pub q_kernel: DeepKernel,
    pub decoder: Mlp,
    epsilon: T,
    cfg: VmgpConfig,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// `n x 1` column from plain values.
fn column<T: Scalar>(g: &Graph<T>, v: &[f64]) -> Tensor<T> {
    g.column(v.iter().map(|&x| T::lit(x)).collect())
}

impl<T: Scalar> VmgpModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: VmgpConfig, rng: &mut R) -> Result<Self> {
        if !(cfg.epsilon > 0.0) || cfg.mc_samples_train == 0 || cfg.embed_dim == 0 {
            return Err(Error::contract(
                "vmgp config needs epsilon > 0, mc_samples_train > 0, embed_dim > 0",
            ));
        }
        let mut params = Params::new();
        let init = RbfParams {
            log_lengthscale: T::lit(cfg.init_rbf.log_lengthscale),
            log_outputscale: T::lit(cfg.init_rbf.log_outputscale),
        };
        let p_mean = params.add("p.mean", Matrix::zeros(1, 1));
        let p_kernel = DeepKernel::new(
            &mut params,
            "p.kernel",
            &sizes(1, &cfg.hidden, cfg.embed_dim),
            init,
            rng,
        );
        let q_mean = Mlp::new(&mut params, "q.mean", &sizes(2, &cfg.hidden, 1), rng);
        let q_init = RbfParams {
            log_lengthscale: T::lit(cfg.init_q_rbf.log_lengthscale),
            log_outputscale: T::lit(cfg.init_q_rbf.log_outputscale),
        };
        let q_kernel = DeepKernel::new(
            &mut params,
            "q.kernel",
            &sizes(2, &cfg.hidden, cfg.embed_dim),
            q_init,
            rng,
        );
        let decoder = Mlp::new(&mut params, "f.decoder", &sizes(1, &cfg.hidden, 1), rng);
        Ok(VmgpModel {
            params,
            p_mean,
            p_kernel,
            q_mean,
            q_kernel,
            decoder,
            epsilon: T::lit(cfg.epsilon),
            cfg,
        })
    }

    pub fn config(&self) -> &VmgpConfig {
        &self.cfg
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// `q_ψ(z | x, y)` over the given points.
    pub fn q_posterior(
        &self,
        bound: &Bound<T>,
        x: &Tensor<T>,
        y: &Tensor<T>,
        jitter: T,
    ) -> Result<MultivariateGaussian<T>> {
        let xy = x.concat_cols(y)?;
        let mean = self.q_mean.forward(bound, &xy)?;
        let cov = self.q_kernel.gram_self(bound, &xy)?;
        MultivariateGaussian::new(mean, cov, jitter)
    }

    /// `p_θ(z | x)` over the given points.
    pub fn p_prior(
        &self,
        bound: &Bound<T>,
        x: &Tensor<T>,
        jitter: T,
    ) -> Result<MultivariateGaussian<T>> {
        let mean = bound[self.p_mean].expand(x.rows(), 1)?;
        let cov = self.p_kernel.gram_self(bound, x)?;
        MultivariateGaussian::new(mean, cov, jitter)
    }

    /// Pointwise decoder on an `n x 1` latent column.
    pub fn decode(&self, bound: &Bound<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.forward(bound, z)
    }

    /// Task loss with explicit reparameterization noise (one `n`-vector per
    /// Monte-Carlo draw), over the support and query points together.
    pub fn task_loss_with_noise(
        &self,
        bound: &Bound<T>,
        task: &Task,
        jitter: T,
        noises: &[Vec<T>],
    ) -> Result<Tensor<T>> {
        let n = task.k() + task.q();
        if n < 2 {
            return Err(Error::contract("vmgp task loss needs at least two points"));
        }
        let g = bound[self.p_mean].graph().clone();
        let x = column(&g, &task.all_x());
        let y = column(&g, &task.all_y());
        let q = self.q_posterior(bound, &x, &y, jitter)?;
        let p = self.p_prior(bound, &x, jitter)?;
        let (kl, recon) = elbo_terms(&q, &p, |z| self.decode(bound, z), &y, noises, self.epsilon)?;
        kl.add(&recon)
    }

    /// Three-stage sampling of query labels given a support set. Returns an
    /// `n_samples x m` matrix; no gradients are tracked.
    pub fn posterior_samples(
        &self,
        x_supp: &[f64],
        y_supp: &[f64],
        x_query: &[f64],
        n_samples: usize,
        jitter: T,
        rng: &mut SeededRng,
    ) -> Result<Matrix<T>> {
        let (k, m) = (x_supp.len(), x_query.len());
        if k == 0 || m == 0 || n_samples == 0 || y_supp.len() != k {
            return Err(Error::contract(
                "posterior_samples needs k >= 1 labelled support points, m >= 1 queries, n >= 1",
            ));
        }
        with_jitter_retry(jitter, |jitter| {
            let g = Graph::new();
            let bound = g.bind_frozen(&self.params);
            let xs = column(&g, x_supp);
            let ys = column(&g, y_supp);
            let q = self.q_posterior(&bound, &xs, &ys, jitter)?;
            let x_all: Vec<f64> = x_query.iter().chain(x_supp).copied().collect();
            let joint = self.p_prior(&bound, &column(&g, &x_all), jitter)?;
            let decoder_sd = (self.epsilon * T::lit(0.5)).sqrt();
            let mut out = Matrix::zeros(n_samples, m);
            for s in 0..n_samples {
                let z_supp = q.sample_reparam(&g.column(standard_normals(rng, k)))?;
                let cond = joint.condition(m, &z_supp)?;
                let z_query = cond.sample_reparam(&g.column(standard_normals(rng, m)))?;
                let y = self.decode(&bound, &z_query)?.to_vec();
                for (j, yj) in y.into_iter().enumerate() {
                    let yj = if self.cfg.decoder_noise {
                        let e: f64 = rng.sample(StandardNormal);
                        yj + decoder_sd * T::lit(e)
                    } else {
                        yj
                    };
                    out.set(s, j, yj);
                }
            }
            Ok(out)
        })
    }
}

pub(crate) fn standard_normals<T: Scalar>(rng: &mut SeededRng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// The two loss terms: `KL(q ‖ p)` and the Monte-Carlo average of
/// `‖decode(z) − y‖² / ε` over `z = q.mean + q.chol · noise`.
pub fn elbo_terms<T: Scalar>(
    q: &MultivariateGaussian<T>,
    p: &MultivariateGaussian<T>,
    decode: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    y: &Tensor<T>,
    noises: &[Vec<T>],
    epsilon: T,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if noises.is_empty() {
        return Err(Error::contract("elbo needs at least one noise draw"));
    }
    let kl = kl_divergence(q, p)?;
    let g = q.mean().graph().clone();
    let mut recon: Option<Tensor<T>> = None;
    for noise in noises {
        let z = q.sample_reparam(&g.column(noise.clone()))?;
        let lik = DiagonalGaussian::new(decode(&z)?, epsilon)?;
        let term = lik.log_density_unnormalized(y)?.neg();
        recon = Some(match recon {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    let s = T::from_usize(noises.len()).unwrap();
    Ok((kl, recon.unwrap().scale(T::one() / s)))
}

impl<T: Scalar> MetaLearner<T> for VmgpModel<T> {
    fn name(&self) -> &'static str {
        "vmgp"
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
        rng: &mut SeededRng,
    ) -> Result<Tensor<T>> {
        let n = task.k() + task.q();
        let noises: Vec<Vec<T>> = (0..self.cfg.mc_samples_train)
            .map(|_| standard_normals(rng, n))
            .collect();
        self.task_loss_with_noise(bound, task, jitter, &noises)
    }

    fn predictive_samples(
        &self,
        task: &Task,
        n_samples: usize,
        jitter: T,
        rng: &mut SeededRng,
    ) -> Result<Matrix<T>> {
        self.posterior_samples(
            &task.x_supp,
            &task.y_supp,
            &task.x_query,
            n_samples,
            jitter,
            rng,
        )
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = self.params.to_checkpoint();
        c.insert(
            EPSILON_KEY.into(),
            Record {
                shape: vec![1, 1],
                values: vec![self.epsilon.as_f64()],
            },
        );
        c
    }

    fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let eps = ckpt
            .get(EPSILON_KEY)
            .and_then(|r| r.values.first().copied())
            .ok_or_else(|| Error::contract("checkpoint lacks epsilon"))?;
        if !(eps > 0.0) {
            return Err(Error::contract("checkpoint epsilon must be positive"));
        }
        self.params.load_checkpoint(ckpt)?;
        self.epsilon = T::lit(eps);
        self.cfg.epsilon = eps;
        Ok(())
    }
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// The map `f(z) = Ψ⁻¹(Φ(z))` pushing `N(0, 1)` onto a target distribution
/// with CDF `Ψ`; `Ψ⁻¹` is found by bisection to 1e-10.
pub struct LatentFactorization<F> {
    target_cdf: F,
}

const PROBE_GRID: usize = 2001;
const PROBE_RANGE: f64 = 50.0;
const BISECTION_TOL: f64 = 1e-10;

impl<F: Fn(f64) -> f64> LatentFactorization<F> {
    /// Fails if probing `target_cdf` on a grid over `[−50, 50]` finds it
    /// decreasing or leaving `[0, 1]`.
    pub fn new(target_cdf: F) -> Result<Self> {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..PROBE_GRID {
            let x = -PROBE_RANGE + 2.0 * PROBE_RANGE * i as f64 / (PROBE_GRID - 1) as f64;
            let c = target_cdf(x);
            if !(0.0..=1.0).contains(&c) || c < prev {
                return Err(Error::contract(format!(
                    "target cdf is not a monotone cdf (probe at {x})"
                )));
            }
            prev = c;
        }
        Ok(LatentFactorization { target_cdf })
    }

    pub fn map(&self, z: f64) -> f64 {
        let p = standard_normal_cdf(z);
        let cdf = &self.target_cdf;
        let (mut lo, mut hi) = (-1.0, 1.0);
        while cdf(lo) > p && lo > -1e12 {
            lo *= 2.0;
        }
        while cdf(hi) < p && hi < 1e12 {
            hi *= 2.0;
        }
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// One-shot form of [`LatentFactorization::map`].
pub fn latent_factorization_map(target_cdf: impl Fn(f64) -> f64, z: f64) -> Result<f64> {
    Ok(LatentFactorization::new(target_cdf)?.map(z))
}
