//! Batched meta-training shared by every model.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::environments::{Task, TaskSampler};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{adam_step, AdamState, Bound, Checkpoint, Graph, Matrix, Params, Tensor};

/// RNG used everywhere a seed must reproduce a run bit for bit.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator for `seed`. Stream 0 is the
/// same sequence as [`seeded`].
pub fn seeded_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = seeded(seed);
    rng.set_stream(stream);
    rng
}

/// A model trained episodically on tasks that yields samples from its
/// predictive posterior.
pub trait MetaLearner<T: Scalar>: Sync {
    fn name(&self) -> &'static str;

    fn params(&self) -> &Params<T>;

    fn params_mut(&mut self) -> &mut Params<T>;

    /// Training loss of one task, built on a fresh graph through `bound`.
    fn task_loss(
        &self,
        bound: &Bound<T>,
        task: &Task,
        jitter: T,
        rng: &mut SeededRng,
    ) -> Result<Tensor<T>>;

    /// `n_samples x q` draws of the query labels given the support set.
    fn predictive_samples(
        &self,
        task: &Task,
        n_samples: usize,
        jitter: T,
        rng: &mut SeededRng,
    ) -> Result<Matrix<T>>;

    fn checkpoint(&self) -> Checkpoint {
        self.params().to_checkpoint()
    }

    fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.params_mut().load_checkpoint(ckpt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 10_000,
            batch_size: 50,
            learning_rate: 1e-3,
            seed: 0,
            jitter: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(self.jitter > 0.0) {
            return Err(Error::contract(
                "train config needs batch_size > 0, learning_rate > 0 and jitter > 0",
            ));
        }
        Ok(())
    }
}

/// Runs `f` and, on a factorization failure, once more with ten times the
/// jitter.
pub fn with_jitter_retry<T: Scalar, R>(jitter: T, mut f: impl FnMut(T) -> Result<R>) -> Result<R> {
    match f(jitter) {
        Err(Error::NotPositiveDefinite { .. }) => f(jitter * T::lit(10.0)),
        other => other,
    }
}

fn task_gradient<T: Scalar, M: MetaLearner<T> + ?Sized>(
    model: &M,
    task: &Task,
    jitter: T,
    seed: u64,
) -> Result<(T, Vec<Matrix<T>>)> {
    with_jitter_retry(jitter, |jitter| {
        let graph = Graph::new();
        let bound = graph.bind(model.params());
        let mut rng = seeded(seed);
        let loss = model.task_loss(&bound, task, jitter, &mut rng)?;
        let grads = loss.backward()?;
        Ok((loss.item(), bound.gradients(&grads)))
    })
}

/// Episodic training: each iteration draws a fresh batch of tasks, averages
/// the per-task losses and takes one Adam step on all parameters.
///
/// Returns the batch-mean loss per iteration. Results are bit-identical for a
/// given seed regardless of thread count: per-task gradients are computed in
/// parallel but reduced in batch order.
pub fn meta_train<T: Scalar, M: MetaLearner<T>>(
    model: &mut M,
    sampler: &TaskSampler,
    cfg: &TrainConfig,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let lr = T::lit(cfg.learning_rate);
    let jitter = T::lit(cfg.jitter);
    let batch = T::from_usize(cfg.batch_size).unwrap();
    let mut trace = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let jobs: Vec<(Task, u64)> = (0..cfg.batch_size)
            .map(|_| {
                let task = sampler.sample(&mut rng);
                (task, rng.next_u64())
            })
            .collect();
        let shared: &M = model;
        let results: Vec<Result<(T, Vec<Matrix<T>>)>> = jobs
            .par_iter()
            .map(|(task, seed)| task_gradient(shared, task, jitter, *seed))
            .collect();

        let mut loss = T::zero();
        let mut grads: Vec<Matrix<T>> = model
            .params()
            .values()
            .map(|p| Matrix::zeros(p.rows, p.cols))
            .collect();
        for r in results {
            let (l, g) = r.map_err(|e| match e {
                Error::NotPositiveDefinite { pivot } => Error::Numeric {
                    iteration,
                    what: format!("covariance factorization (pivot {pivot})"),
                },
                other => other,
            })?;
            loss = loss + l;
            for (acc, gi) in grads.iter_mut().zip(g) {
                for (a, v) in acc.data.iter_mut().zip(gi.data) {
                    *a = *a + v;
                }
            }
        }
        loss = loss / batch;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                iteration,
                what: "loss".into(),
            });
        }
        for g in &mut grads {
            for v in &mut g.data {
                *v = *v / batch;
            }
        }
        if grads.iter().any(|g| g.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric {
                iteration,
                what: "gradient".into(),
            });
        }
        adam_step(model.params_mut(), &grads, &mut adam, lr)?;
        trace.push(loss);
    }
    Ok(trace)
}
