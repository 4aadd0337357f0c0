//! Train one model on one environment, evaluate it on fresh test tasks and
//! write the run's artifacts.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vmgp_core::baselines::{AlpacaConfig, DktConfig};
use vmgp_core::environments::{Split, Task, TaskSampler};
use vmgp_core::metrics::{aggregate, mse_by_averaging, nll_hat};
use vmgp_core::training::{meta_train, seeded_stream, MetaLearner, TrainConfig};
use vmgp_core::vmgp::VmgpConfig;
use vmgp_core::{AlpacaModel, DktModel, Matrix, VmgpModel};

use crate::config::{ExperimentConfig, ModelKind, Validated};
use crate::HarnessError;

/// Cholesky jitter used for training and evaluation.
pub const JITTER: f64 = 1e-6;

const INIT_STREAM: u64 = 1;
const TEST_TASK_STREAM: u64 = 2;
/// Test task `i` draws its posterior samples from stream `SAMPLE_STREAM + i`.
const SAMPLE_STREAM: u64 = 1 << 32;

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub environment: String,
    pub metric: String,
    pub mean: f64,
    pub std_error: f64,
    pub n_test_tasks: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
struct SampleDump<'a> {
    x_supp: &'a [f64],
    y_supp: &'a [f64],
    x_query: &'a [f64],
    y_query: &'a [f64],
    samples: Vec<&'a [f64]>,
}

/// Per-point metrics and raw samples of a test set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub tasks: Vec<Task>,
    /// One `n_posterior_samples x q` matrix per task.
    pub samples: Vec<Matrix>,
    pub nll: Vec<f64>,
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    /// `[nll, mse]`.
    pub rows: [ResultRow; 2],
    pub loss_trace: Vec<f64>,
}

/// Draws `n_test_tasks` test tasks and scores the model's posterior samples
/// at every query point. Tasks are evaluated in parallel; the result only
/// depends on `seed`.
pub fn evaluate<M: MetaLearner<f64>>(
    model: &M,
    sampler: &TaskSampler,
    n_test_tasks: usize,
    n_posterior_samples: usize,
    xi: f64,
    seed: u64,
) -> Result<Evaluation, HarnessError> {
    let test = sampler.with_split(Split::Test);
    let mut rng = seeded_stream(seed, TEST_TASK_STREAM);
    let tasks: Vec<Task> = (0..n_test_tasks).map(|_| test.sample(&mut rng)).collect();
    let samples = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let mut rng = seeded_stream(seed, SAMPLE_STREAM + i as u64);
            model.predictive_samples(task, n_posterior_samples, JITTER, &mut rng)
        })
        .collect::<vmgp_core::Result<Vec<Matrix>>>()?;

    let mut nll = Vec::new();
    let mut mse = Vec::new();
    for (task, s) in tasks.iter().zip(&samples) {
        let t = s.transpose();
        for (j, &y) in task.y_query.iter().enumerate() {
            let col = &t.data[j * t.cols..(j + 1) * t.cols];
            nll.push(nll_hat(col, y, xi)?);
            mse.push(mse_by_averaging(col, y)?);
        }
    }
    Ok(Evaluation {
        tasks,
        samples,
        nll,
        mse,
    })
}

/// Trains and evaluates the configured model and writes `results.csv`,
/// `loss_trace.csv`, `checkpoint.json` and `samples.jsonl` into a fresh
/// directory `<model>_<env>_<seed>_<timestamp>` under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let v = cfg.validate()?;
    let start = Instant::now();
    let mut init = seeded_stream(cfg.seed, INIT_STREAM);
    match v.model {
        ModelKind::Vmgp => {
            let mut m = VmgpModel::new(VmgpConfig::default(), &mut init)?;
            train_evaluate_write(&mut m, cfg, v, start)
        }
        ModelKind::Dkt => {
            let mut m = DktModel::new(&DktConfig::default(), &mut init);
            train_evaluate_write(&mut m, cfg, v, start)
        }
        ModelKind::Alpaca => {
            let mut m = AlpacaModel::new(&AlpacaConfig::default(), &mut init);
            train_evaluate_write(&mut m, cfg, v, start)
        }
    }
}

fn train_evaluate_write<M: MetaLearner<f64>>(
    model: &mut M,
    cfg: &ExperimentConfig,
    v: Validated,
    start: Instant,
) -> Result<RunOutput, HarnessError> {
    let sampler = TaskSampler::new(v.env).with_shots(v.k, v.q);
    let train = TrainConfig {
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        learning_rate: cfg.lr,
        seed: cfg.seed,
        jitter: JITTER,
    };
    let loss_trace = meta_train(model, &sampler, &train)?;
    let eval = evaluate(
        &*model,
        &sampler,
        cfg.n_test_tasks,
        cfg.n_posterior_samples,
        cfg.xi,
        cfg.seed,
    )?;
    let wall_time_s = start.elapsed().as_secs_f64();

    let row = |metric: &str, values: &[f64]| -> Result<ResultRow, HarnessError> {
        let (mean, std_error) = aggregate(values)?;
        if !mean.is_finite() || !std_error.is_finite() {
            return Err(HarnessError::Runtime(format!(
                "non-finite {metric} aggregate"
            )));
        }
        Ok(ResultRow {
            model: v.model.as_str().into(),
            environment: v.env.as_str().into(),
            metric: metric.into(),
            mean,
            std_error,
            n_test_tasks: cfg.n_test_tasks,
            seed: cfg.seed,
            wall_time_s,
        })
    };
    let rows = [row("nll", &eval.nll)?, row("mse", &eval.mse)?];

    let dir = create_run_dir(&cfg.out, v, cfg.seed)?;
    append_results(&dir.join("results.csv"), &rows)?;
    write_loss_trace(&dir.join("loss_trace.csv"), &loss_trace)?;
    let ckpt = serde_json::to_string_pretty(&model.checkpoint()).expect("checkpoint serializes");
    fs::write(dir.join("checkpoint.json"), ckpt).map_err(HarnessError::io("checkpoint.json"))?;
    write_samples(&dir.join("samples.jsonl"), &eval)?;

    Ok(RunOutput {
        dir,
        rows,
        loss_trace,
    })
}

fn create_run_dir(out: &Path, v: Validated, seed: u64) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(out).map_err(HarnessError::io(format!("creating {}", out.display())))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
    let base = format!("{}_{}_{}_{}", v.model, v.env, seed, stamp);
    for n in 0.. {
        let name = if n == 0 {
            base.clone()
        } else {
            format!("{base}-{n}")
        };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(HarnessError::io(format!("creating {}", dir.display()))(e)),
        }
    }
    unreachable!()
}

/// Appends rows, writing the header only when the file is new.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(HarnessError::io(format!("opening {}", path.display())))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(HarnessError::io("results.csv"))?;
    Ok(())
}

fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().map_err(HarnessError::io("loss_trace.csv"))?;
    Ok(())
}

fn write_samples(path: &Path, eval: &Evaluation) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(HarnessError::io("samples.jsonl"))?;
    let mut w = BufWriter::new(file);
    for (task, s) in eval.tasks.iter().zip(&eval.samples) {
        let dump = SampleDump {
            x_supp: &task.x_supp,
            y_supp: &task.y_supp,
            x_query: &task.x_query,
            y_query: &task.y_query,
            samples: s.data.chunks(s.cols).collect(),
        };
        serde_json::to_writer(&mut w, &dump).expect("sample dump serializes");
        w.write_all(b"\n")
            .map_err(HarnessError::io("samples.jsonl"))?;
    }
    w.flush().map_err(HarnessError::io("samples.jsonl"))?;
    Ok(())
}
