//! Seeded few-shot regression task generators.
//!
//! Samplers are pure functions of their configuration and the caller's RNG,
//! so any stream of tasks is reproducible from a seed.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One few-shot regression problem: a support set to adapt on and a query
/// set to predict. Inputs and labels are scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub x_supp: Vec<f64>,
    pub y_supp: Vec<f64>,
    pub x_query: Vec<f64>,
    pub y_query: Vec<f64>,
}

impl Task {
    pub fn k(&self) -> usize {
        self.x_supp.len()
    }

    pub fn q(&self) -> usize {
        self.x_query.len()
    }

    /// Support inputs followed by query inputs.
    pub fn all_x(&self) -> Vec<f64> {
        self.x_supp.iter().chain(&self.x_query).copied().collect()
    }

    pub fn all_y(&self) -> Vec<f64> {
        self.y_supp.iter().chain(&self.y_query).copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.y_supp.len() != self.k() || self.y_query.len() != self.q() {
            return Err(Error::Dimension {
                op: "task",
                lhs: vec![self.k(), self.q()],
                rhs: vec![self.y_supp.len(), self.y_query.len()],
            });
        }
        if self.k() == 0 || self.q() == 0 {
            return Err(Error::contract(
                "tasks need at least one support and one query point",
            ));
        }
        let finite = [&self.x_supp, &self.y_supp, &self.x_query, &self.y_query]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::contract("task contains non-finite values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LatentTransform {
    /// `arctan(1/z)`
    ArctanInv,
    /// `5 floor(z)`
    Floor,
    /// `tan(z)` clamped to `[−10, 10]`
    Tan,
    /// `5 sin(1/z)`
    SinInv,
}

impl LatentTransform {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            LatentTransform::ArctanInv => (1.0 / z).atan(),
            LatentTransform::Floor => 5.0 * z.floor(),
            LatentTransform::Tan => z.tan().clamp(-10.0, 10.0),
            LatentTransform::SinInv => 5.0 * (1.0 / z).sin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SinusoidVariant {
    Standard,
    HighFrequency,
    OutOfRange,
    Tangent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepVariant {
    Standard,
    HighFrequency,
}

/// Every registered task distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvId {
    Latent(LatentTransform),
    Sinusoid(SinusoidVariant),
    Step(StepVariant),
}

impl EnvId {
    pub const ALL: [EnvId; 10] = [
        EnvId::Latent(LatentTransform::ArctanInv),
        EnvId::Latent(LatentTransform::Floor),
        EnvId::Latent(LatentTransform::Tan),
        EnvId::Latent(LatentTransform::SinInv),
        EnvId::Sinusoid(SinusoidVariant::Standard),
        EnvId::Sinusoid(SinusoidVariant::HighFrequency),
        EnvId::Sinusoid(SinusoidVariant::OutOfRange),
        EnvId::Sinusoid(SinusoidVariant::Tangent),
        EnvId::Step(StepVariant::Standard),
        EnvId::Step(StepVariant::HighFrequency),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Latent(LatentTransform::ArctanInv) => "latent-arctan",
            EnvId::Latent(LatentTransform::Floor) => "latent-floor",
            EnvId::Latent(LatentTransform::Tan) => "latent-tan",
            EnvId::Latent(LatentTransform::SinInv) => "latent-sininv",
            EnvId::Sinusoid(SinusoidVariant::Standard) => "sin-standard",
            EnvId::Sinusoid(SinusoidVariant::HighFrequency) => "sin-highfreq",
            EnvId::Sinusoid(SinusoidVariant::OutOfRange) => "sin-outofrange",
            EnvId::Sinusoid(SinusoidVariant::Tangent) => "sin-tangent",
            EnvId::Step(StepVariant::Standard) => "step-standard",
            EnvId::Step(StepVariant::HighFrequency) => "step-highfreq",
        }
    }

    pub fn valid_ids() -> String {
        Self::ALL.map(EnvId::as_str).join(", ")
    }

    /// Default support size.
    pub fn default_k(self) -> usize {
        match self {
            EnvId::Latent(LatentTransform::ArctanInv) => 5,
            EnvId::Latent(_) => 10,
            EnvId::Sinusoid(SinusoidVariant::Standard) => 5,
            EnvId::Sinusoid(_) => 10,
            EnvId::Step(_) => 5,
        }
    }

    pub fn default_q(self) -> usize {
        5
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                Error::contract(format!(
                    "unknown environment `{s}` (valid: {})",
                    Self::valid_ids()
                ))
            })
    }
}

/// Whether tasks are drawn for meta-training or meta-testing. Only the
/// out-of-range sinusoid distinguishes the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSampler {
    pub env: EnvId,
    pub k: usize,
    pub q: usize,
    pub split: Split,
    /// High-frequency sinusoid widens the frequency `B` instead of the phase
    /// `C`.
    pub widen_frequency: bool,
}

impl TaskSampler {
    pub fn new(env: EnvId) -> Self {
        TaskSampler {
            env,
            k: env.default_k(),
            q: env.default_q(),
            split: Split::Train,
            widen_frequency: false,
        }
    }

    pub fn with_shots(mut self, k: usize, q: usize) -> Self {
        self.k = k;
        self.q = q;
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Task {
        match self.env {
            EnvId::Latent(t) => sample_latent_task(t, self.k, self.q, rng),
            EnvId::Sinusoid(v) => {
                sample_sinusoid_task(v, self.k, self.q, self.split, self.widen_frequency, rng)
            }
            EnvId::Step(v) => sample_step_task(v, self.k, self.q, rng),
        }
    }
}

/// Lengthscale of the latent GP, `e^0.5`.
pub const LATENT_LOG_LENGTHSCALE: f64 = 0.5;
const LATENT_JITTER: f64 = 1e-6;
const LATENT_Z_GUARD: f64 = 1e-8;

/// Joint draw of a zero-mean RBF GP (lengthscale `e^0.5`, outputscale
/// `e^log_variance`) at `x`.
pub fn latent_gp_draw<R: Rng + ?Sized>(x: &[f64], log_variance: f64, rng: &mut R) -> Vec<f64> {
    let l2 = (2.0 * LATENT_LOG_LENGTHSCALE).exp();
    let s = log_variance.exp();
    let n = x.len();
    let k = Matrix::from_fn(n, n, |i, j| {
        let d = x[i] - x[j];
        s * (-d * d / (2.0 * l2)).exp()
    });
    // An RBF Gram with this jitter always factors; escalate just in case.
    let mut jitter = LATENT_JITTER;
    let l = loop {
        match k.cholesky(jitter) {
            Ok(l) => break l,
            Err(_) => jitter *= 10.0,
        }
    };
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (0..n)
        .map(|i| (0..=i).map(|j| l.get(i, j) * eps[j]).sum())
        .collect()
}

pub fn sample_latent_task<R: Rng + ?Sized>(
    transform: LatentTransform,
    k: usize,
    q: usize,
    rng: &mut R,
) -> Task {
    let n = k + q;
    let log_variance: f64 = rng.sample(StandardNormal);
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let z = loop {
        let z = latent_gp_draw(&x, log_variance, rng);
        if z.iter().all(|v| v.abs() >= LATENT_Z_GUARD) {
            break z;
        }
    };
    let y: Vec<f64> = z.iter().map(|&v| transform.apply(v)).collect();
    split_task(x, y, k)
}

fn split_task(mut x: Vec<f64>, mut y: Vec<f64>, k: usize) -> Task {
    let x_query = x.split_off(k);
    let y_query = y.split_off(k);
    Task {
        x_supp: x,
        y_supp: y,
        x_query,
        y_query,
    }
}

/// Amplitude, frequency and phase of one sinusoid task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub fn sample_sinusoid_params<R: Rng + ?Sized>(
    variant: SinusoidVariant,
    widen_frequency: bool,
    rng: &mut R,
) -> SinusoidParams {
    let a = rng.random_range(0.1..=5.0);
    let wide = variant == SinusoidVariant::HighFrequency;
    let b_max = if wide && widen_frequency {
        15.0
    } else {
        2.0 * std::f64::consts::PI
    };
    let c_max = if wide && !widen_frequency { 15.0 } else { 2.0 };
    let b = rng.random_range(0.0..=b_max);
    let c = rng.random_range(0.5..=c_max);
    SinusoidParams { a, b, c }
}

/// `A sin(Bx + C) + noise`, or the clamped tangent form.
pub fn sinusoid_label(variant: SinusoidVariant, p: SinusoidParams, x: f64, noise: f64) -> f64 {
    match variant {
        SinusoidVariant::Tangent => (p.a * (p.b * x + p.c).tan() + noise).clamp(-10.0, 10.0),
        _ => p.a * (p.b * x + p.c).sin() + noise,
    }
}

pub fn sample_sinusoid_task<R: Rng + ?Sized>(
    variant: SinusoidVariant,
    k: usize,
    q: usize,
    split: Split,
    widen_frequency: bool,
    rng: &mut R,
) -> Task {
    let p = sample_sinusoid_params(variant, widen_frequency, rng);
    let x_max = if variant == SinusoidVariant::OutOfRange && split == Split::Test {
        10.0
    } else {
        5.0
    };
    let noise = Normal::new(0.0, 0.01 * p.a).expect("positive noise scale");
    let x: Vec<f64> = (0..k + q).map(|_| rng.random_range(-5.0..=x_max)).collect();
    let y = x
        .iter()
        .map(|&xi| sinusoid_label(variant, p, xi, noise.sample(rng)))
        .collect();
    split_task(x, y, k)
}

/// Standard deviation of step-function label noise.
pub const STEP_NOISE_SD: f64 = 0.03;

/// Number of switch points and the magnitude of the two levels.
pub fn step_shape(variant: StepVariant) -> (usize, f64) {
    match variant {
        StepVariant::Standard => (3, 1.0),
        StepVariant::HighFrequency => (5, 2.0),
    }
}

/// Noise-free level at `x` for ascending `switches`: starts at the negative
/// level and flips at every switch point `s <= x`.
pub fn step_level(variant: StepVariant, switches: &[f64], x: f64) -> f64 {
    let (_, level) = step_shape(variant);
    let passed = switches.iter().filter(|&&s| s <= x).count();
    if passed % 2 == 0 {
        -level
    } else {
        level
    }
}

pub fn sample_step_switches<R: Rng + ?Sized>(variant: StepVariant, rng: &mut R) -> Vec<f64> {
    let (n, _) = step_shape(variant);
    let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..=2.5)).collect();
    s.sort_by(f64::total_cmp);
    s
}

pub fn sample_step_task<R: Rng + ?Sized>(
    variant: StepVariant,
    k: usize,
    q: usize,
    rng: &mut R,
) -> Task {
    let switches = sample_step_switches(variant, rng);
    let noise = Normal::new(0.0, STEP_NOISE_SD).expect("positive noise scale");
    let x: Vec<f64> = (0..k + q).map(|_| rng.random_range(-5.0..=5.0)).collect();
    let y = x
        .iter()
        .map(|&xi| step_level(variant, &switches, xi) + noise.sample(rng))
        .collect();
    split_task(x, y, k)
}

#[derive(Serialize, Deserialize)]
struct TaskLine {
    k: usize,
    q: usize,
    x_supp: Vec<f64>,
    y_supp: Vec<f64>,
    x_query: Vec<f64>,
    y_query: Vec<f64>,
}

/// Writes one JSON object per line: `{k, q, x_supp, y_supp, x_query, y_query}`.
pub fn write_tasks_jsonl<W: Write>(mut w: W, tasks: &[Task]) -> std::io::Result<()> {
    for t in tasks {
        let line = TaskLine {
            k: t.k(),
            q: t.q(),
            x_supp: t.x_supp.clone(),
            y_supp: t.y_supp.clone(),
            x_query: t.x_query.clone(),
            y_query: t.y_query.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tasks_jsonl<R: BufRead>(r: R) -> Result<Vec<Task>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::contract(format!("task line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TaskLine = serde_json::from_str(&line)
            .map_err(|e| Error::contract(format!("task line {}: {e}", i + 1)))?;
        let task = Task {
            x_supp: t.x_supp,
            y_supp: t.y_supp,
            x_query: t.x_query,
            y_query: t.y_query,
        };
        if task.k() != t.k || task.q() != t.q {
            return Err(Error::contract(format!(
                "task line {}: declared k/q do not match arrays",
                i + 1
            )));
        }
        task.validate()?;
        out.push(task);
    }
    Ok(out)
}
