//! Quick oracle self-test behind the `verify` subcommand.

use rand::Rng;
use rand_distr::StandardNormal;
use vmgp_core::distributions::{kl_divergence, MultivariateGaussian};
use vmgp_core::metrics::{aggregate, nll_exact_gaussian, nll_hat};
use vmgp_core::tensor::finite_diff::check_gradients;
use vmgp_core::training::seeded;
use vmgp_core::vmgp::LatentFactorization;
use vmgp_core::{Graph, Matrix, Result};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check {
            name,
            passed,
            detail,
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// `E_{y~N(μ,σ²)} exp(−(y* − y)²/ξ)` by composite Simpson over ±12σ.
pub fn smoothed_likelihood_quadrature(mean: f64, var: f64, y_star: f64, xi: f64) -> f64 {
    let sd = var.sqrt();
    let (a, b) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |y: f64| {
        let z = (y - mean) / sd;
        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            * (-(y_star - y).powi(2) / xi).exp()
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn exp1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-x).exp()
    }
}

pub fn run_checks() -> Vec<Check> {
    let mut out = Vec::new();

    out.push(check("nll_hat worked examples", || {
        let a = nll_hat(&[0.7], 0.7, 0.1)?;
        let b: f64 = nll_hat(&[1.7], 0.7, 0.1)?;
        let c = nll_hat(&[0.7, 100.7], 0.7, 0.1)?;
        let ok = a == 0.0 && (b - 10.0).abs() < 1e-12 && (c - 2f64.ln()).abs() < 1e-12;
        Ok((ok, format!("{a}, {b}, {c}")))
    }));

    out.push(check("aggregate worked examples", || {
        let (m, se): (f64, f64) = aggregate(&[1.0, 2.0, 3.0, 4.0])?;
        Ok((
            m == 2.5 && (se - 0.6455).abs() < 1e-4,
            format!("({m}, {se})"),
        ))
    }));

    out.push(check("closed-form smoothed NLL vs quadrature", || {
        let mut rng = seeded(11);
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let mean = rng.random_range(-2.0..2.0);
            let var = rng.random_range(0.05..2.0);
            let y = rng.random_range(-3.0..3.0);
            let exact = nll_exact_gaussian(mean, var, y, 0.1)?;
            let quad = -smoothed_likelihood_quadrature(mean, var, y, 0.1).ln();
            worst = worst.max((exact - quad).abs());
        }
        Ok((worst < 1e-8, format!("max abs error {worst:.2e}")))
    }));

    out.push(check("Monte-Carlo NLL matches closed form", || {
        let mut rng = seeded(12);
        let n = 50_000;
        let xi = 0.1;
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let mean: f64 = rng.random_range(-1.0..1.0);
            let var: f64 = rng.random_range(0.1..1.0);
            let y_star = mean + rng.random_range(-1.0..1.0);
            let draws: Vec<f64> = (0..n)
                .map(|_| mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let est = nll_hat(&draws, y_star, xi)?;
            let e: Vec<f64> = draws
                .iter()
                .map(|y| (-(y_star - y).powi(2) / xi).exp())
                .collect();
            let (m, se) = aggregate(&e)?;
            let z = (est - nll_exact_gaussian(mean, var, y_star, xi)?).abs() / (se / m);
            worst = worst.max(z);
        }
        Ok((
            worst < 4.0,
            format!("max deviation {worst:.2} standard errors"),
        ))
    }));

    out.push(check("KL scalar cases", || {
        let g = Graph::new();
        let n = |m: f64, v: f64| {
            MultivariateGaussian::new(g.column(vec![m]), g.matrix(1, 1, vec![v]), 0.0)
        };
        let a = kl_divergence(&n(1.0, 1.0)?, &n(0.0, 1.0)?)?.item();
        let b = kl_divergence(&n(0.0, 2.0)?, &n(0.0, 1.0)?)?.item();
        let ok = (a - 0.5).abs() < 1e-12 && (b - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-12;
        Ok((ok, format!("{a}, {b}")))
    }));

    out.push(check("bivariate conditioning", || {
        let g = Graph::new();
        let joint = MultivariateGaussian::new(
            g.column(vec![0.0, 0.0]),
            g.matrix(2, 2, vec![1.0, 0.5, 0.5, 1.0]),
            0.0,
        )?;
        let c = joint.condition(1, &g.column(vec![2.0]))?;
        let (m, v) = (c.mean().item(), c.cov().item());
        Ok((
            (m - 1.0).abs() < 1e-12 && (v - 0.75).abs() < 1e-12,
            format!("N({m}, {v})"),
        ))
    }));

    out.push(check(
        "reverse-mode gradients vs finite differences",
        || {
            let mut rng = seeded(13);
            let mut rand_matrix =
                |r, c| Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
            let inputs = [rand_matrix(3, 3), rand_matrix(3, 2)];
            let gc = check_gradients(
                |g, t| {
                    let a = t[0].matmul(&t[0].transpose())?.add_diag(&g.scalar(1.0))?;
                    let l = a.cholesky(0.0)?;
                    l.log_det_chol()?.add(&l.solve_lower(&t[1])?.square().sum())
                },
                &inputs,
                1e-5,
                1e-9,
            )?;
            Ok((
                gc.passes(1e-4),
                format!("max relative error {:.2e}", gc.max_rel_error),
            ))
        },
    ));

    out.push(check("latent factorization sends N(0,1) to Exp(1)", || {
        let f = LatentFactorization::new(exp1_cdf)?;
        let mut rng = seeded(14);
        let n = 5_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| f.map(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = exp1_cdf(x);
                (c - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - c)
            })
            .fold(0.0, f64::max);
        Ok((d < 0.03, format!("KS statistic {d:.4}")))
    }));

    out
}
