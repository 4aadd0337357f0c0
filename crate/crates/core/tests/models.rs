//! Model predictions against dense closed-form references.

mod common;

use common::*;
use rand::Rng;
use vmgp_core::baselines::{AlpacaConfig, DktConfig};
use vmgp_core::environments::{EnvId, TaskSampler};
use vmgp_core::training::{seeded, MetaLearner};
use vmgp_core::vmgp::VmgpConfig;
use vmgp_core::{AlpacaModel, DktModel, Graph, Matrix, Params, VmgpModel};

fn set(params: &mut Params, name: &str, values: &[f64]) {
    let id = params
        .find(name)
        .unwrap_or_else(|| panic!("no param {name}"));
    let m = params.get_mut(id);
    assert_eq!(m.data.len(), values.len(), "{name}");
    m.data.copy_from_slice(values);
}

fn rbf_dense(a: &[f64], b: &[f64], log_l: f64, log_s: f64) -> Dense {
    let l2 = (2.0 * log_l).exp();
    a.iter()
        .map(|x| {
            b.iter()
                .map(|y| log_s.exp() * (-(x - y).powi(2) / (2.0 * l2)).exp())
                .collect()
        })
        .collect()
}

fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn sub(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect())
        .collect()
}

fn add_diag(a: &Dense, v: f64) -> Dense {
    let mut out = a.clone();
    for (i, row) in out.iter_mut().enumerate() {
        row[i] += v;
    }
    out
}

fn col(v: &[f64]) -> Dense {
    v.iter().map(|&x| vec![x]).collect()
}

fn flat(d: &Dense) -> Vec<f64> {
    d.iter().flatten().copied().collect()
}

/// Linear embeddings and an affine decoder make the three-stage sampler a
/// Gaussian whose moments follow from block conditioning by hand.
#[test]
fn vmgp_samples_match_linear_gaussian_composition() {
    let cfg = VmgpConfig {
        hidden: vec![],
        embed_dim: 1,
        ..VmgpConfig::default()
    };
    let mut model = VmgpModel::new(cfg, &mut seeded(0)).unwrap();
    let (p_ll, p_ls, q_ls) = (0.3, 0.2, -2.0);
    let (p_mean, q_bias, dec_w, dec_b) = (0.4, 0.1, 2.0, -0.5);
    {
        let p = model.params_mut();
        set(p, "p.mean", &[p_mean]);
        set(p, "p.kernel.embed.0.w", &[1.0]);
        set(p, "p.kernel.embed.0.b", &[0.0]);
        set(p, "p.kernel.log_lengthscale", &[p_ll]);
        set(p, "p.kernel.log_outputscale", &[p_ls]);
        set(p, "q.mean.0.w", &[0.0, 1.0]);
        set(p, "q.mean.0.b", &[q_bias]);
        set(p, "q.kernel.embed.0.w", &[1.0, 0.0]);
        set(p, "q.kernel.embed.0.b", &[0.0]);
        set(p, "q.kernel.log_lengthscale", &[0.0]);
        set(p, "q.kernel.log_outputscale", &[q_ls]);
        set(p, "f.decoder.0.w", &[dec_w]);
        set(p, "f.decoder.0.b", &[dec_b]);
    }

    let xs = [-1.0, 0.2, 0.9];
    let ys = [0.5, -0.3, 1.1];
    let xq = [0.0, 1.5];
    let n = 20_000;
    let samples = model
        .posterior_samples(&xs, &ys, &xq, n, 1e-6, &mut seeded(1))
        .unwrap();

    let mq: Vec<f64> = ys.iter().map(|y| y + q_bias).collect();
    let sq = rbf_dense(&xs, &xs, 0.0, q_ls);
    let kss = rbf_dense(&xs, &xs, p_ll, p_ls);
    let kqs = rbf_dense(&xq, &xs, p_ll, p_ls);
    let kqq = rbf_dense(&xq, &xq, p_ll, p_ls);
    let (kss_inv, _) = inverse_and_logdet(&kss);
    let gain = mat_mul(&kqs, &kss_inv);
    let shift = mat_mul(
        &gain,
        &col(&mq.iter().map(|m| m - p_mean).collect::<Vec<_>>()),
    );
    let z_mean: Vec<f64> = shift.iter().map(|r| p_mean + r[0]).collect();
    let z_cov = add(
        &sub(&kqq, &mat_mul(&gain, &transpose(&kqs))),
        &mat_mul(&gain, &mat_mul(&sq, &transpose(&gain))),
    );
    let y_mean: Vec<f64> = z_mean.iter().map(|m| dec_w * m + dec_b).collect();
    let y_cov: Dense = z_cov
        .iter()
        .map(|r| r.iter().map(|v| dec_w * dec_w * v).collect())
        .collect();
    assert_moments(&samples, &y_mean, &y_cov);
}

#[test]
fn dkt_prediction_matches_dense_gp_formulas() {
    let mut rng = seeded(2);
    let cfg = DktConfig {
        hidden: vec![8],
        embed_dim: 3,
        ..DktConfig::default()
    };
    for trial in 0..20 {
        let mut model = DktModel::new(&cfg, &mut rng);
        let c: f64 = rng.random_range(-1.0..1.0);
        let log_noise: f64 = rng.random_range(-4.0..0.0);
        set(model.params_mut(), "dkt.mean", &[c]);
        set(model.params_mut(), "dkt.log_noise", &[log_noise]);
        let (k, m) = (rng.random_range(1..8), rng.random_range(1..5));
        let xs = random_vec(&mut rng, k);
        let ys = random_vec(&mut rng, k);
        let xq = random_vec(&mut rng, m);

        let got = model.predict(&xs, &ys, &xq, 0.0).unwrap();

        let g = Graph::new();
        let bound = g.bind_frozen(model.params());
        let x_all: Vec<f64> = xq.iter().chain(&xs).copied().collect();
        let gram = dense(
            &model
                .kernel
                .gram_self(&bound, &g.column(x_all))
                .unwrap()
                .value(),
        );
        let block = |r0: usize, r1: usize, c0: usize, c1: usize| -> Dense {
            (r0..r1).map(|i| gram[i][c0..c1].to_vec()).collect()
        };
        let noise = log_noise.exp();
        let kqq = block(0, m, 0, m);
        let kqs = block(0, m, m, m + k);
        let kss = add_diag(&block(m, m + k, m, m + k), noise);
        let (kss_inv, _) = inverse_and_logdet(&kss);
        let gain = mat_mul(&kqs, &kss_inv);
        let resid = col(&ys.iter().map(|y| y - c).collect::<Vec<_>>());
        let mean: Vec<f64> = mat_mul(&gain, &resid).iter().map(|r| c + r[0]).collect();
        let cov = add_diag(&sub(&kqq, &mat_mul(&gain, &transpose(&kqs))), noise);

        let dm = max_abs_diff(&got.mean().to_vec(), &mean);
        let dc = max_abs_diff(&got.cov().to_vec(), &flat(&cov));
        assert!(
            dm < 1e-8 && dc < 1e-8,
            "trial {trial}: mean {dm:.2e} cov {dc:.2e}"
        );
    }
}

#[test]
fn alpaca_prediction_matches_dense_bayesian_linear_regression() {
    let mut rng = seeded(3);
    let f = 4;
    let cfg = AlpacaConfig {
        hidden: vec![8],
        feature_dim: f,
        ..AlpacaConfig::default()
    };
    for trial in 0..20 {
        let mut model = AlpacaModel::new(&cfg, &mut rng);
        let offdiag = random_vec(&mut rng, f * f);
        let logdiag: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k0 = random_vec(&mut rng, f);
        let log_noise: f64 = rng.random_range(-3.0..0.0);
        {
            let p = model.params_mut();
            set(p, "alpaca.prior_factor_offdiag", &offdiag);
            set(p, "alpaca.prior_factor_logdiag", &logdiag);
            set(p, "alpaca.prior_mean", &k0);
            set(p, "alpaca.log_noise", &[log_noise]);
        }
        let (k, m) = (rng.random_range(1..8), rng.random_range(1..5));
        let xs = random_vec(&mut rng, k);
        let ys = random_vec(&mut rng, k);
        let xq = random_vec(&mut rng, m);

        let got = model.predict(&xs, &ys, &xq, 0.0).unwrap();

        let g = Graph::new();
        let bound = g.bind_frozen(model.params());
        let phi = dense(
            &model
                .features(&bound, &g.column(xs.clone()))
                .unwrap()
                .value(),
        );
        let phi_q = dense(
            &model
                .features(&bound, &g.column(xq.clone()))
                .unwrap()
                .value(),
        );
        let l0: Dense = (0..f)
            .map(|i| {
                (0..f)
                    .map(|j| match i.cmp(&j) {
                        std::cmp::Ordering::Greater => offdiag[i * f + j],
                        std::cmp::Ordering::Equal => logdiag[i].exp(),
                        std::cmp::Ordering::Less => 0.0,
                    })
                    .collect()
            })
            .collect();
        let lambda0 = mat_mul(&l0, &transpose(&l0));
        let precision = add(&lambda0, &mat_mul(&transpose(&phi), &phi));
        let (cov_w, _) = inverse_and_logdet(&precision);
        let rhs = add(
            &mat_mul(&lambda0, &col(&k0)),
            &mat_mul(&transpose(&phi), &col(&ys)),
        );
        let w = mat_mul(&cov_w, &rhs);
        let mean = flat(&mat_mul(&phi_q, &w));
        let noise = log_noise.exp();
        let cov: Dense = add_diag(&mat_mul(&phi_q, &mat_mul(&cov_w, &transpose(&phi_q))), 1.0)
            .iter()
            .map(|r| r.iter().map(|v| noise * v).collect())
            .collect();

        let dm = max_abs_diff(&got.mean().to_vec(), &mean);
        let dc = max_abs_diff(&got.cov().to_vec(), &flat(&cov));
        assert!(
            dm < 1e-8 && dc < 1e-8,
            "trial {trial}: mean {dm:.2e} cov {dc:.2e}"
        );
    }
}

/// Swapping two hidden units (their incoming column, bias and outgoing row)
/// leaves the network function unchanged.
fn swap_hidden_units(params: &mut Params, prefix: &str, a: usize, b: usize) {
    let w0 = params.find(&format!("{prefix}.0.w")).unwrap();
    let b0 = params.find(&format!("{prefix}.0.b")).unwrap();
    let w1 = params.find(&format!("{prefix}.1.w")).unwrap();
    let m = params.get_mut(w0);
    for r in 0..m.rows {
        let (x, y) = (m.get(r, a), m.get(r, b));
        m.set(r, a, y);
        m.set(r, b, x);
    }
    params.get_mut(b0).data.swap(a, b);
    let m = params.get_mut(w1);
    for c in 0..m.cols {
        let (x, y) = (m.get(a, c), m.get(b, c));
        m.set(a, c, y);
        m.set(b, c, x);
    }
}

#[test]
fn hidden_unit_permutation_leaves_losses_unchanged() {
    let task = TaskSampler::new(EnvId::ALL[0]).sample(&mut seeded(4));
    let n = task.k() + task.q();
    let noise = vec![random_vec(&mut seeded(5), n)];

    let vmgp_loss = |m: &VmgpModel| {
        let g = Graph::new();
        m.task_loss_with_noise(&g.bind_frozen(m.params()), &task, 1e-6, &noise)
            .unwrap()
            .item()
    };
    let mut model = VmgpModel::new(VmgpConfig::default(), &mut seeded(6)).unwrap();
    let before = vmgp_loss(&model);
    for prefix in ["q.mean", "q.kernel.embed", "p.kernel.embed", "f.decoder"] {
        swap_hidden_units(model.params_mut(), prefix, 3, 17);
    }
    let after = vmgp_loss(&model);
    assert!(
        (before - after).abs() <= 1e-10 * before.abs().max(1.0),
        "{before} vs {after}"
    );

    let mut dkt = DktModel::new(&DktConfig::default(), &mut seeded(7));
    let predict = |m: &DktModel| {
        m.predict(&task.x_supp, &task.y_supp, &task.x_query, 1e-6)
            .unwrap()
            .mean()
            .to_vec()
    };
    let before = predict(&dkt);
    swap_hidden_units(dkt.params_mut(), "dkt.kernel.embed", 0, 39);
    assert!(max_abs_diff(&before, &predict(&dkt)) < 1e-10);
}

#[test]
fn training_losses_are_finite_on_fresh_models() {
    let sampler = TaskSampler::new("sin-standard".parse::<EnvId>().unwrap());
    let mut rng = seeded(8);
    let vmgp = VmgpModel::new(VmgpConfig::default(), &mut rng).unwrap();
    let dkt = DktModel::new(&DktConfig::default(), &mut rng);
    let alpaca = AlpacaModel::new(&AlpacaConfig::default(), &mut rng);
    let models: [&dyn MetaLearner<f64>; 3] = [&vmgp, &dkt, &alpaca];
    for model in models {
        for i in 0..100 {
            let task = sampler.sample(&mut rng);
            let g = Graph::new();
            let bound = g.bind(model.params());
            let loss = model.task_loss(&bound, &task, 1e-6, &mut rng).unwrap();
            let grads = bound.gradients(&loss.backward().unwrap());
            let finite = grads.iter().all(|m| m.data.iter().all(|v| v.is_finite()));
            assert!(
                loss.item().is_finite() && finite,
                "{} task {i}",
                model.name()
            );
        }
    }
}

#[test]
fn vmgp_samples_shape_per_task() {
    let model = VmgpModel::new(VmgpConfig::default(), &mut seeded(9)).unwrap();
    let task = TaskSampler::new(EnvId::ALL[0])
        .with_shots(3, 7)
        .sample(&mut seeded(10));
    let s: Matrix = model
        .predictive_samples(&task, 11, 1e-6, &mut seeded(11))
        .unwrap();
    assert_eq!(s.shape(), [11, 7]);
}
