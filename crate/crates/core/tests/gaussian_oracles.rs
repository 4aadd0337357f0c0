mod common;

use common::*;
use rand::Rng;
use vmgp_core::baselines::gaussian_to_samples;
use vmgp_core::distributions::kl_divergence;
use vmgp_core::environments::{latent_gp_draw, LATENT_LOG_LENGTHSCALE};
use vmgp_core::training::seeded;
use vmgp_core::{Graph, Matrix, MultivariateGaussian};

fn mvg(g: &Graph, mean: &[f64], cov: &Dense) -> MultivariateGaussian {
    MultivariateGaussian::new(g.column(mean.to_vec()), g.constant(to_matrix(cov)), 0.0).unwrap()
}

#[test]
fn condition_matches_explicit_inverse() {
    let mut rng = seeded(100);
    for _ in 0..200 {
        let n = rng.random_range(2..=12);
        let split = rng.random_range(1..n);
        let cov = random_spd(&mut rng, n);
        let mean = random_vec(&mut rng, n);
        let z = random_vec(&mut rng, n - split);

        let g = Graph::new();
        let got = mvg(&g, &mean, &cov)
            .condition(split, &g.column(z.clone()))
            .unwrap();

        let block = |r0: usize, r1: usize, c0: usize, c1: usize| -> Dense {
            (r0..r1).map(|i| cov[i][c0..c1].to_vec()).collect()
        };
        let s11 = block(0, split, 0, split);
        let s12 = block(0, split, split, n);
        let s22 = block(split, n, split, n);
        let (s22_inv, _) = inverse_and_logdet(&s22);
        let gain = mat_mul(&s12, &s22_inv);
        let resid: Dense = z
            .iter()
            .zip(&mean[split..])
            .map(|(a, b)| vec![a - b])
            .collect();
        let shift = mat_mul(&gain, &resid);
        let want_mean: Vec<f64> = (0..split).map(|i| mean[i] + shift[i][0]).collect();
        let reduce = mat_mul(&gain, &transpose(&s12));
        let want_cov: Vec<f64> = (0..split)
            .flat_map(|i| (0..split).map(move |j| (i, j)))
            .map(|(i, j)| s11[i][j] - reduce[i][j])
            .collect();

        assert!(max_abs_diff(&got.mean().to_vec(), &want_mean) < 1e-8);
        assert!(max_abs_diff(&got.cov().to_vec(), &want_cov) < 1e-8);
    }
}

#[test]
fn kl_matches_explicit_inverse() {
    let mut rng = seeded(101);
    for _ in 0..200 {
        let n = rng.random_range(1..=12);
        let (cq, cp) = (random_spd(&mut rng, n), random_spd(&mut rng, n));
        let (mq, mp) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let g = Graph::new();
        let got = kl_divergence(&mvg(&g, &mq, &cq), &mvg(&g, &mp, &cp))
            .unwrap()
            .item();

        let (p_inv, logdet_p) = inverse_and_logdet(&cp);
        let (_, logdet_q) = inverse_and_logdet(&cq);
        let prod = mat_mul(&p_inv, &cq);
        let trace: f64 = (0..n).map(|i| prod[i][i]).sum();
        let d: Dense = mp.iter().zip(&mq).map(|(a, b)| vec![a - b]).collect();
        let maha = mat_mul(&transpose(&d), &mat_mul(&p_inv, &d))[0][0];
        let want = 0.5 * (trace + maha - n as f64 + logdet_p - logdet_q);
        assert!((got - want).abs() < 1e-8, "n={n}: {got} vs {want}");
    }
}

#[test]
fn kl_scalar_cases() {
    let g = Graph::new();
    let one = |m: f64, v: f64| mvg(&g, &[m], &vec![vec![v]]);
    let a = kl_divergence(&one(1.0, 1.0), &one(0.0, 1.0))
        .unwrap()
        .item();
    assert!((a - 0.5).abs() < 1e-12);
    let b = kl_divergence(&one(0.0, 2.0), &one(0.0, 1.0))
        .unwrap()
        .item();
    assert!((b - 0.5 * (2.0 - 1.0 - 2f64.ln())).abs() < 1e-12);
    let c = kl_divergence(&one(0.3, 0.7), &one(0.3, 0.7))
        .unwrap()
        .item();
    assert!(c.abs() < 1e-12);
}

#[test]
fn reparameterized_samples_have_target_moments() {
    let mut rng = seeded(102);
    let cov = random_spd(&mut rng, 3);
    let mean = random_vec(&mut rng, 3);
    let n = 20_000;
    let g = Graph::new();
    let dist = mvg(&g, &mean, &cov);
    let mut s = Matrix::zeros(n, 3);
    for i in 0..n {
        let z = dist
            .sample_reparam(&g.column(random_vec(&mut rng, 3)))
            .unwrap()
            .to_vec();
        for (j, v) in z.into_iter().enumerate() {
            s.set(i, j, v);
        }
    }
    assert_moments(&s, &mean, &cov);

    let s = gaussian_to_samples(&dist, n, &mut seeded(103)).unwrap();
    assert_moments(&s, &mean, &cov);
}

#[test]
fn latent_draws_have_rbf_covariance() {
    let x = [-0.5, 0.0, 1.2];
    let log_var = 0.4;
    let mut rng = seeded(104);
    let n = 20_000;
    let mut s = Matrix::zeros(n, 3);
    for i in 0..n {
        for (j, v) in latent_gp_draw(&x, log_var, &mut rng)
            .into_iter()
            .enumerate()
        {
            s.set(i, j, v);
        }
    }
    let l2 = (2.0 * LATENT_LOG_LENGTHSCALE).exp();
    let cov: Dense = x
        .iter()
        .map(|a| {
            x.iter()
                .map(|b| log_var.exp() * (-(a - b) * (a - b) / (2.0 * l2)).exp())
                .collect()
        })
        .collect();
    assert_moments(&s, &[0.0; 3], &cov);
}

#[test]
fn conditional_covariance_ignores_observed_value() {
    let mut rng = seeded(105);
    let cov = random_spd(&mut rng, 5);
    let g = Graph::new();
    let joint = mvg(&g, &random_vec(&mut rng, 5), &cov);
    let a = joint
        .condition(2, &g.column(random_vec(&mut rng, 3)))
        .unwrap();
    let b = joint
        .condition(2, &g.column(random_vec(&mut rng, 3)))
        .unwrap();
    assert_eq!(a.cov().value(), b.cov().value());
    assert_ne!(a.mean().value(), b.mean().value());
}
