//! Dense reference linear algebra for oracles: plain row-major `Vec<Vec<f64>>`
//! with Gauss-Jordan elimination, independent of the library's Cholesky code.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use vmgp_core::training::SeededRng;
use vmgp_core::Matrix;

pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &Matrix) -> Dense {
    (0..m.rows)
        .map(|i| (0..m.cols).map(|j| m.get(i, j)).collect())
        .collect()
}

pub fn to_matrix(d: &Dense) -> Matrix {
    let rows = d.len();
    let cols = d.first().map_or(0, Vec::len);
    Matrix::new(rows, cols, d.iter().flatten().copied().collect())
}

pub fn mat_mul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

/// Inverse and log-determinant by Gauss-Jordan with partial pivoting.
pub fn inverse_and_logdet(a: &Dense) -> (Dense, f64) {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))
            .unwrap();
        m.swap(c, p);
        let pivot = m[c][c];
        logdet += pivot.abs().ln();
        for v in m[c].iter_mut() {
            *v /= pivot;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[r][j] -= f * m[c][j];
                    }
                }
            }
        }
    }
    (m.into_iter().map(|r| r[n..].to_vec()).collect(), logdet)
}

/// `A Aᵀ / n + 0.5 I` with standard-normal `A`.
pub fn random_spd(rng: &mut SeededRng, n: usize) -> Dense {
    let a: Dense = (0..n)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut s = mat_mul(&a, &transpose(&a));
    for (i, row) in s.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
        row[i] += 0.5;
    }
    s
}

pub fn random_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Empirical mean and covariance of the rows of `s`.
pub fn moments(s: &Matrix) -> (Vec<f64>, Dense) {
    let (n, d) = (s.rows, s.cols);
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| s.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (s.get(i, a) - mean[a]) * (s.get(i, b) - mean[b]);
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    (mean, cov)
}

/// Each mean within 4 standard errors; each covariance entry within 4
/// standard errors of a sample covariance, `sqrt((σ_ab² + σ_aa σ_bb) / n)`.
pub fn assert_moments(s: &Matrix, mean: &[f64], cov: &Dense) {
    let n = s.rows as f64;
    let (m, c) = moments(s);
    for a in 0..mean.len() {
        let se = (cov[a][a] / n).sqrt();
        assert!(
            (m[a] - mean[a]).abs() < 4.0 * se,
            "mean {a}: {} vs {}",
            m[a],
            mean[a]
        );
        for b in 0..mean.len() {
            let se = ((cov[a][b].powi(2) + cov[a][a] * cov[b][b]) / n).sqrt();
            assert!(
                (c[a][b] - cov[a][b]).abs() < 4.0 * se,
                "cov {a},{b}: {} vs {}",
                c[a][b],
                cov[a][b]
            );
        }
    }
}
