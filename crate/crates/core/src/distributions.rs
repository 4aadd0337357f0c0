//! Multivariate Gaussian algebra on top of the autodiff graph.
//!
//! Every solve goes through a Cholesky factor and triangular solves; nothing
//! here forms an explicit inverse.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gaussian with full covariance over `n >= 1` coordinates.
///
/// `chol` is the lower factor of `cov + jitter I`.
#[derive(Debug, Clone)]
pub struct MultivariateGaussian<T: Scalar> {
    mean: Tensor<T>,
    cov: Tensor<T>,
    chol: Tensor<T>,
    jitter: T,
}

impl<T: Scalar> MultivariateGaussian<T> {
    /// `mean` is `n x 1`, `cov` is `n x n` and symmetric.
    pub fn new(mean: Tensor<T>, cov: Tensor<T>, jitter: T) -> Result<Self> {
        let [n, one] = mean.shape();
        if one != 1 || n == 0 || cov.shape() != [n, n] {
            return Err(Error::dim("gaussian", mean.shape(), cov.shape()));
        }
        let chol = cov.cholesky(jitter)?;
        Ok(MultivariateGaussian {
            mean,
            cov,
            chol,
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.rows()
    }

    pub fn mean(&self) -> &Tensor<T> {
        &self.mean
    }

    pub fn cov(&self) -> &Tensor<T> {
        &self.cov
    }

    pub fn chol(&self) -> &Tensor<T> {
        &self.chol
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Distribution of the leading `split` coordinates given the trailing
    /// ones equal `observed`.
    ///
    /// The result's covariance never depends on `observed`.
    pub fn condition(&self, split: usize, observed: &Tensor<T>) -> Result<Self> {
        let n = self.dim();
        if split == 0 || split >= n {
            return Err(Error::contract(format!(
                "condition split {split} must lie strictly inside 0..{n}"
            )));
        }
        let rest = n - split;
        if observed.shape() != [rest, 1] {
            return Err(Error::dim("condition", [rest, 1], observed.shape()));
        }
        let mu1 = self.mean.slice(0, 0, split, 1)?;
        let mu2 = self.mean.slice(split, 0, rest, 1)?;
        let s11 = self.cov.slice(0, 0, split, split)?;
        let s21 = self.cov.slice(split, 0, rest, split)?;
        let s22 = self.cov.slice(split, split, rest, rest)?;

        let l22 = s22.cholesky(self.jitter)?;
        // A = L22⁻¹ Σ21, w = L22⁻¹ (z − μ2)
        let a = l22.solve_lower(&s21)?;
        let w = l22.solve_lower(&observed.sub(&mu2)?)?;
        let mean = mu1.add(&a.transpose().matmul(&w)?)?;
        let c = s11.sub(&a.transpose().matmul(&a)?)?;
        let cov = c.add(&c.transpose())?.scale(T::lit(0.5));
        Self::new(mean, cov, self.jitter)
    }

    /// `mean + chol · noise`; `noise` is a constant `n x 1` standard-normal draw.
    pub fn sample_reparam(&self, noise: &Tensor<T>) -> Result<Tensor<T>> {
        if noise.shape() != [self.dim(), 1] {
            return Err(Error::dim("sample_reparam", [self.dim(), 1], noise.shape()));
        }
        self.mean.add(&self.chol.matmul(noise)?)
    }
}

/// `KL(q ‖ p)` in closed form, from the two Cholesky factors.
pub fn kl_divergence<T: Scalar>(
    q: &MultivariateGaussian<T>,
    p: &MultivariateGaussian<T>,
) -> Result<Tensor<T>> {
    let k = q.dim();
    if p.dim() != k {
        return Err(Error::dim("kl_divergence", [k, 1], [p.dim(), 1]));
    }
    // tr(Σp⁻¹ Σq) = ‖Lp⁻¹ Lq‖²_F
    let trace = p.chol.solve_lower(&q.chol)?.square().sum();
    let maha = p.chol.solve_lower(&p.mean.sub(&q.mean)?)?.square().sum();
    let logdet = p.chol.log_det_chol()?.sub(&q.chol.log_det_chol()?)?;
    let k = T::from_usize(k).unwrap();
    Ok(trace
        .add(&maha)?
        .add(&logdet)?
        .add_scalar(-k)
        .scale(T::lit(0.5)))
}

/// Isotropic Gaussian `N(mean, variance I)` used as the decoder likelihood.
#[derive(Debug, Clone)]
pub struct DiagonalGaussian<T: Scalar> {
    pub mean: Tensor<T>,
    variance: T,
}

impl<T: Scalar> DiagonalGaussian<T> {
    pub fn new(mean: Tensor<T>, variance: T) -> Result<Self> {
        if !(variance > T::zero()) {
            return Err(Error::contract(
                "diagonal Gaussian variance must be positive",
            ));
        }
        Ok(DiagonalGaussian { mean, variance })
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    /// `−‖mean − y‖² / variance`.
    ///
    /// The normalizing constant is dropped, so this is only meaningful as a
    /// training signal and is not a log-pdf.
    pub fn log_density_unnormalized(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        if y.shape() != self.mean.shape() {
            return Err(Error::dim("diag_log_density", self.mean.shape(), y.shape()));
        }
        Ok(self
            .mean
            .sub(y)?
            .square()
            .sum()
            .scale(-T::one() / self.variance))
    }
}
