//! Variational Gaussian-process meta-learning for few-shot regression.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), exact
//! Gaussian algebra ([`distributions`]), MLPs and deep kernels
//! ([`networks`]), the latent-variable meta-learner ([`vmgp`]), two Gaussian
//! baselines ([`baselines`]), seeded task generators ([`environments`]) and the
//! sample-based NLL metric ([`metrics`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases at the crate root fix
//! it to `f64`, which is what every model is trained with.

pub mod baselines;
pub mod distributions;
pub mod environments;
pub mod error;
pub mod metrics;
pub mod networks;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod vmgp;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type Matrix = tensor::Matrix<f64>;
pub type Params = tensor::Params<f64>;
pub type MultivariateGaussian = distributions::MultivariateGaussian<f64>;
pub type VmgpModel = vmgp::VmgpModel<f64>;
pub type DktModel = baselines::DktModel<f64>;
pub type AlpacaModel = baselines::AlpacaModel<f64>;
