//! MLPs, the RBF kernel and deep kernels built from them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Bound, Matrix, ParamId, Params, Tensor};

/// Hidden widths of the default backbone.
pub const DEFAULT_HIDDEN: [usize; 2] = [40, 40];
/// Output width of deep-kernel embeddings.
pub const DEFAULT_EMBED_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

/// Fully connected network with ReLU on hidden layers only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Registers weights `prefix.{i}.w` (`in x out`) and biases `prefix.{i}.b`
    /// (`1 x out`). Weights are `U(−1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        prefix: &str,
        sizes: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.random_range(-bound..bound)))
                .collect();
            let weight = params.add(
                format!("{prefix}.{i}.w"),
                Matrix::new(fan_in, fan_out, data),
            );
            let bias = params.add(format!("{prefix}.{i}.b"), Matrix::zeros(1, fan_out));
            layers.push(Layer { weight, bias });
        }
        Mlp {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// `(weight, bias)` ids per layer.
    pub fn layer_params(&self) -> impl Iterator<Item = (ParamId, ParamId)> + '_ {
        self.layers.iter().map(|l| (l.weight, l.bias))
    }

    /// Row-wise forward pass on an `n x input_dim` matrix.
    pub fn forward<T: Scalar>(&self, bound: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(
                "mlp_forward",
                x.shape(),
                [x.rows(), self.input_dim()],
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h
                .matmul(&bound[layer.weight])?
                .add_row(&bound[layer.bias])?;
            if i < last {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Log-space RBF hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfParams<T> {
    pub log_lengthscale: T,
    pub log_outputscale: T,
}

impl<T: Scalar> RbfParams<T> {
    pub fn lengthscale(&self) -> T {
        self.log_lengthscale.exp()
    }

    pub fn outputscale(&self) -> T {
        self.log_outputscale.exp()
    }

    /// `s · exp(−‖a − b‖² / (2ℓ²))` on plain slices.
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        let d2: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let l = self.lengthscale();
        self.outputscale() * (-d2 / (T::lit(2.0) * l * l)).exp()
    }
}

/// RBF Gram matrix `k(a, b) = s · exp(−‖a − b‖² / (2ℓ²))` between the rows of
/// `x1` and `x2`; both hyperparameters are `1 x 1` log-space tensors.
pub fn rbf_kernel<T: Scalar>(
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    log_lengthscale: &Tensor<T>,
    log_outputscale: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d2 = x1.sq_dist(x2)?;
    // −1/(2ℓ²) = −½ exp(−2 log ℓ)
    let coef = log_lengthscale
        .scale(T::lit(-2.0))
        .exp()
        .scale(T::lit(-0.5));
    d2.scale_by(&coef)?.exp().scale_by(&log_outputscale.exp())
}

/// MLP embedding composed with an RBF kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeepKernel {
    pub embed: Mlp,
    pub log_lengthscale: ParamId,
    pub log_outputscale: ParamId,
}

impl DeepKernel {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        prefix: &str,
        embed_sizes: &[usize],
        init: RbfParams<T>,
        rng: &mut R,
    ) -> Self {
        let embed = Mlp::new(params, &format!("{prefix}.embed"), embed_sizes, rng);
        let log_lengthscale = params.add(
            format!("{prefix}.log_lengthscale"),
            Matrix::new(1, 1, vec![init.log_lengthscale]),
        );
        let log_outputscale = params.add(
            format!("{prefix}.log_outputscale"),
            Matrix::new(1, 1, vec![init.log_outputscale]),
        );
        DeepKernel {
            embed,
            log_lengthscale,
            log_outputscale,
        }
    }

    pub fn rbf<T: Scalar>(&self, params: &Params<T>) -> RbfParams<T> {
        RbfParams {
            log_lengthscale: params.get(self.log_lengthscale).data[0],
            log_outputscale: params.get(self.log_outputscale).data[0],
        }
    }

    pub fn gram<T: Scalar>(
        &self,
        bound: &Bound<T>,
        x1: &Tensor<T>,
        x2: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let e1 = self.embed.forward(bound, x1)?;
        let e2 = self.embed.forward(bound, x2)?;
        rbf_kernel(
            &e1,
            &e2,
            &bound[self.log_lengthscale],
            &bound[self.log_outputscale],
        )
    }

    /// Gram of a set with itself; embeds once, so the result is exactly
    /// symmetric with diagonal `s`.
    pub fn gram_self<T: Scalar>(&self, bound: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let e = self.embed.forward(bound, x)?;
        rbf_kernel(
            &e,
            &e,
            &bound[self.log_lengthscale],
            &bound[self.log_outputscale],
        )
    }
}
