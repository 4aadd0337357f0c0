//! Central finite differences, used as the independent gradient oracle in
//! tests and in the `verify` self-check.

use super::{Graph, Matrix, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;

/// Numerical gradient of `f` with respect to every entry of every input.
///
/// `f` is evaluated on plain values only, so this never touches the
/// reverse pass.
pub fn central_difference<T: Scalar>(
    f: impl Fn(&[Matrix<T>]) -> Result<T>,
    inputs: &[Matrix<T>],
    h: T,
) -> Result<Vec<Matrix<T>>> {
    let mut work: Vec<Matrix<T>> = inputs.to_vec();
    let two_h = h + h;
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Matrix::zeros(inputs[k].rows, inputs[k].cols);
        for i in 0..inputs[k].data.len() {
            let x0 = inputs[k].data[i];
            work[k].data[i] = x0 + h;
            let fp = f(&work)?;
            work[k].data[i] = x0 - h;
            let fm = f(&work)?;
            work[k].data[i] = x0;
            g.data[i] = (fp - fm) / two_h;
        }
        out.push(g);
    }
    Ok(out)
}

/// Outcome of comparing reverse-mode gradients against finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over entries whose absolute error exceeds the
    /// absolute floor (zero if none do).
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol
    }
}

/// Compares `analytic` against `numeric` entrywise. Entries whose absolute
/// error is below `abs_floor` count as exact.
pub fn compare<T: Scalar>(
    analytic: &[Matrix<T>],
    numeric: &[Matrix<T>],
    abs_floor: f64,
) -> GradCheck {
    let mut rel: f64 = 0.0;
    let mut abs: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.data.iter().zip(&n.data) {
            let (x, y) = (x.as_f64(), y.as_f64());
            let err = (x - y).abs();
            abs = abs.max(err);
            if err >= abs_floor {
                rel = rel.max(err / x.abs().max(y.abs()));
            }
        }
    }
    GradCheck {
        max_rel_error: rel,
        max_abs_error: abs,
    }
}

/// Runs `build` once with the inputs as params to get reverse-mode gradients,
/// then again on constants for central differences with step `h`.
pub fn check_gradients<T: Scalar>(
    build: impl Fn(&Graph<T>, &[Tensor<T>]) -> Result<Tensor<T>>,
    inputs: &[Matrix<T>],
    h: T,
    abs_floor: f64,
) -> Result<GradCheck> {
    let graph = Graph::new();
    let leaves: Vec<Tensor<T>> = inputs.iter().map(|m| graph.param(m.clone())).collect();
    let loss = build(&graph, &leaves)?;
    let grads = loss.backward()?;
    let analytic: Vec<Matrix<T>> = leaves
        .iter()
        .map(|t| {
            grads.get(t).cloned().unwrap_or_else(|| {
                let [r, c] = t.shape();
                Matrix::zeros(r, c)
            })
        })
        .collect();

    let numeric = central_difference(
        |xs| {
            let g = Graph::new();
            let ts: Vec<Tensor<T>> = xs.iter().map(|m| g.constant(m.clone())).collect();
            Ok(build(&g, &ts)?.item())
        },
        inputs,
        h,
    )?;
    Ok(compare(&analytic, &numeric, abs_floor))
}
