use super::{Matrix, Params};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub delta: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments with β1 = 0.9, β2 = 0.999, δ = 1e-8.
    pub fn new(params: &Params<T>) -> Self {
        let zeros: Vec<Matrix<T>> = params
            .values()
            .map(|p| Matrix::zeros(p.rows, p.cols))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            delta: T::lit(1e-8),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &[Matrix<T>],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len()],
        });
    }
    for ((p, g), m) in params.values().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
    }

    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = state.t as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (((p, g), m), v) in params
        .values_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
            v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + state.delta);
        }
    }
    Ok(())
}
