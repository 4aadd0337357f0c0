//! Define-by-run reverse-mode autodiff over dense matrices.
//!
//! A [`Graph`] is an append-only tape of nodes. Every op pushes a node whose
//! parents have strictly smaller ids, so the tape order is a topological order
//! and the graph is acyclic by construction. Build a fresh graph per training
//! step; gradients are returned from [`Tensor::backward`] and never stored on
//! the nodes, so nothing stale can accumulate between steps.
//!
//! All tensors are rank-2 (`rows x cols`); column vectors are `n x 1` and
//! scalars `1 x 1`.

mod adam;
pub mod finite_diff;
pub mod linalg;
mod params;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub use adam::{adam_step, AdamState};
pub use linalg::Matrix;
pub use params::{Bound, Checkpoint, ParamId, Params, Record};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    ScaleBy(usize, usize),
    AddRow(usize, usize),
    Expand(usize),
    AddDiag(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Relu(usize),
    SqDist(usize, usize),
    SolveTri {
        l: usize,
        b: usize,
        transposed: bool,
    },
    LogDetChol(usize),
    ConcatCols(usize, usize),
    Cholesky(usize),
    Slice {
        src: usize,
        row: usize,
        col: usize,
    },
    Tril {
        src: usize,
        strict: bool,
    },
    Diag(usize),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. Cheap to clone; clones share the same tape.
pub struct Graph<T>(Rc<RefCell<Vec<Node<T>>>>);

impl<T> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph(Rc::new(RefCell::new(Vec::new())))
    }

    pub fn len(&self) -> usize {
        self.0.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Tensor<T> {
        let mut nodes = self.0.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Tensor {
            graph: self.clone(),
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives no gradient.
    pub fn constant(&self, value: Matrix<T>) -> Tensor<T> {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient in [`Tensor::backward`].
    pub fn param(&self, value: Matrix<T>) -> Tensor<T> {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&self, v: T) -> Tensor<T> {
        self.constant(Matrix::new(1, 1, vec![v]))
    }

    pub fn column(&self, values: Vec<T>) -> Tensor<T> {
        self.constant(Matrix::column(values))
    }

    pub fn matrix(&self, rows: usize, cols: usize, values: Vec<T>) -> Tensor<T> {
        self.constant(Matrix::new(rows, cols, values))
    }

    /// Leaf bindings for every entry of `params`, in registration order.
    pub fn bind(&self, params: &Params<T>) -> Bound<T> {
        params.bind(self, true)
    }

    /// Like [`Graph::bind`] but without gradient tracking (inference).
    pub fn bind_frozen(&self, params: &Params<T>) -> Bound<T> {
        params.bind(self, false)
    }
}

/// Handle to a node on a [`Graph`].
pub struct Tensor<T> {
    graph: Graph<T>,
    id: usize,
}

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            graph: self.graph.clone(),
            id: self.id,
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.graph.0.borrow();
        let n = &nodes[self.id];
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &n.value.shape())
            .field("values", &n.value.data)
            .finish()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a tensor that was created as a param; `None` for constants
    /// and for params the loss does not depend on.
    pub fn get(&self, t: &Tensor<T>) -> Option<&Matrix<T>> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }
}

fn zip_map<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    Matrix::new(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn map<T: Scalar>(a: &Matrix<T>, f: impl Fn(T) -> T) -> Matrix<T> {
    Matrix::new(a.rows, a.cols, a.data.iter().map(|&x| f(x)).collect())
}

fn tril<T: Scalar>(a: &Matrix<T>, strict: bool) -> Matrix<T> {
    Matrix::from_fn(a.rows, a.cols, |i, j| {
        if j < i || (!strict && i == j) {
            a.get(i, j)
        } else {
            T::zero()
        }
    })
}

impl<T: Scalar> Tensor<T> {
    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn shape(&self) -> [usize; 2] {
        self.graph.0.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    pub fn value(&self) -> Matrix<T> {
        self.graph.0.borrow()[self.id].value.clone()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.graph.0.borrow()[self.id].value.data.clone()
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> T {
        let nodes = self.graph.0.borrow();
        let v = &nodes[self.id].value;
        debug_assert_eq!(v.data.len(), 1);
        v.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.0.borrow()[self.id].requires_grad
    }

    fn same_graph(&self, other: &Tensor<T>) {
        assert!(
            Rc::ptr_eq(&self.graph.0, &other.graph.0),
            "tensors belong to different graphs"
        );
    }

    fn unary(&self, op: Op<T>, f: impl FnOnce(&Matrix<T>) -> Matrix<T>) -> Tensor<T> {
        let (value, rg) = {
            let nodes = self.graph.0.borrow();
            let n = &nodes[self.id];
            (f(&n.value), n.requires_grad)
        };
        self.graph.push(value, op, rg)
    }

    fn binary(
        &self,
        other: &Tensor<T>,
        op: Op<T>,
        f: impl FnOnce(&Matrix<T>, &Matrix<T>) -> Result<Matrix<T>>,
    ) -> Result<Tensor<T>> {
        self.same_graph(other);
        let (value, rg) = {
            let nodes = self.graph.0.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            (f(&a.value, &b.value)?, a.requires_grad || b.requires_grad)
        };
        Ok(self.graph.push(value, op, rg))
    }

    fn elementwise(
        &self,
        other: &Tensor<T>,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        self.binary(other, op, |a, b| {
            if a.shape() != b.shape() {
                return Err(Error::dim(name, a.shape(), b.shape()));
            }
            Ok(zip_map(a, b, f))
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Elementwise quotient.
    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary(Op::Scale(self.id, c), |a| map(a, |x| x * c))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(Op::AddScalar(self.id), |a| map(a, |x| x + c))
    }

    fn expect_scalar(op: &'static str, t: &Matrix<T>, other: [usize; 2]) -> Result<T> {
        if t.shape() != [1, 1] {
            return Err(Error::dim(op, other, t.shape()));
        }
        Ok(t.data[0])
    }

    /// Multiplies every entry by the `1 x 1` tensor `s`.
    pub fn scale_by(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(s, Op::ScaleBy(self.id, s.id), |a, s| {
            let c = Self::expect_scalar("scale_by", s, a.shape())?;
            Ok(map(a, |x| x * c))
        })
    }

    /// Adds the `1 x n` row to every row of an `m x n` tensor.
    pub fn add_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, r| {
            if r.rows != 1 || r.cols != a.cols {
                return Err(Error::dim("add_row", a.shape(), r.shape()));
            }
            Ok(Matrix::from_fn(a.rows, a.cols, |i, j| {
                a.get(i, j) + r.data[j]
            }))
        })
    }

    /// Broadcasts a `1 x 1` tensor to `rows x cols`.
    pub fn expand(&self, rows: usize, cols: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape != [1, 1] {
            return Err(Error::dim("expand", shape, [rows, cols]));
        }
        Ok(self.unary(Op::Expand(self.id), |a| {
            Matrix::new(rows, cols, vec![a.data[0]; rows * cols])
        }))
    }

    /// `A + s I` for square `A` and `1 x 1` tensor `s`.
    pub fn add_diag(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(s, Op::AddDiag(self.id, s.id), |a, s| {
            if a.rows != a.cols {
                return Err(Error::dim("add_diag", a.shape(), s.shape()));
            }
            let c = Self::expect_scalar("add_diag", s, a.shape())?;
            let mut out = a.clone();
            for i in 0..a.rows {
                out.set(i, i, a.get(i, i) + c);
            }
            Ok(out)
        })
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn transpose(&self) -> Tensor<T> {
        self.unary(Op::Transpose(self.id), |a| a.transpose())
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&self) -> Tensor<T> {
        self.unary(Op::Sum(self.id), |a| {
            Matrix::new(1, 1, vec![a.data.iter().copied().sum()])
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        self.unary(Op::Mean(self.id), |a| {
            let n = T::from_usize(a.data.len()).unwrap();
            Matrix::new(1, 1, vec![a.data.iter().copied().sum::<T>() / n])
        })
    }

    /// Column sums: `m x n -> 1 x n`.
    pub fn sum_rows(&self) -> Tensor<T> {
        self.unary(Op::SumRows(self.id), |a| {
            let mut out = vec![T::zero(); a.cols];
            for i in 0..a.rows {
                for (o, &v) in out.iter_mut().zip(&a.data[i * a.cols..(i + 1) * a.cols]) {
                    *o = *o + v;
                }
            }
            Matrix::new(1, a.cols, out)
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(Op::Exp(self.id), |a| map(a, T::exp))
    }

    pub fn log(&self) -> Tensor<T> {
        self.unary(Op::Log(self.id), |a| map(a, T::ln))
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(Op::Square(self.id), |a| map(a, |x| x * x))
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(Op::Relu(self.id), |a| {
            map(a, |x| if x > T::zero() { x } else { T::zero() })
        })
    }

    /// Pairwise squared Euclidean distances between the rows of `self`
    /// (`n x d`) and `other` (`m x d`), giving `n x m`.
    pub fn sq_dist(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::SqDist(self.id, other.id), |a, b| {
            if a.cols != b.cols {
                return Err(Error::dim("sq_dist", a.shape(), b.shape()));
            }
            let d = a.cols;
            Ok(Matrix::from_fn(a.rows, b.rows, |i, j| {
                let (ra, rb) = (&a.data[i * d..(i + 1) * d], &b.data[j * d..(j + 1) * d]);
                ra.iter().zip(rb).map(|(&x, &y)| (x - y) * (x - y)).sum()
            }))
        })
    }

    fn solve_tri(&self, b: &Tensor<T>, transposed: bool) -> Result<Tensor<T>> {
        let op = Op::SolveTri {
            l: self.id,
            b: b.id,
            transposed,
        };
        self.binary(b, op, |l, b| {
            if transposed {
                l.solve_lower_transposed(b)
            } else {
                l.solve_lower(b)
            }
        })
    }

    /// `L⁻¹ B` for lower-triangular `L = self`.
    pub fn solve_lower(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.solve_tri(b, false)
    }

    /// `L⁻ᵀ B` for lower-triangular `L = self`.
    pub fn solve_lower_transposed(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.solve_tri(b, true)
    }

    /// `log det(L Lᵀ) = 2 Σ log L_ii` for a Cholesky factor `L = self`.
    pub fn log_det_chol(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape[0] != shape[1] {
            return Err(Error::dim("log_det_chol", shape, [shape[1], shape[0]]));
        }
        Ok(self.unary(Op::LogDetChol(self.id), |l| {
            let s: T = (0..l.rows).map(|i| l.get(i, i).ln()).sum();
            Matrix::new(1, 1, vec![s + s])
        }))
    }

    /// Concatenation along the last (column) axis.
    pub fn concat_cols(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::ConcatCols(self.id, other.id), |a, b| {
            if a.rows != b.rows {
                return Err(Error::dim("concat_cols", a.shape(), b.shape()));
            }
            Ok(Matrix::from_fn(a.rows, a.cols + b.cols, |i, j| {
                if j < a.cols {
                    a.get(i, j)
                } else {
                    b.get(i, j - a.cols)
                }
            }))
        })
    }

    /// Differentiable lower Cholesky factor of `self + jitter I`.
    ///
    /// Only the lower triangle is read; the input must be symmetric to 1e-10
    /// (relative to its largest entry).
    pub fn cholesky(&self, jitter: T) -> Result<Tensor<T>> {
        if jitter < T::zero() {
            return Err(Error::contract("cholesky jitter must be non-negative"));
        }
        let l = {
            let nodes = self.graph.0.borrow();
            let a = &nodes[self.id].value;
            if a.rows != a.cols {
                return Err(Error::dim("cholesky", a.shape(), [a.cols, a.rows]));
            }
            let scale = a.data.iter().fold(T::one(), |m, &x| m.max(x.abs()));
            if !a.is_symmetric(T::lit(1e-10) * scale) {
                return Err(Error::contract("cholesky input is not symmetric"));
            }
            a.cholesky(jitter)?
        };
        let rg = self.requires_grad();
        Ok(self.graph.push(l, Op::Cholesky(self.id), rg))
    }

    /// Block `[row .. row+rows, col .. col+cols]`.
    pub fn slice(&self, row: usize, col: usize, rows: usize, cols: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if row + rows > shape[0] || col + cols > shape[1] {
            return Err(Error::dim("slice", shape, [row + rows, col + cols]));
        }
        Ok(self.unary(
            Op::Slice {
                src: self.id,
                row,
                col,
            },
            |a| Matrix::from_fn(rows, cols, |i, j| a.get(row + i, col + j)),
        ))
    }

    /// Lower triangle (including the diagonal unless `strict`).
    pub fn tril(&self, strict: bool) -> Tensor<T> {
        self.unary(
            Op::Tril {
                src: self.id,
                strict,
            },
            |a| tril(a, strict),
        )
    }

    /// `n x 1` column to `n x n` diagonal matrix.
    pub fn diag(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape[1] != 1 {
            return Err(Error::dim("diag", shape, [shape[0], 1]));
        }
        Ok(self.unary(Op::Diag(self.id), |v| {
            Matrix::from_fn(
                v.rows,
                v.rows,
                |i, j| if i == j { v.data[i] } else { T::zero() },
            )
        }))
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&self) -> Result<Gradients<T>> {
        let nodes = self.graph.0.borrow();
        let shape = nodes[self.id].value.shape();
        if shape != [1, 1] {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.id + 1];
        grads[self.id] = Some(Matrix::new(1, 1, vec![T::one()]));

        for id in (0..=self.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        // only leaves keep gradients
        for (id, g) in grads.iter_mut().enumerate() {
            if !matches!(nodes[id].op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Matrix<T>>],
    id: usize,
    g: Matrix<T>,
) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, v) in acc.data.iter_mut().zip(g.data) {
                *a = *a + v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    id: usize,
    g: &Matrix<T>,
    grads: &mut [Option<Matrix<T>>],
) -> Result<()> {
    let val = |i: usize| &nodes[i].value;
    let out = &nodes[id].value;
    match nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, map(g, |x| -x));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, a, zip_map(g, val(b), |x, y| x * y));
            accumulate(nodes, grads, b, zip_map(g, val(a), |x, y| x * y));
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(a), val(b));
            accumulate(nodes, grads, a, zip_map(g, vb, |x, y| x / y));
            let gb = Matrix::from_fn(g.rows, g.cols, |i, j| {
                let y = vb.get(i, j);
                -g.get(i, j) * va.get(i, j) / (y * y)
            });
            accumulate(nodes, grads, b, gb);
        }
        Op::Scale(a, c) => accumulate(nodes, grads, a, map(g, |x| x * c)),
        Op::AddScalar(a) => accumulate(nodes, grads, a, g.clone()),
        Op::ScaleBy(a, s) => {
            let c = val(s).data[0];
            accumulate(nodes, grads, a, map(g, |x| x * c));
            let gs: T = g.data.iter().zip(&val(a).data).map(|(&x, &y)| x * y).sum();
            accumulate(nodes, grads, s, Matrix::new(1, 1, vec![gs]));
        }
        Op::AddRow(a, r) => {
            accumulate(nodes, grads, a, g.clone());
            let gr = Matrix::from_fn(1, g.cols, |_, j| (0..g.rows).map(|i| g.get(i, j)).sum());
            accumulate(nodes, grads, r, gr);
        }
        Op::Expand(s) => {
            let total = g.data.iter().copied().sum();
            accumulate(nodes, grads, s, Matrix::new(1, 1, vec![total]));
        }
        Op::AddDiag(a, s) => {
            accumulate(nodes, grads, a, g.clone());
            let tr = (0..g.rows).map(|i| g.get(i, i)).sum();
            accumulate(nodes, grads, s, Matrix::new(1, 1, vec![tr]));
        }
        Op::MatMul(a, b) => {
            if nodes[a].requires_grad {
                accumulate(nodes, grads, a, g.matmul(&val(b).transpose())?);
            }
            if nodes[b].requires_grad {
                accumulate(nodes, grads, b, val(a).transpose().matmul(g)?);
            }
        }
        Op::Transpose(a) => accumulate(nodes, grads, a, g.transpose()),
        Op::Sum(a) => {
            let s = val(a);
            accumulate(
                nodes,
                grads,
                a,
                Matrix::new(s.rows, s.cols, vec![g.data[0]; s.data.len()]),
            );
        }
        Op::Mean(a) => {
            let s = val(a);
            let c = g.data[0] / T::from_usize(s.data.len()).unwrap();
            accumulate(
                nodes,
                grads,
                a,
                Matrix::new(s.rows, s.cols, vec![c; s.data.len()]),
            );
        }
        Op::SumRows(a) => {
            let s = val(a);
            accumulate(
                nodes,
                grads,
                a,
                Matrix::from_fn(s.rows, s.cols, |_, j| g.data[j]),
            );
        }
        Op::Exp(a) => accumulate(nodes, grads, a, zip_map(g, out, |x, y| x * y)),
        Op::Log(a) => accumulate(nodes, grads, a, zip_map(g, val(a), |x, y| x / y)),
        Op::Square(a) => {
            let two = T::lit(2.0);
            accumulate(nodes, grads, a, zip_map(g, val(a), |x, y| two * x * y));
        }
        Op::Relu(a) => accumulate(
            nodes,
            grads,
            a,
            zip_map(g, val(a), |x, y| if y > T::zero() { x } else { T::zero() }),
        ),
        Op::SqDist(a, b) => {
            let (va, vb) = (val(a), val(b));
            let d = va.cols;
            let two = T::lit(2.0);
            let mut ga = Matrix::zeros(va.rows, d);
            let mut gb = Matrix::zeros(vb.rows, d);
            for i in 0..va.rows {
                for j in 0..vb.rows {
                    let gij = g.get(i, j) * two;
                    if gij == T::zero() {
                        continue;
                    }
                    for k in 0..d {
                        let diff = gij * (va.get(i, k) - vb.get(j, k));
                        ga.data[i * d + k] = ga.data[i * d + k] + diff;
                        gb.data[j * d + k] = gb.data[j * d + k] - diff;
                    }
                }
            }
            accumulate(nodes, grads, a, ga);
            accumulate(nodes, grads, b, gb);
        }
        Op::SolveTri { l, b, transposed } => {
            let lv = val(l);
            // X = out; gb = L^{-T} g (or L^{-1} g), gl = -tril(gb Xᵀ) (or -tril(X gbᵀ))
            let gb = if transposed {
                lv.solve_lower(g)?
            } else {
                lv.solve_lower_transposed(g)?
            };
            if nodes[l].requires_grad {
                let outer = if transposed {
                    out.matmul(&gb.transpose())?
                } else {
                    gb.matmul(&out.transpose())?
                };
                accumulate(nodes, grads, l, map(&tril(&outer, false), |x| -x));
            }
            accumulate(nodes, grads, b, gb);
        }
        Op::LogDetChol(l) => {
            let lv = val(l);
            let two = T::lit(2.0);
            let c = g.data[0];
            let gl = Matrix::from_fn(lv.rows, lv.cols, |i, j| {
                if i == j {
                    two * c / lv.get(i, i)
                } else {
                    T::zero()
                }
            });
            accumulate(nodes, grads, l, gl);
        }
        Op::ConcatCols(a, b) => {
            let ca = val(a).cols;
            let cb = val(b).cols;
            accumulate(
                nodes,
                grads,
                a,
                Matrix::from_fn(g.rows, ca, |i, j| g.get(i, j)),
            );
            accumulate(
                nodes,
                grads,
                b,
                Matrix::from_fn(g.rows, cb, |i, j| g.get(i, ca + j)),
            );
        }
        Op::Cholesky(a) => {
            // P = Φ(Lᵀ tril(Ḡ)), S = L⁻ᵀ P L⁻¹, Ā = (S + Sᵀ)/2
            let l = out;
            let half = T::lit(0.5);
            let mut p = l.transpose().matmul(&tril(g, false))?;
            p = Matrix::from_fn(p.rows, p.cols, |i, j| {
                if j < i {
                    p.get(i, j)
                } else if i == j {
                    half * p.get(i, j)
                } else {
                    T::zero()
                }
            });
            let x = l.solve_lower_transposed(&p)?;
            let s = l.solve_lower_transposed(&x.transpose())?.transpose();
            let ga = Matrix::from_fn(s.rows, s.cols, |i, j| half * (s.get(i, j) + s.get(j, i)));
            accumulate(nodes, grads, a, ga);
        }
        Op::Slice { src, row, col } => {
            let sv = val(src);
            let mut gs = Matrix::zeros(sv.rows, sv.cols);
            for i in 0..g.rows {
                for j in 0..g.cols {
                    gs.set(row + i, col + j, g.get(i, j));
                }
            }
            accumulate(nodes, grads, src, gs);
        }
        Op::Tril { src, strict } => accumulate(nodes, grads, src, tril(g, strict)),
        Op::Diag(v) => {
            let n = val(v).rows;
            accumulate(nodes, grads, v, Matrix::from_fn(n, 1, |i, _| g.get(i, i)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Graph<f64> {
        Graph::new()
    }

    #[test]
    fn matmul_identity() {
        let gr = g();
        let a = gr.matrix(3, 3, (1..=9).map(f64::from).collect());
        let i = gr.constant(Matrix::identity(3));
        assert_eq!(i.matmul(&a).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn relu_definition() {
        let gr = g();
        let x = gr.column(vec![-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn sum_of_exp() {
        let gr = g();
        let x = gr.column(vec![0.0, 2f64.ln()]);
        assert!((x.exp().sum().item() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let gr = g();
        let x = gr.param(Matrix::new(1, 1, vec![3.0]));
        let grads = x.square().backward().unwrap();
        assert_eq!(grads.get(&x).unwrap().data, vec![6.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let gr = g();
        let x = gr.param(Matrix::new(2, 1, vec![1.0, 2.0]));
        assert!(matches!(x.square().backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let gr = g();
        let x = gr.param(Matrix::new(1, 1, vec![2.0]));
        let c = gr.scalar(5.0);
        let grads = x.mul(&c).unwrap().backward().unwrap();
        assert!(grads.get(&c).is_none());
        assert_eq!(grads.get(&x).unwrap().data, vec![5.0]);
    }

    #[test]
    fn repeated_backward_does_not_accumulate() {
        let gr = g();
        let x = gr.param(Matrix::new(1, 1, vec![3.0]));
        let loss = x.square();
        let first = loss.backward().unwrap().get(&x).unwrap().data[0];
        let second = loss.backward().unwrap().get(&x).unwrap().data[0];
        assert_eq!(first, second);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let gr = g();
        let a = gr.matrix(2, 3, vec![0.0; 6]);
        let b = gr.matrix(2, 3, vec![0.0; 6]);
        let err = a.matmul(&b).unwrap_err();
        assert_eq!(
            err,
            Error::Dimension {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
        assert!(a.add(&gr.column(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn cholesky_examples() {
        let gr = g();
        let i = gr.constant(Matrix::identity(4));
        assert_eq!(
            i.cholesky(0.0).unwrap().to_vec(),
            Matrix::<f64>::identity(4).data
        );

        let a = gr.matrix(2, 2, vec![4.0, 2.0, 2.0, 3.0]);
        let l = a.cholesky(0.0).unwrap();
        let rec = l.matmul(&l.transpose()).unwrap().to_vec();
        for (r, e) in rec.iter().zip([4.0, 2.0, 2.0, 3.0]) {
            assert!((r - e).abs() < 1e-12);
        }
        let lv = l.to_vec();
        assert_eq!(lv[0], 2.0);
        assert_eq!(lv[2], 1.0);
        assert!((lv[3] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_failure_carries_pivot() {
        let gr = g();
        let a = gr.matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            a.cholesky(0.0).unwrap_err(),
            Error::NotPositiveDefinite { pivot: 2 }
        );
        let asym = gr.matrix(2, 2, vec![2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(asym.cholesky(0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn sq_dist_diagonal_is_exactly_zero() {
        let gr = g();
        let x = gr.matrix(3, 2, vec![0.3, -1.2, 2.0, 0.5, -0.7, 0.1]);
        let d = x.sq_dist(&x).unwrap().value();
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
        }
        assert!(d.is_symmetric(0.0));
    }
}
