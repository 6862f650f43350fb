//! Minimal reverse-mode automatic differentiation over dense real tensors.
//!
//! The primitive set is closed and deliberately small: exactly the ops the
//! decoder architectures need, each with a hand-written backward pass that
//! is verified against central finite differences. Tensors live on an
//! append-only tape ([`Graph`]); node indices ([`Var`]) are handles into it.
//! A graph is single-threaded; independent graphs may run concurrently.
//!
//! Batching convention: a batch of B sequences of length L is stacked into
//! a `(B*L, d)` matrix. Dense layers act row-wise and need no special
//! handling; the `seq_linear`, `batched_matmul_*` and `concat_blocks` ops
//! treat consecutive L-row blocks as independent samples.

mod adam;
mod gradcheck;
mod ops;

pub use adam::AdamState;
pub use gradcheck::{grad_check, random_tensor, GradCheckReport};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss")]
    NotScalar,
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
}

fn shape_err(op: &'static str, detail: String) -> AdError {
    AdError::ShapeMismatch { op, detail }
}

/// Element type of the engine: 32-bit for speed, 64-bit for verification.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + num_traits::FromPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Additive mask value for forbidden attention positions.
    fn mask_sentinel() -> Self;

    /// `C := alpha * A * B + beta * C` with explicit strides (row-major
    /// buffers; transposition is expressed through the strides).
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of_f64(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).expect("finite f64")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite scalar")
    }
}

impl Scalar for f32 {
    fn mask_sentinel() -> Self {
        crate::mask::MASK_SENTINEL_F32
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn mask_sentinel() -> Self {
        f64::NEG_INFINITY
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense real array with a shape; no NaN/Inf appears in forward results on
/// finite inputs (the mask sentinel is handled inside softmax).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.data[0]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub(crate) enum Op<T> {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    AddTiled(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    ConcatBlocks { a: Var, b: Var, seq_a: usize, seq_b: usize },
    SliceCols { x: Var, start: usize, len: usize },
    Transpose(Var),
    Reshape(Var),
    SumAll(Var),
    Scale(Var, T),
    Gelu { x: Var, tanh_u: Vec<T> },
    LayerNorm { x: Var, gain: Var, bias: Var, normalized: Vec<T>, inv_std: Vec<T> },
    Softmax(Var),
    SoftmaxMasked { x: Var, mask: Var },
    Sigmoid(Var),
    BceWithLogits { logits: Var, targets: Var },
    SeqLinear { w: Var, x: Var, seq_in: usize },
    BatchedMatmul { a: Var, b: Var, seq_a: usize, seq_b: usize, transpose_b: bool },
    EmbedScale { scalars: Var, table: Var },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Append-only tape of operations; reverse iteration is a valid reverse
/// topological order because inputs always precede outputs.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), consumed: false }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass w.r.t. `v`; zeros if the node was
    /// never reached (disconnected from the loss).
    pub fn grad(&self, v: Var) -> Tensor<T> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    fn accumulate(&mut self, v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.data.iter_mut().zip(&delta.data) {
                    *gi += *di;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    /// Populate gradients of every reachable `requires_grad` node with
    /// `d loss / d node`. The tape is consumed.
    pub fn backward(&mut self, loss: Var) -> Result<(), AdError> {
        if self.consumed {
            return Err(AdError::TapeConsumed);
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AdError::NotScalar);
        }
        self.consumed = true;
        let seed = Tensor::from_vec(self.nodes[loss.0].value.shape(), vec![T::one()]);
        self.accumulate(loss, seed);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            ops::backward_step(self, i);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
