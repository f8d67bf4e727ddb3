//! Dense multi-dimensional arrays with reverse-mode differentiation.
//!
//! All differentiable state lives on a [`Tape`]: forward operations append
//! nodes, `backward` replays them in exact reverse execution order and
//! accumulates gradients additively into every node that requires them.
//! One tape is one computation graph; independent graphs are independent
//! values and may live on different threads.

mod backward;
mod ops;
#[cfg(test)]
mod tests;

pub mod gradcheck;

use crate::real::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: axis {axis} is empty")]
    EmptyAxis { op: &'static str, axis: usize },
    #[error("gather: index {index} out of range [0, {bound}) at row {row}, column {col}")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        index: usize,
        bound: usize,
    },
    #[error("backward: root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: data length {got} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        got: usize,
        shape: Vec<usize>,
    },
    #[error("select_class: label {label} out of range [0, {classes}) at row {row}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Reduction kinds for [`Tape::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMode {
    Sum,
    Max,
    Mean,
}

#[derive(Debug, Clone)]
pub(crate) enum Op<R: Real> {
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    Reshape {
        x: TensorId,
    },
    Transpose2 {
        x: TensorId,
    },
    Concat {
        xs: Vec<TensorId>,
        axis: usize,
    },
    Gather {
        x: TensorId,
        idx: Vec<u32>,
    },
    Softmax {
        x: TensorId,
        axis: usize,
    },
    LogSoftmax {
        x: TensorId,
        axis: usize,
    },
    Reduce {
        x: TensorId,
        axis: usize,
        mode: ReduceMode,
        /// For max mode: flat index into `x` of the (first) maximum per lane.
        argmax: Vec<u32>,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Sub {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        x: TensorId,
        c: R,
    },
    /// Elementwise product with a fixed (non-differentiable) mask, e.g. dropout.
    MulConst {
        x: TensorId,
        mask: Vec<R>,
    },
    LeakyRelu {
        x: TensorId,
        slope: R,
    },
    Abs {
        x: TensorId,
    },
    Broadcast {
        x: TensorId,
    },
    BnTrain {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        xhat: Vec<R>,
        inv_std: Vec<R>,
    },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        xhat: Vec<R>,
        /// One inverse standard deviation per row.
        inv_std: Vec<R>,
    },
    BnEval {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        inv_std: Vec<R>,
        xhat: Vec<R>,
    },
    SelectClass {
        x: TensorId,
        labels: Vec<u32>,
    },
}

#[derive(Debug)]
pub(crate) struct Node<R: Real> {
    pub shape: Vec<usize>,
    pub data: Vec<R>,
    pub grad: Option<Vec<R>>,
    pub requires_grad: bool,
    pub op: Op<R>,
    pub label: &'static str,
}

/// Recording tape: ordered list of executed operations plus their values.
#[derive(Debug, Default)]
pub struct Tape<R: Real> {
    pub(crate) nodes: Vec<Node<R>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Right-aligned broadcast result shape, or None if incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return None;
        }
    }
    Some(out)
}

/// Effective strides of `shape` when broadcast up to `out_shape`
/// (0 where the extent is expanded).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let native = strides(shape);
    let offset = out_shape.len() - shape.len();
    let mut out = vec![0usize; out_shape.len()];
    for i in 0..out_shape.len() {
        if i >= offset && shape[i - offset] != 1 {
            out[i] = native[i - offset];
        }
    }
    out
}

/// Visit `out_shape` as contiguous last-axis lanes, yielding for each lane
/// the output offset and the two source offsets plus their last-axis
/// steps (0 when broadcast, 1 otherwise). The leading dimensions are
/// walked with an odometer so each callback handles `out_shape.last()`
/// contiguous elements.
pub(crate) fn for_each_lane(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0, 1, 1, 1);
        return;
    }
    let lane = out_shape[rank - 1];
    let (step_a, step_b) = (sa[rank - 1].min(1), sb[rank - 1].min(1));
    let lanes: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for l in 0..lanes {
        f(l * lane, oa, ob, lane, step_a, step_b);
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Lane decomposition for axis-wise operations: the array is viewed as
/// `outer` blocks of `len` strided lanes of `inner` contiguous elements.
pub(crate) struct AxisLanes {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

pub(crate) fn axis_lanes(shape: &[usize], axis: usize) -> AxisLanes {
    AxisLanes {
        outer: shape[..axis].iter().product(),
        len: shape[axis],
        inner: shape[axis + 1..].iter().product(),
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Release all recorded nodes.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[R] {
        &self.nodes[id.0].data
    }

    /// Gradient of the last `backward` root with respect to `id`, if any
    /// flowed there.
    pub fn grad(&self, id: TensorId) -> Option<&[R]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// First non-finite value recorded on the tape, as (label, node index),
    /// in execution order. Diagnostic for NaN aborts.
    pub fn first_non_finite(&self) -> Option<(&'static str, usize)> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.data.iter().any(|v| !v.is_finite()) {
                Some((n.label, i))
            } else {
                None
            }
        })
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<R>,
        requires_grad: bool,
        op: Op<R>,
        label: &'static str,
    ) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
            label,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, shape: &[usize], data: Vec<R>) -> Result<TensorId, TensorError> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                op: "constant",
                got: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(shape.to_vec(), data, false, Op::Leaf, "constant"))
    }

    /// Differentiable input (parameter or probe).
    pub fn leaf(&mut self, shape: &[usize], data: Vec<R>) -> Result<TensorId, TensorError> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                op: "leaf",
                got: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(shape.to_vec(), data, true, Op::Leaf, "leaf"))
    }

    pub(crate) fn any_requires(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }
}
