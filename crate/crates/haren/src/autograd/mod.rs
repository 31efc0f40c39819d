//! Dense-tensor compute graph with reverse-mode differentiation.
//!
//! The graph is define-by-run: every operation appends a node holding the
//! computed values plus enough structure to replay adjoints in reverse
//! order. Tensors are immutable once produced and recording is
//! single-threaded, so a fixed seed reproduces a run bit for bit.
//!
//! Values are stored as `f64`. In [`Precision::F32`] mode every operation
//! (and every gradient accumulation) rounds its result through `f32`, so
//! all stored values are exactly representable in 32-bit floats; tests and
//! oracles run in [`Precision::F64`], where arithmetic is untouched.

mod backward;
pub(crate) mod kernels;
mod ops;
mod params;

pub use params::{Bound, Param, ParamSet};

use crate::error::{Error, Result};

/// Storage precision for graph values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    #[inline]
    pub(crate) fn quantize(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
        }
    }

    pub(crate) fn quantize_all(self, values: &mut [f64]) {
        if self == Precision::F32 {
            for v in values.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tid(pub(crate) usize);

/// A custom differentiable operation registered from outside the engine.
///
/// `forward` receives the parent values/shapes and returns the output
/// values and shape; `backward` returns one gradient buffer per parent.
pub trait CustomOp: std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[(&[f64], &[usize])]) -> Result<(Vec<f64>, Vec<usize>)>;
    fn backward(
        &self,
        inputs: &[(&[f64], &[usize])],
        output: &[f64],
        output_grad: &[f64],
    ) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: Tid, b: Tid },
    Transpose { x: Tid },
    Add { a: Tid, b: Tid },
    Mul { a: Tid, b: Tid },
    Scale { x: Tid, c: f64 },
    AddRow { x: Tid, row: Tid },
    RowSoftmax { x: Tid },
    LayerNorm { x: Tid, gain: Tid, bias: Tid },
    Silu { x: Tid },
    Sigmoid { x: Tid },
    Dropout { x: Tid, scale: Vec<f64> },
    MeanRows { x: Tid },
    PoolRows { x: Tid, stride: usize },
    WeightedSum { weights: Tid, items: Vec<Tid> },
    SliceCols { x: Tid, start: usize, width: usize },
    ConcatCols { parts: Vec<Tid> },
    Sum { x: Tid },
    Clamp { x: Tid, lo: f64, hi: f64 },
    Custom { parents: Vec<Tid>, op: Box<dyn CustomOp> },
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) values: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) trainable: bool,
}

/// The recorded computation. All operations append nodes; [`Graph::backward`]
/// replays adjoints from a scalar loss back to every trainable leaf.
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer for `t`; zeros if the loss never touched it.
    pub fn get(&self, g: &Graph, t: Tid) -> Vec<f64> {
        match &self.grads[t.0] {
            Some(v) => v.clone(),
            None => vec![0.0; g.nodes[t.0].values.len()],
        }
    }
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: Tid) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn values(&self, t: Tid) -> &[f64] {
        &self.nodes[t.0].values
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, t: Tid) -> f64 {
        debug_assert_eq!(self.nodes[t.0].values.len(), 1);
        self.nodes[t.0].values[0]
    }

    /// Insert a non-trainable leaf.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Tid> {
        self.leaf(shape, values, false)
    }

    /// Insert a trainable leaf.
    pub fn trainable(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Tid> {
        self.leaf(shape, values, true)
    }

    fn leaf(&mut self, shape: Vec<usize>, values: Vec<f64>, trainable: bool) -> Result<Tid> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::contract(format!(
                "leaf shape {:?} implies {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        self.push(shape, values, Op::Leaf, trainable)
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        mut values: Vec<f64>,
        op: Op,
        trainable: bool,
    ) -> Result<Tid> {
        self.precision.quantize_all(&mut values);
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} produced {}",
                op_name(&op),
                bad
            )));
        }
        self.nodes.push(Node {
            shape,
            values,
            op,
            trainable,
        });
        Ok(Tid(self.nodes.len() - 1))
    }

    pub(crate) fn node(&self, t: Tid) -> &Node {
        &self.nodes[t.0]
    }

    /// Reverse-mode sweep from a scalar `loss`. Returns gradients for every
    /// node on a path between the loss and a trainable leaf; other nodes
    /// read back as zeros.
    pub fn backward(&self, loss: Tid) -> Result<Gradients> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        backward::run(self, loss)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::AddRow { .. } => "add_row",
        Op::RowSoftmax { .. } => "row_softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Silu { .. } => "silu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Dropout { .. } => "dropout",
        Op::MeanRows { .. } => "mean_pool_time",
        Op::PoolRows { .. } => "pool_rows",
        Op::WeightedSum { .. } => "weighted_sum",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols { .. } => "concat_cols",
        Op::Sum { .. } => "sum",
        Op::Clamp { .. } => "clamp",
        Op::Custom { op, .. } => op.name(),
    }
}

/// Stability epsilon added to the per-frame variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
