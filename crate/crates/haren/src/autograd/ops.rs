//! Operation constructors. Each validates shapes, computes the forward
//! values, and appends a node recording how to push adjoints back.

use rand::Rng;

use super::kernels;
use super::{CustomOp, Graph, Op, Tid, LAYER_NORM_EPS};
use crate::error::{Error, Result};

impl Graph {
    fn dims2(&self, t: Tid) -> Option<(usize, usize)> {
        match self.shape(t) {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    /// Standard matrix product `a (M×K) · b (K×N)`.
    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (m, k) = self.dims2(a).ok_or_else(|| Error::Shape {
            op: "matmul",
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        })?;
        let (k2, n) = self.dims2(b).ok_or_else(|| Error::Shape {
            op: "matmul",
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        })?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let values = kernels::matmul(self.values(a), self.values(b), m, k, n);
        self.push(vec![m, n], values, Op::MatMul { a, b }, false)
    }

    pub fn transpose(&mut self, x: Tid) -> Result<Tid> {
        let (r, c) = self.dims2(x).ok_or_else(|| Error::Shape {
            op: "transpose",
            lhs: self.shape(x).to_vec(),
            rhs: vec![],
        })?;
        let values = kernels::transpose(self.values(x), r, c);
        self.push(vec![c, r], values, Op::Transpose { x }, false)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(self.shape(a).to_vec(), values, Op::Add { a, b }, false)
    }

    /// Hadamard product of two same-shape tensors.
    pub fn mul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        self.push(self.shape(a).to_vec(), values, Op::Mul { a, b }, false)
    }

    pub fn scale(&mut self, x: Tid, c: f64) -> Result<Tid> {
        let values: Vec<f64> = self.values(x).iter().map(|v| v * c).collect();
        self.push(self.shape(x).to_vec(), values, Op::Scale { x, c }, false)
    }

    /// Broadcast-add a length-C vector to every row of an R×C matrix.
    pub fn add_row(&mut self, x: Tid, row: Tid) -> Result<Tid> {
        let (r, c) = self.dims2(x).ok_or_else(|| Error::Shape {
            op: "add_row",
            lhs: self.shape(x).to_vec(),
            rhs: self.shape(row).to_vec(),
        })?;
        if self.values(row).len() != c {
            return Err(Error::Shape {
                op: "add_row",
                lhs: vec![r, c],
                rhs: self.shape(row).to_vec(),
            });
        }
        let mut values = self.values(x).to_vec();
        let rv = self.values(row);
        for i in 0..r {
            for j in 0..c {
                values[i * c + j] += rv[j];
            }
        }
        self.push(vec![r, c], values, Op::AddRow { x, row }, false)
    }

    /// Softmax applied independently to each row; rows sum to one and the
    /// result is invariant to per-row constant shifts.
    pub fn row_softmax(&mut self, x: Tid) -> Result<Tid> {
        let (r, c) = self.dims2(x).ok_or_else(|| Error::Shape {
            op: "row_softmax",
            lhs: self.shape(x).to_vec(),
            rhs: vec![],
        })?;
        let values = kernels::softmax_rows(self.values(x), r, c);
        self.push(vec![r, c], values, Op::RowSoftmax { x }, false)
    }

    /// Per-row (per-frame) normalization to zero mean and unit variance,
    /// then an affine transform with `gain` and `bias` (both length d).
    pub fn layer_norm(&mut self, x: Tid, gain: Tid, bias: Tid) -> Result<Tid> {
        let (r, c) = self.dims2(x).ok_or_else(|| Error::Shape {
            op: "layer_norm",
            lhs: self.shape(x).to_vec(),
            rhs: vec![],
        })?;
        if c < 2 {
            return Err(Error::parameter(format!(
                "layer_norm requires feature dim >= 2, got {c}"
            )));
        }
        if self.values(gain).len() != c || self.values(bias).len() != c {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: vec![r, c],
                rhs: self.shape(gain).to_vec(),
            });
        }
        let xs = self.values(x);
        let g = self.values(gain);
        let b = self.values(bias);
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let (mean, std) = kernels::row_stats(row, LAYER_NORM_EPS);
            for j in 0..c {
                values[i * c + j] = g[j] * (row[j] - mean) / std + b[j];
            }
        }
        self.push(vec![r, c], values, Op::LayerNorm { x, gain, bias }, false)
    }

    /// Elementwise `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Tid) -> Result<Tid> {
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .map(|&v| v * kernels::sigmoid(v))
            .collect();
        self.push(self.shape(x).to_vec(), values, Op::Silu { x }, false)
    }

    pub fn sigmoid(&mut self, x: Tid) -> Result<Tid> {
        let values: Vec<f64> = self.values(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), values, Op::Sigmoid { x }, false)
    }

    /// Inverted dropout: in training mode each element is zeroed i.i.d.
    /// with probability `rate` and survivors are scaled by `1/(1-rate)`;
    /// in eval mode this is the identity.
    pub fn dropout<R: Rng>(
        &mut self,
        x: Tid,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Tid> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::parameter(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            let values = self.values(x).to_vec();
            let scale = vec![1.0; values.len()];
            return self.push(self.shape(x).to_vec(), values, Op::Dropout { x, scale }, false);
        }
        let keep = 1.0 - rate;
        let scale: Vec<f64> = (0..self.values(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .zip(&scale)
            .map(|(v, s)| v * s)
            .collect();
        self.push(self.shape(x).to_vec(), values, Op::Dropout { x, scale }, false)
    }

    /// Arithmetic mean over the rows of a T×d matrix, yielding a 1×d row.
    pub fn mean_pool_time(&mut self, x: Tid) -> Result<Tid> {
        let (r, c) = self.dims2(x).ok_or_else(|| Error::Shape {
            op: "mean_pool_time",
            lhs: self.shape(x).to_vec(),
            rhs: vec![],
        })?;
        if r == 0 {
            return Err(Error::contract("mean_pool_time over an empty sequence"));
        }
        let xs = self.values(x);
        let mut values = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                values[j] += xs[i * c + j];
            }
        }
        for v in values.iter_mut() {
            *v /= r as f64;
        }
        self.push(vec![1, c], values, Op::MeanRows { x }, false)
    }

    /// Average consecutive windows of `stride` rows (last window may be
    /// shorter). `stride == 1` keeps the sequence unchanged.
    pub fn pool_rows(&mut self, x: Tid, stride: usize) -> Result<Tid> {
        if stride == 0 {
            return Err(Error::parameter("pool stride must be >= 1"));
        }
        let (r, c) = self.dims2(x).ok_or_else(|| Error::Shape {
            op: "pool_rows",
            lhs: self.shape(x).to_vec(),
            rhs: vec![],
        })?;
        let out_rows = r.div_ceil(stride);
        let xs = self.values(x);
        let mut values = vec![0.0; out_rows * c];
        for w in 0..out_rows {
            let lo = w * stride;
            let hi = ((w + 1) * stride).min(r);
            for i in lo..hi {
                for j in 0..c {
                    values[w * c + j] += xs[i * c + j];
                }
            }
            let len = (hi - lo) as f64;
            for j in 0..c {
                values[w * c + j] /= len;
            }
        }
        self.push(vec![out_rows, c], values, Op::PoolRows { x, stride }, false)
    }

    /// `out = sum_l weights[l] * items[l]`, all items sharing one shape.
    pub fn weighted_sum(&mut self, weights: Tid, items: &[Tid]) -> Result<Tid> {
        if items.is_empty() {
            return Err(Error::contract("weighted_sum over zero items"));
        }
        if self.values(weights).len() != items.len() {
            return Err(Error::Shape {
                op: "weighted_sum",
                lhs: self.shape(weights).to_vec(),
                rhs: vec![items.len()],
            });
        }
        let shape = self.shape(items[0]).to_vec();
        for &it in items {
            if self.shape(it) != shape.as_slice() {
                return Err(Error::Shape {
                    op: "weighted_sum",
                    lhs: shape,
                    rhs: self.shape(it).to_vec(),
                });
            }
        }
        let n: usize = shape.iter().product();
        let mut values = vec![0.0; n];
        for (l, &it) in items.iter().enumerate() {
            let w = self.values(weights)[l];
            let iv = self.values(it);
            for j in 0..n {
                values[j] += w * iv[j];
            }
        }
        self.push(
            shape,
            values,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            false,
        )
    }

    /// Columns `[start, start+width)` of a matrix.
    pub fn slice_cols(&mut self, x: Tid, start: usize, width: usize) -> Result<Tid> {
        let (r, c) = self.dims2(x).ok_or_else(|| Error::Shape {
            op: "slice_cols",
            lhs: self.shape(x).to_vec(),
            rhs: vec![],
        })?;
        if start + width > c || width == 0 {
            return Err(Error::contract(format!(
                "slice_cols [{start}, {}) out of range for {c} columns",
                start + width
            )));
        }
        let xs = self.values(x);
        let mut values = vec![0.0; r * width];
        for i in 0..r {
            values[i * width..(i + 1) * width]
                .copy_from_slice(&xs[i * c + start..i * c + start + width]);
        }
        self.push(vec![r, width], values, Op::SliceCols { x, start, width }, false)
    }

    /// Horizontal concatenation of matrices sharing a row count.
    pub fn concat_cols(&mut self, parts: &[Tid]) -> Result<Tid> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero parts"));
        }
        let (r, _) = self.dims2(parts[0]).ok_or_else(|| Error::Shape {
            op: "concat_cols",
            lhs: self.shape(parts[0]).to_vec(),
            rhs: vec![],
        })?;
        let mut total = 0usize;
        for &p in parts {
            match self.dims2(p) {
                Some((pr, pc)) if pr == r => total += pc,
                _ => {
                    return Err(Error::Shape {
                        op: "concat_cols",
                        lhs: self.shape(parts[0]).to_vec(),
                        rhs: self.shape(p).to_vec(),
                    })
                }
            }
        }
        let mut values = vec![0.0; r * total];
        let mut off = 0usize;
        for &p in parts {
            let (_, pc) = self.dims2(p).unwrap();
            let pv = self.values(p);
            for i in 0..r {
                values[i * total + off..i * total + off + pc]
                    .copy_from_slice(&pv[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        self.push(
            vec![r, total],
            values,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            false,
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Tid) -> Result<Tid> {
        let s: f64 = self.values(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum { x }, false)
    }

    pub fn clamp(&mut self, x: Tid, lo: f64, hi: f64) -> Result<Tid> {
        let values: Vec<f64> = self.values(x).iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(self.shape(x).to_vec(), values, Op::Clamp { x, lo, hi }, false)
    }

    /// Append a [`CustomOp`] node over `parents`.
    pub fn custom(&mut self, parents: &[Tid], op: Box<dyn CustomOp>) -> Result<Tid> {
        let inputs: Vec<(&[f64], &[usize])> = parents
            .iter()
            .map(|&p| (self.values(p), self.shape(p)))
            .collect();
        let (values, shape) = op.forward(&inputs)?;
        self.push(
            shape,
            values,
            Op::Custom {
                parents: parents.to_vec(),
                op,
            },
            false,
        )
    }
}
