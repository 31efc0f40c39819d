//! Reverse adjoint replay over a recorded graph.

use super::kernels;
use super::{Gradients, Graph, Op, Tid, LAYER_NORM_EPS};
use crate::error::Result;

struct Store<'g> {
    graph: &'g Graph,
    grads: Vec<Option<Vec<f64>>>,
}

impl<'g> Store<'g> {
    /// Accumulate `contrib` into the gradient of `t`. Constant leaves are
    /// skipped: nothing downstream of them ever reads a gradient.
    fn acc(&mut self, t: Tid, contrib: &[f64]) {
        let node = self.graph.node(t);
        if matches!(node.op, Op::Leaf) && !node.trainable {
            return;
        }
        let precision = self.graph.precision();
        let slot = self.grads[t.0].get_or_insert_with(|| vec![0.0; node.values.len()]);
        for (g, c) in slot.iter_mut().zip(contrib) {
            *g = precision.quantize(*g + c);
        }
    }
}

pub(super) fn run(graph: &Graph, loss: Tid) -> Result<Gradients> {
    let mut store = Store {
        graph,
        grads: vec![None; graph.len()],
    };
    store.grads[loss.0] = Some(vec![1.0]);

    for id in (0..=loss.0).rev() {
        let out_grad = match store.grads[id].clone() {
            Some(g) => g,
            None => continue,
        };
        let node = graph.node(Tid(id));
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = dims2(graph, *a);
                let n = dims2(graph, *b).1;
                // dA = dC · Bᵀ ; dB = Aᵀ · dC
                let bt = kernels::transpose(graph.values(*b), k, n);
                let da = kernels::matmul(&out_grad, &bt, m, n, k);
                let at = kernels::transpose(graph.values(*a), m, k);
                let db = kernels::matmul(&at, &out_grad, k, m, n);
                store.acc(*a, &da);
                store.acc(*b, &db);
            }
            Op::Transpose { x } => {
                let (r, c) = dims2(graph, *x);
                let dx = kernels::transpose(&out_grad, c, r);
                store.acc(*x, &dx);
            }
            Op::Add { a, b } => {
                store.acc(*a, &out_grad);
                store.acc(*b, &out_grad);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = out_grad
                    .iter()
                    .zip(graph.values(*b))
                    .map(|(g, v)| g * v)
                    .collect();
                let db: Vec<f64> = out_grad
                    .iter()
                    .zip(graph.values(*a))
                    .map(|(g, v)| g * v)
                    .collect();
                store.acc(*a, &da);
                store.acc(*b, &db);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = out_grad.iter().map(|g| g * c).collect();
                store.acc(*x, &dx);
            }
            Op::AddRow { x, row } => {
                let (r, c) = dims2(graph, *x);
                store.acc(*x, &out_grad);
                let mut drow = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        drow[j] += out_grad[i * c + j];
                    }
                }
                store.acc(*row, &drow);
            }
            Op::RowSoftmax { x } => {
                let (r, c) = dims2(graph, *x);
                let y = &node.values;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &out_grad[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                store.acc(*x, &dx);
            }
            Op::LayerNorm { x, gain, bias } => {
                let (r, c) = dims2(graph, *x);
                let xs = graph.values(*x);
                let g = graph.values(*gain);
                let mut dx = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for i in 0..r {
                    let row = &xs[i * c..(i + 1) * c];
                    let gr = &out_grad[i * c..(i + 1) * c];
                    let (mean, std) = kernels::row_stats(row, LAYER_NORM_EPS);
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) / std).collect();
                    let dxhat: Vec<f64> = gr.iter().zip(g).map(|(d, gv)| d * gv).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[i * c + j] =
                            (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) / std;
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                }
                store.acc(*x, &dx);
                store.acc(*gain, &dgain);
                store.acc(*bias, &dbias);
            }
            Op::Silu { x } => {
                let dx: Vec<f64> = graph
                    .values(*x)
                    .iter()
                    .zip(&out_grad)
                    .map(|(&v, g)| {
                        let s = kernels::sigmoid(v);
                        g * (s + v * s * (1.0 - s))
                    })
                    .collect();
                store.acc(*x, &dx);
            }
            Op::Sigmoid { x } => {
                let dx: Vec<f64> = node
                    .values
                    .iter()
                    .zip(&out_grad)
                    .map(|(&y, g)| g * y * (1.0 - y))
                    .collect();
                store.acc(*x, &dx);
            }
            Op::Dropout { x, scale } => {
                let dx: Vec<f64> = out_grad.iter().zip(scale).map(|(g, s)| g * s).collect();
                store.acc(*x, &dx);
            }
            Op::MeanRows { x } => {
                let (r, c) = dims2(graph, *x);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = out_grad[j] / r as f64;
                    }
                }
                store.acc(*x, &dx);
            }
            Op::PoolRows { x, stride } => {
                let (r, c) = dims2(graph, *x);
                let mut dx = vec![0.0; r * c];
                let out_rows = r.div_ceil(*stride);
                for w in 0..out_rows {
                    let lo = w * stride;
                    let hi = ((w + 1) * stride).min(r);
                    let len = (hi - lo) as f64;
                    for i in lo..hi {
                        for j in 0..c {
                            dx[i * c + j] = out_grad[w * c + j] / len;
                        }
                    }
                }
                store.acc(*x, &dx);
            }
            Op::WeightedSum { weights, items } => {
                let wv = graph.values(*weights).to_vec();
                let mut dw = vec![0.0; wv.len()];
                for (l, &it) in items.iter().enumerate() {
                    let iv = graph.values(it);
                    dw[l] = out_grad.iter().zip(iv).map(|(g, v)| g * v).sum();
                    let di: Vec<f64> = out_grad.iter().map(|g| g * wv[l]).collect();
                    store.acc(it, &di);
                }
                store.acc(*weights, &dw);
            }
            Op::SliceCols { x, start, width } => {
                let (r, c) = dims2(graph, *x);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..*width {
                        dx[i * c + start + j] = out_grad[i * width + j];
                    }
                }
                store.acc(*x, &dx);
            }
            Op::ConcatCols { parts } => {
                let total = node.shape[1];
                let r = node.shape[0];
                let mut off = 0usize;
                for &p in parts {
                    let pc = dims2(graph, p).1;
                    let mut dp = vec![0.0; r * pc];
                    for i in 0..r {
                        dp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&out_grad[i * total + off..i * total + off + pc]);
                    }
                    store.acc(p, &dp);
                    off += pc;
                }
            }
            Op::Sum { x } => {
                let dx = vec![out_grad[0]; graph.values(*x).len()];
                store.acc(*x, &dx);
            }
            Op::Clamp { x, lo, hi } => {
                let dx: Vec<f64> = graph
                    .values(*x)
                    .iter()
                    .zip(&out_grad)
                    .map(|(&v, g)| if v > *lo && v < *hi { *g } else { 0.0 })
                    .collect();
                store.acc(*x, &dx);
            }
            Op::Custom { parents, op } => {
                let inputs: Vec<(&[f64], &[usize])> = parents
                    .iter()
                    .map(|&p| (graph.values(p), graph.shape(p)))
                    .collect();
                let parent_grads = op.backward(&inputs, &node.values, &out_grad)?;
                for (&p, dp) in parents.iter().zip(&parent_grads) {
                    store.acc(p, dp);
                }
            }
        }
    }

    Ok(Gradients { grads: store.grads })
}

fn dims2(graph: &Graph, t: Tid) -> (usize, usize) {
    match graph.shape(t) {
        [r, c] => (*r, *c),
        s => panic!("expected matrix, got shape {s:?}"),
    }
}
