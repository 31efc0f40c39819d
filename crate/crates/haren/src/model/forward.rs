//! Forward pass composition.

use rand::Rng;

use super::{ModelParams, ModelVariant};
use crate::autograd::{Bound, Graph, Tid};
use crate::data::LayerStack;
use crate::error::Result;

/// Graph handles for one segment's outputs.
pub struct ForwardOutput {
    /// Scalar probability of the depressed class.
    pub probability: Tid,
    /// T' x (2k+1) unnormalized CTC scores.
    pub frame_logits: Tid,
    /// T x d fused sequence.
    pub fused: Tid,
}

/// Weighted layer mixing: `U^(k) = sum_l P[l,k] * layer_l` for the shallow
/// (column 0) and deep (column 1) subspaces.
pub fn cluster_subspaces(
    g: &mut Graph,
    assignment: Tid,
    layer_tids: &[Tid],
) -> Result<(Tid, Tid)> {
    let w_shallow = g.slice_cols(assignment, 0, 1)?;
    let w_deep = g.slice_cols(assignment, 1, 1)?;
    let u_shallow = g.weighted_sum(w_shallow, layer_tids)?;
    let u_deep = g.weighted_sum(w_deep, layer_tids)?;
    Ok((u_shallow, u_deep))
}

/// Multi-head cross-attention (deep queries attend over shallow keys and
/// values) followed by the bottleneck feed-forward block:
/// layer norm, linear d -> ffn_dim, SiLU, dropout, linear ffn_dim -> d,
/// added residually onto the attention output.
pub fn cross_modal_fuse<R: Rng>(
    g: &mut Graph,
    u_deep: Tid,
    u_shallow: Tid,
    params: &ModelParams,
    bound: &Bound,
    training: bool,
    rng: &mut R,
) -> Result<Tid> {
    let tid = |name: &str| -> Tid { bound.tid(params.set.index_of(name).unwrap()) };
    let cfg = &params.config;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let q = g.matmul(u_deep, tid("cmf.w_q"))?;
    let k = g.matmul(u_shallow, tid("cmf.w_k"))?;
    let v = g.matmul(u_shallow, tid("cmf.w_v"))?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.row_softmax(scores)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let concat = g.concat_cols(&heads)?;
    let fused_attn = g.matmul(concat, tid("cmf.w_o"))?;

    let out = ffn_block(g, fused_attn, params, bound, training, rng)?;
    Ok(out)
}

/// The shared trunk tail: pre-norm feed-forward bottleneck with a residual
/// connection around it.
fn ffn_block<R: Rng>(
    g: &mut Graph,
    input: Tid,
    params: &ModelParams,
    bound: &Bound,
    training: bool,
    rng: &mut R,
) -> Result<Tid> {
    let tid = |name: &str| -> Tid { bound.tid(params.set.index_of(name).unwrap()) };
    let normed = g.layer_norm(input, tid("cmf.norm_gain"), tid("cmf.norm_bias"))?;
    let h = g.matmul(normed, tid("cmf.ffn_w1"))?;
    let h = g.add_row(h, tid("cmf.ffn_b1"))?;
    let h = g.silu(h)?;
    let h = g.dropout(h, params.config.dropout, training, rng)?;
    let h = g.matmul(h, tid("cmf.ffn_w2"))?;
    let h = g.add_row(h, tid("cmf.ffn_b2"))?;
    g.add(input, h)
}

/// Full forward pass for one segment.
pub fn forward<R: Rng>(
    g: &mut Graph,
    bound: &Bound,
    params: &ModelParams,
    stack: &LayerStack,
    training: bool,
    rng: &mut R,
) -> Result<ForwardOutput> {
    params.check_stack(stack)?;
    let tid = |name: &str| -> Tid { bound.tid(params.set.index_of(name).unwrap()) };
    let t = stack.frames();
    let d = stack.dim();

    let fused = match params.variant {
        ModelVariant::Full => {
            let layer_tids: Vec<Tid> = stack
                .layers()
                .iter()
                .map(|l| g.constant(vec![t, d], l.data.clone()))
                .collect::<Result<_>>()?;
            let assignment = g.row_softmax(tid("hac.logits"))?;
            let (u_shallow, u_deep) = cluster_subspaces(g, assignment, &layer_tids)?;
            cross_modal_fuse(g, u_deep, u_shallow, params, bound, training, rng)?
        }
        ModelVariant::SingleLayer { layer } => {
            let base = g.constant(vec![t, d], stack.layer(layer).data.clone())?;
            ffn_block(g, base, params, bound, training, rng)?
        }
    };

    let pooled = g.mean_pool_time(fused)?;
    let cls = g.matmul(pooled, tid("head.cls_w"))?;
    let cls = g.add_row(cls, tid("head.cls_b"))?;
    let probability = g.sigmoid(cls)?;

    let seq = if params.config.pool_stride > 1 {
        g.pool_rows(fused, params.config.pool_stride)?
    } else {
        fused
    };
    let logits = g.matmul(seq, tid("head.ctc_w"))?;
    let frame_logits = g.add_row(logits, tid("head.ctc_b"))?;

    Ok(ForwardOutput {
        probability,
        frame_logits,
        fused,
    })
}
