//! The exact CTC loss: log-space forward algorithm over the blank-extended
//! target, with the analytic adjoint into the frame logits, plus a
//! path-enumeration oracle for small instances.

use super::labels::TokenSequence;
use super::BLANK;
use crate::autograd::{CustomOp, Graph, Tid};
use crate::error::{Error, Result};
use crate::mat::Mat;

const NEG_INF: f64 = f64::NEG_INFINITY;

fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == NEG_INF {
        return NEG_INF;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    lse2(lse2(a, b), c)
}

fn log_softmax_rows(logits: &[f64], frames: usize, vocab: usize) -> Vec<f64> {
    let mut out = vec![0.0; frames * vocab];
    for t in 0..frames {
        let row = &logits[t * vocab..(t + 1) * vocab];
        let mx = row.iter().cloned().fold(NEG_INF, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        for v in 0..vocab {
            out[t * vocab + v] = row[v] - lse;
        }
    }
    out
}

/// Blank-extended target: blank, y1, blank, y2, ..., blank.
fn extend(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &t in target {
        ext.push(t);
        ext.push(BLANK);
    }
    ext
}

fn validate(frames: usize, vocab: usize, target: &TokenSequence) -> Result<()> {
    if let Some(&bad) = target.tokens().iter().find(|&&t| t >= vocab) {
        return Err(Error::data(format!(
            "target token {bad} out of range for vocabulary {vocab}"
        )));
    }
    // Post-collapse targets have no repeats, so feasibility is just
    // frames >= target length.
    if frames < target.target_length() {
        return Err(Error::CtcInfeasible {
            input_len: frames,
            target_len: target.target_length(),
        });
    }
    Ok(())
}

/// Loss and exact gradient with respect to the unnormalized logits
/// (`frames` x `vocab`, row-major).
pub fn ctc_loss_with_grad(
    logits: &[f64],
    frames: usize,
    vocab: usize,
    target: &TokenSequence,
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != frames * vocab {
        return Err(Error::contract(format!(
            "ctc_loss: {} logits for {frames}x{vocab}",
            logits.len()
        )));
    }
    validate(frames, vocab, target)?;
    let lp = log_softmax_rows(logits, frames, vocab);
    let ext = extend(target.tokens());
    let s_len = ext.len();

    // Forward variable; alpha[t][s] includes the emission at time t.
    let mut alpha = vec![NEG_INF; frames * s_len];
    alpha[0] = lp[BLANK];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..frames {
        for s in 0..s_len {
            let stay = alpha[(t - 1) * s_len + s];
            let step = if s >= 1 {
                alpha[(t - 1) * s_len + s - 1]
            } else {
                NEG_INF
            };
            let skip = if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                alpha[(t - 1) * s_len + s - 2]
            } else {
                NEG_INF
            };
            let m = lse3(stay, step, skip);
            if m > NEG_INF {
                alpha[t * s_len + s] = m + lp[t * vocab + ext[s]];
            }
        }
    }
    let tail = if s_len > 1 {
        lse2(
            alpha[(frames - 1) * s_len + s_len - 1],
            alpha[(frames - 1) * s_len + s_len - 2],
        )
    } else {
        alpha[(frames - 1) * s_len]
    };
    if tail == NEG_INF {
        // Cannot happen for feasible lengths, but guard anyway.
        return Err(Error::CtcInfeasible {
            input_len: frames,
            target_len: target.target_length(),
        });
    }
    let loss = -tail;

    // Backward variable; beta[t][s] also includes the emission at time t.
    let mut beta = vec![NEG_INF; frames * s_len];
    beta[(frames - 1) * s_len + s_len - 1] = lp[(frames - 1) * vocab + ext[s_len - 1]];
    if s_len > 1 {
        beta[(frames - 1) * s_len + s_len - 2] = lp[(frames - 1) * vocab + ext[s_len - 2]];
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let stay = beta[(t + 1) * s_len + s];
            let step = if s + 1 < s_len {
                beta[(t + 1) * s_len + s + 1]
            } else {
                NEG_INF
            };
            let skip = if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                beta[(t + 1) * s_len + s + 2]
            } else {
                NEG_INF
            };
            let m = lse3(stay, step, skip);
            if m > NEG_INF {
                beta[t * s_len + s] = m + lp[t * vocab + ext[s]];
            }
        }
    }

    // dL/dlogit[t][v] = p[t][v] - sum_{s: ext[s]=v} alpha*beta / (P * p[t][v]).
    // In log space the subtracted term is exp(lse_s(alpha+beta) - lp + loss_tail)
    // where loss_tail = -log P = loss.
    let mut grad = vec![0.0; frames * vocab];
    for t in 0..frames {
        let mut occupancy = vec![NEG_INF; vocab];
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            occupancy[ext[s]] = lse2(occupancy[ext[s]], ab);
        }
        for v in 0..vocab {
            let p = lp[t * vocab + v].exp();
            let q = if occupancy[v] == NEG_INF {
                0.0
            } else {
                (occupancy[v] - lp[t * vocab + v] + loss).exp()
            };
            grad[t * vocab + v] = p - q;
        }
    }

    Ok((loss, grad))
}

/// Loss only.
pub fn ctc_loss(logits: &Mat, target: &TokenSequence) -> Result<f64> {
    ctc_loss_with_grad(&logits.data, logits.rows, logits.cols, target).map(|(l, _)| l)
}

#[derive(Debug)]
struct CtcLossOp {
    target: TokenSequence,
}

impl CustomOp for CtcLossOp {
    fn name(&self) -> &'static str {
        "ctc_loss"
    }

    fn forward(&self, inputs: &[(&[f64], &[usize])]) -> Result<(Vec<f64>, Vec<usize>)> {
        let (vals, shape) = inputs[0];
        let (frames, vocab) = (shape[0], shape[1]);
        let (loss, _) = ctc_loss_with_grad(vals, frames, vocab, &self.target)?;
        Ok((vec![loss], vec![1]))
    }

    fn backward(
        &self,
        inputs: &[(&[f64], &[usize])],
        _output: &[f64],
        output_grad: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let (vals, shape) = inputs[0];
        let (frames, vocab) = (shape[0], shape[1]);
        let (_, mut grad) = ctc_loss_with_grad(vals, frames, vocab, &self.target)?;
        for g in grad.iter_mut() {
            *g *= output_grad[0];
        }
        Ok(vec![grad])
    }
}

/// Record the CTC loss of a frame-logits node against `target`.
pub fn ctc_loss_node(g: &mut Graph, frame_logits: Tid, target: &TokenSequence) -> Result<Tid> {
    let shape = g.shape(frame_logits);
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "ctc_loss",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    validate(shape[0], shape[1], target)?;
    g.custom(
        &[frame_logits],
        Box::new(CtcLossOp {
            target: target.clone(),
        }),
    )
}

/// Enumeration guard for the brute-force oracle.
const MAX_BRUTE_FRAMES: usize = 8;
const MAX_BRUTE_VOCAB: usize = 5;

/// Test oracle: total probability of `target` by summing every frame-label
/// path whose collapse (remove repeats, then blanks) equals the target.
/// `frame_probs` holds per-frame probabilities (not logits). Refuses
/// instances beyond the enumeration guard.
pub fn ctc_brute_force(frame_probs: &Mat, target: &[usize]) -> Result<f64> {
    let (frames, vocab) = (frame_probs.rows, frame_probs.cols);
    if frames > MAX_BRUTE_FRAMES || vocab > MAX_BRUTE_VOCAB {
        return Err(Error::parameter(format!(
            "brute-force guard: {frames} frames x {vocab} vocab exceeds {MAX_BRUTE_FRAMES}x{MAX_BRUTE_VOCAB}"
        )));
    }
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    loop {
        // Collapse: drop repeats, then blanks.
        let mut collapsed = Vec::with_capacity(frames);
        let mut prev = usize::MAX;
        for &p in &path {
            if p != prev {
                if p != BLANK {
                    collapsed.push(p);
                }
                prev = p;
            }
        }
        if collapsed == target {
            let mut prob = 1.0;
            for (t, &p) in path.iter().enumerate() {
                prob *= frame_probs.get(t, p);
            }
            total += prob;
        }
        // Odometer increment over vocab^frames.
        let mut pos = 0;
        loop {
            if pos == frames {
                return Ok(total);
            }
            path[pos] += 1;
            if path[pos] < vocab {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Graph, Precision};
    use crate::gradcheck::{max_relative_error, numeric_grad};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_probs(frames: usize, vocab: usize) -> Mat {
        Mat::new(frames, vocab, vec![1.0 / vocab as f64; frames * vocab]).unwrap()
    }

    /// Logits whose softmax equals the given probabilities.
    fn logits_for(probs: &Mat) -> Vec<f64> {
        probs.data.iter().map(|p| p.ln()).collect()
    }

    #[test]
    fn single_frame_single_token() {
        // T=1, p(a)=0.7 -> loss = -ln 0.7.
        let probs = Mat::new(1, 3, vec![0.2, 0.7, 0.1]).unwrap();
        let target = TokenSequence::new(vec![1], 1).unwrap();
        let (loss, _) = ctc_loss_with_grad(&logits_for(&probs), 1, 3, &target).unwrap();
        assert_relative_eq!(loss, 0.3566749439387324, max_relative = 1e-12);
    }

    #[test]
    fn two_frames_uniform_three_vocab() {
        // Alignments (a,a), (blank,a), (a,blank): P = 3/9, loss = ln 3.
        let probs = uniform_probs(2, 3);
        let target = TokenSequence::new(vec![1], 2).unwrap();
        let (loss, _) = ctc_loss_with_grad(&logits_for(&probs), 2, 3, &target).unwrap();
        assert_relative_eq!(loss, 1.0986122886681098, max_relative = 1e-12);
        let brute = ctc_brute_force(&probs, &[1]).unwrap();
        assert_relative_eq!(loss, -brute.ln(), max_relative = 1e-12);
    }

    #[test]
    fn brute_force_guard_and_empty_target() {
        let probs = uniform_probs(9, 3);
        assert!(ctc_brute_force(&probs, &[1]).is_err());
        // Target longer than T has probability zero.
        let probs = uniform_probs(2, 3);
        assert_eq!(ctc_brute_force(&probs, &[1, 2, 1]).unwrap(), 0.0);
    }

    #[test]
    fn path_probabilities_partition_unity() {
        // Summing the oracle over every distinct reachable target must
        // give exactly one.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let frames = 3;
        let vocab = 3;
        let mut probs = Mat::zeros(frames, vocab);
        for t in 0..frames {
            let mut row: Vec<f64> = (0..vocab).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            probs.row_mut(t).copy_from_slice(&row);
        }
        // All targets over tokens {1, 2} up to length `frames`.
        let mut total = 0.0;
        let mut targets: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..frames {
            let mut next = Vec::new();
            for t in &targets {
                for tok in 1..vocab {
                    let mut t2 = t.clone();
                    t2.push(tok);
                    next.push(t2);
                }
            }
            targets.extend(next);
        }
        targets.sort();
        targets.dedup();
        for t in &targets {
            if t.len() <= frames {
                total += ctc_brute_force(&probs, t).unwrap();
            }
        }
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn loss_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let frames = rng.gen_range(1..=5);
            let vocab = rng.gen_range(3..=4);
            let k = (vocab - 1) / 2;
            let max_target = frames.min(3);
            let len = rng.gen_range(0..=max_target);
            let mut tokens: Vec<usize> = Vec::new();
            for _ in 0..len {
                loop {
                    let t = rng.gen_range(1..vocab.max(2 * k + 1).min(vocab));
                    if tokens.last() != Some(&t) {
                        tokens.push(t);
                        break;
                    }
                }
            }
            let logits: Vec<f64> = (0..frames * vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let target = TokenSequence::new(tokens.clone(), frames).unwrap();
            let (loss, _) = ctc_loss_with_grad(&logits, frames, vocab, &target).unwrap();

            let lp = log_softmax_rows(&logits, frames, vocab);
            let probs = Mat::new(frames, vocab, lp.iter().map(|v| v.exp()).collect()).unwrap();
            let brute = ctc_brute_force(&probs, &tokens).unwrap();
            assert!(
                (loss - (-brute.ln())).abs() / loss.abs().max(1.0) <= 1e-9,
                "loss {loss} vs brute {}",
                -brute.ln()
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..40 {
            let frames = rng.gen_range(2..=5);
            let vocab = rng.gen_range(3..=5);
            let len = rng.gen_range(1..=frames.min(3));
            let mut tokens: Vec<usize> = Vec::new();
            for _ in 0..len {
                loop {
                    let t = rng.gen_range(1..vocab);
                    if tokens.last() != Some(&t) {
                        tokens.push(t);
                        break;
                    }
                }
            }
            let target = TokenSequence::new(tokens, frames).unwrap();
            let logits: Vec<f64> = (0..frames * vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, analytic) = ctc_loss_with_grad(&logits, frames, vocab, &target).unwrap();
            let numeric = numeric_grad(&logits, |l| {
                ctc_loss_with_grad(l, frames, vocab, &target).map(|(loss, _)| loss)
            })
            .unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "CTC gradient mismatch: {err}");
        }
    }

    #[test]
    fn graph_node_routes_the_adjoint() {
        let mut g = Graph::new(Precision::F64);
        let logits = g
            .trainable(vec![3, 3], vec![0.3, -0.2, 0.9, 0.0, 0.5, -0.4, 0.1, 0.1, 0.2])
            .unwrap();
        let target = TokenSequence::new(vec![2, 1], 3).unwrap();
        let loss = ctc_loss_node(&mut g, logits, &target).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(&g, logits);
        let (_, direct) = ctc_loss_with_grad(g.values(logits), 3, 3, &target).unwrap();
        assert_eq!(analytic, direct);
    }

    #[test]
    fn infeasible_pairs_error_instead_of_infinity() {
        let logits = vec![0.0; 2 * 3];
        let target = TokenSequence::new(vec![1, 2, 1], 5).unwrap();
        let err = ctc_loss_with_grad(&logits, 2, 3, &target).unwrap_err();
        assert!(matches!(err, Error::CtcInfeasible { input_len: 2, target_len: 3 }));
    }

    #[test]
    fn tiny_probabilities_do_not_produce_nan() {
        // Push one symbol's probability to ~1e-300 via extreme logits.
        let frames = 4;
        let vocab = 3;
        let mut logits = vec![0.0; frames * vocab];
        for t in 0..frames {
            logits[t * vocab + 1] = -690.0; // exp(-690) ~ 1e-300 after normalization
        }
        let target = TokenSequence::new(vec![1], frames).unwrap();
        let (loss, grad) = ctc_loss_with_grad(&logits, frames, vocab, &target).unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn out_of_range_target_token_is_rejected() {
        let logits = vec![0.0; 2 * 3];
        let target = TokenSequence::new(vec![4], 2).unwrap();
        assert!(ctc_loss_with_grad(&logits, 2, 3, &target).is_err());
    }
}
