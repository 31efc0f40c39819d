//! CTC pseudo-label generation and the exact CTC loss.
//!
//! Frame features are discretized against a K-means codebook, shifted into
//! a class-disjoint token range, and collapsed into CTC targets. The loss
//! is the standard forward algorithm over the blank-extended target in log
//! space, with an exact analytic adjoint; a path-enumeration oracle backs
//! it in tests.

mod kmeans;
mod labels;
mod loss;

pub use kmeans::{kmeans_fit, tokenize, Codebook, FitInfo};
pub use labels::{build_targets, collapse, reindex_tokens, TokenSequence};
pub use loss::{ctc_brute_force, ctc_loss, ctc_loss_node, ctc_loss_with_grad};

/// The CTC blank symbol. Class tokens start at 1.
pub const BLANK: usize = 0;

/// Vocabulary size for `k` centroids: blank + k non-depressed + k depressed.
pub fn vocab_size(k: usize) -> usize {
    2 * k + 1
}
