//! Token re-indexing, collapse, and CTC target construction.

use super::{kmeans::Codebook, tokenize};
use crate::data::ClassLabel;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// A collapsed, class-shifted CTC target plus the lengths CTC needs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<usize>,
    input_length: usize,
}

impl TokenSequence {
    /// Validates the type invariants: tokens are nonzero (blank is
    /// reserved), no two consecutive tokens are equal, and the target is
    /// no longer than the input. Longer targets admit no alignment and
    /// are rejected here rather than surfacing as infinite losses.
    pub fn new(tokens: Vec<usize>, input_length: usize) -> Result<Self> {
        if tokens.contains(&super::BLANK) {
            return Err(Error::data("CTC target contains the blank token"));
        }
        if tokens.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::data("CTC target has consecutive duplicate tokens"));
        }
        if tokens.len() > input_length {
            return Err(Error::CtcInfeasible {
                input_len: input_length,
                target_len: tokens.len(),
            });
        }
        Ok(TokenSequence {
            tokens,
            input_length,
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn target_length(&self) -> usize {
        self.tokens.len()
    }

    /// The same target against a different input length (e.g. after
    /// temporal pooling), re-checking feasibility.
    pub fn with_input_length(&self, input_length: usize) -> Result<Self> {
        TokenSequence::new(self.tokens.clone(), input_length)
    }
}

/// Shift raw centroid indices into the class-disjoint token ranges:
/// non-depressed tokens occupy `1..=k`, depressed tokens `k+1..=2k`
/// (index 0 stays reserved for the CTC blank).
pub fn reindex_tokens(raw: &[usize], label: ClassLabel, k: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = raw.iter().find(|&&t| t >= k) {
        return Err(Error::data(format!(
            "raw token {bad} out of range for {k} centroids"
        )));
    }
    let shift = match label {
        ClassLabel::Control => 1,
        ClassLabel::Depressed => 1 + k,
    };
    Ok(raw.iter().map(|&t| t + shift).collect())
}

/// Remove consecutive duplicate tokens, preserving order.
pub fn collapse(tokens: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

/// Full target construction: tokenize against the codebook, shift by
/// class, collapse, and attach the frame count as the CTC input length.
pub fn build_targets(
    features: &Mat,
    codebook: &Codebook,
    label: ClassLabel,
) -> Result<TokenSequence> {
    let raw = tokenize(features, codebook)?;
    let shifted = reindex_tokens(&raw, label, codebook.k)?;
    TokenSequence::new(collapse(&shifted), features.rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reindex_examples() {
        // k=5, control, raw 2 -> 3 (blank offset).
        assert_eq!(
            reindex_tokens(&[2], ClassLabel::Control, 5).unwrap(),
            vec![3]
        );
        // k=5, depressed, raw 2 -> 8.
        assert_eq!(
            reindex_tokens(&[2], ClassLabel::Depressed, 5).unwrap(),
            vec![8]
        );
        // Out-of-range raw token is a data error.
        assert!(reindex_tokens(&[5], ClassLabel::Control, 5).is_err());
    }

    #[test]
    fn class_ranges_are_disjoint_for_any_k() {
        for k in 1..=20 {
            let raw: Vec<usize> = (0..k).collect();
            let nd = reindex_tokens(&raw, ClassLabel::Control, k).unwrap();
            let d = reindex_tokens(&raw, ClassLabel::Depressed, k).unwrap();
            assert!(nd.iter().all(|t| (1..=k).contains(t)));
            assert!(d.iter().all(|t| (k + 1..=2 * k).contains(t)));
            assert!(nd.iter().all(|t| !d.contains(t)));
        }
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse(&[3, 3, 7, 7, 7, 3]), vec![3, 7, 3]);
        assert_eq!(collapse(&[]), Vec::<usize>::new());
    }

    #[test]
    fn shift_then_collapse_equals_collapse_then_shift() {
        // Re-indexing is injective per class, so the two orders agree.
        let raw = [0usize, 0, 1, 2, 2, 2, 0, 4, 4];
        for label in [ClassLabel::Control, ClassLabel::Depressed] {
            let a = collapse(&reindex_tokens(&raw, label, 5).unwrap());
            let b = reindex_tokens(&collapse(&raw), label, 5).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn token_sequence_invariants() {
        assert!(TokenSequence::new(vec![1, 1], 5).is_err());
        assert!(TokenSequence::new(vec![0, 1], 5).is_err());
        let err = TokenSequence::new(vec![1, 2, 3], 2).unwrap_err();
        assert!(matches!(
            err,
            crate::error::Error::CtcInfeasible {
                input_len: 2,
                target_len: 3
            }
        ));
        let ts = TokenSequence::new(vec![1, 2, 1], 5).unwrap();
        assert_eq!(ts.target_length(), 3);
        assert_eq!(ts.input_length(), 5);
        assert!(ts.with_input_length(2).is_err());
    }

    #[test]
    fn build_targets_on_constant_features_gives_one_token() {
        let cb = Codebook {
            k: 3,
            dim: 2,
            centroids: vec![0.0, 0.0, 5.0, 5.0, -5.0, 5.0],
            inertia: 0.0,
            fit: None,
        };
        let features = Mat::new(6, 2, [5.1, 4.9].repeat(6)).unwrap();
        let nd = build_targets(&features, &cb, ClassLabel::Control).unwrap();
        assert_eq!(nd.tokens(), &[2]);
        assert_eq!(nd.input_length(), 6);
        let d = build_targets(&features, &cb, ClassLabel::Depressed).unwrap();
        assert_eq!(d.tokens(), &[5]);
        // Same features, different class: token sets disjoint.
        assert!(nd.tokens().iter().all(|t| !d.tokens().contains(t)));
    }

    proptest! {
        #[test]
        fn collapse_is_idempotent(tokens in proptest::collection::vec(0usize..6, 0..64)) {
            let once = collapse(&tokens);
            prop_assert_eq!(collapse(&once), once.clone());
            prop_assert!(once.windows(2).all(|w| w[0] != w[1]));
        }
    }
}
