//! HAREN-CTC: hierarchical adaptive clustering of multi-layer speech
//! encoder features, cross-attention fusion, and CTC-supervised weak
//! temporal alignment for binary depression classification.
//!
//! The crate is organized bottom-up:
//!
//! - [`autograd`] / [`optim`] — a minimal dense-tensor tape with
//!   reverse-mode differentiation and Adam.
//! - [`model`] — the network: layer-assignment clustering, cross-attention
//!   fusion, classification and CTC heads.
//! - [`ctc`] — K-means pseudo-label generation and the exact CTC loss,
//!   with an enumeration oracle for testing.
//! - [`objective`] — binary focal loss and the combined objective with its
//!   CTC cadence gate.
//! - [`data`] — feature-file ingestion, manifests, cropping, weighted
//!   sampling, and the synthetic corpus generator.
//! - [`pipeline`] — training, evaluation, stratified cross-validation and
//!   metrics.
//! - [`analysis`] — centroid-usage statistics and chi-square tests.
//! - [`config`] / [`runner`] — run configuration and the command entry
//!   points used by the `haren` binary and the examples.

pub mod analysis;
pub mod autograd;
pub mod config;
pub mod ctc;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mat;
pub mod model;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod runner;

pub use error::{Error, Result};
