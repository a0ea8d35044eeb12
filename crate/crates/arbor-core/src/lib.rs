//! Tree-structured attention with hierarchical accumulation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] — dense row-major tensors with a tape-based reverse-mode
//!   autodiff engine, a finite-difference gradient checker, analytic
//!   scalar-op counters, and a binary parameter-container format.
//! * [`treebank`] — bracketed parse trees, the flat set-of-members tree
//!   encoding consumed by the kernels, structural validation, and rewrites
//!   (subword splitting, forest joining, normalisation).
//! * [`accum`] — the hierarchical-accumulation kernels (interpolation,
//!   upward cumulative averaging, weighted aggregation, hierarchical
//!   embeddings) plus brute-force set-enumeration oracles for each.
//! * [`attention`] — affinity blocks, the subtree visibility mask, the
//!   encoder tree self-attention layer, decoder tree cross-attention, and
//!   the shared post-attention feed-forward wrapper.
//! * [`model`] — configuration, vocabularies, parameter initialisation,
//!   classification and sequence-to-sequence assemblies, parameter counting,
//!   and checkpointing.
//! * [`train`] — Adam with warmup/inverse-sqrt scheduling, the training and
//!   evaluation loops, a synthetic tree-classification task, model-level
//!   gradient checks, attention-mass statistics, and scaling benchmarks.

pub mod accum;
pub mod attention;
pub mod model;
pub mod tensor;
pub mod train;
pub mod treebank;
