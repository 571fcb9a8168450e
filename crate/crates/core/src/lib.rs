//! Adversarial scene-graph construction on a synthetic shape corpus.
//!
//! The pipeline: a deterministic per-cell feature extractor turns an image
//! into a grid of feature vectors; an attention-LSTM generator emits
//! (subject, predicate, object) triples from those features plus noise; a
//! conditional critic scores triples against the image under a Wasserstein
//! objective with gradient penalty; generated triples are merged into a
//! scene graph by comparing their attention vectors with a generalized IoU;
//! and recall@k against ground truth measures the result.

pub mod dataset;
pub mod discriminator;
pub mod eval;
pub mod features;
pub mod generator;
pub mod graphbuild;
pub mod nets;
pub mod numerics;
pub mod scenes;
pub mod training;
pub mod vocab;
