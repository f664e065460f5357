//! High-emission state identification from imbalanced binary-labeled data.
//!
//! A small transformer encoder maps each micro-trip to a feature vector; a
//! probit-link set-valued model, fitted by maximum likelihood through an EM
//! iteration, turns features into calibrated high-emission probabilities.
//!
//! * [`setvalued_glm`]: likelihood, EM fit, convergence and consistency diagnostics.
//! * [`encoder`]: transformer encoder with hand-written backpropagation.
//! * [`pipeline`]: SVTN(k), transformer-only and raw-feature variants.
//! * [`emissions`]: OBD ingestion, specific NOx, windowing, splits, synthetic data.
//! * [`metrics`]: confusion matrices, recall/F1, repeated trials, ratio sweeps.

pub mod seed;
pub mod encoder;
pub mod metrics;
pub mod pipeline;
pub mod emissions;
pub mod setvalued_glm;
