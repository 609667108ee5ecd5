//! Semi-federated learning over a shared wireless uplink.
//!
//! Devices stream normalized local gradients that superpose in the air into
//! one aggregate while simultaneously uploading mixed data samples through
//! non-orthogonal multiple access; the base station decodes the data streams
//! individually, recovers the gradient aggregate, and fuses both into a single
//! model update.  This crate implements that pipeline end to end:
//!
//! - [`numerics`] — dense complex Hermitian linear-algebra kernels sized for
//!   antenna arrays (Cholesky solve, dominant eigenvalue),
//! - [`channel`] — Rician multi-antenna uplink with distance path loss,
//! - [`transceiver`] — the joint signal model: gradient normalization, SINR,
//!   aggregation error, de-normalized over-the-air aggregation,
//! - [`optimizer`] — the two-stage transceiver design (aggregation beamformer,
//!   convex power allocation, surrogate-minimization decoding combiners) plus
//!   classical baselines,
//! - [`convergence`] — closed-form optimality-gap recursions, their limits,
//!   and per-round gradient-error bounds,
//! - [`learning`] — gradient-descent training driven through the simulated
//!   uplink (synthetic quadratic task and an image-classification MLP),
//! - [`data`] — IDX image dataset loader,
//! - [`harness`] — reproducible experiment drivers behind a small CLI.
//!
//! Every random quantity is derived from explicit seeds (see [`seeding`]);
//! identical configurations produce byte-identical artifacts.

pub mod channel;
pub mod convergence;
pub mod data;
pub mod harness;
pub mod learning;
pub mod numerics;
pub mod optimizer;
pub mod seeding;
pub mod transceiver;
