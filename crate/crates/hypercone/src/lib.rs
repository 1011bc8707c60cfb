//! Desk-scale toolkit for hierarchical representation learning in the
//! Lorentz model of hyperbolic space.
//!
//! The crate embeds synthetic concept hierarchies as entailment cones on the
//! hyperboloid and evaluates how well the learned geometry encodes the
//! hierarchy:
//!
//! - [`geometry`] — Lorentz-model kernels: lifting, distances, exp/log maps
//!   at the origin, exterior angles, cone apertures, Poincaré conversion.
//! - [`losses`] — contrastive, entailment (hinge and Huber-weighted
//!   adaptive variants) and norm-regularizer objectives with analytic
//!   gradients for every embedding parameter and learnable scalar.
//! - [`hierarchy`] — seeded synthetic concept trees with two aligned
//!   feature modalities per node, plus the derived training pairs.
//! - [`trainer`] — deterministic optimization loop (adaptive moments,
//!   decoupled weight decay, warmup + cosine schedule, log-space scalars
//!   with hard clamps), checkpointing and embedding export.
//! - [`store`] — the persisted embedding collection shared by trainer,
//!   evaluation and projection (text and binary formats).
//! - [`evaluation`] — entailment-probability scoring and collection,
//!   AUC-ROC / average precision / Kendall tau / recall@k, banded
//!   retrieval, retrieval degree, bidirectional consistency, negative-pool
//!   selection.
//! - [`projection`] — 2-D exports (Poincaré axes, tangent-space PCA) and
//!   norm-distribution histograms for plotting.
//! - [`gradcheck`] — finite-difference verification harness for the
//!   analytic gradients.
//! - [`config`] / [`cli`] — run configuration files and the `hypercone`
//!   command-line entry point.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod hierarchy;
pub mod losses;
pub mod projection;
pub mod store;
pub mod trainer;

pub use error::{Error, Result};
