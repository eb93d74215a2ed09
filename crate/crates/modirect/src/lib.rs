//! modirect: controlled motion-direction video synthesis, a desk-scale
//! video-language model with a motion-vector auxiliary objective, and the
//! diagnostic toolkit used to study how direction information is represented
//! inside that model.
//!
//! The crate is organized as a pipeline:
//!
//! - [`scenegen`] — seeded synthetic clip generation across four
//!   foreground/background domains, with exact ground-truth center tracks.
//! - [`qagen`] — question/answer record synthesis over generated clips and
//!   dataset manifest assembly (NDJSON).
//! - [`microvlm`] — a frozen deterministic vision encoder, a trainable
//!   projector, and a small causal-attention readout trained on
//!   multiple-choice answers; hand-written analytic gradients throughout.
//! - [`deltadirect`] — the motion-vector-prediction auxiliary objective:
//!   temporal delta features, per-pair unit motion targets, prediction heads,
//!   and the combined loss.
//! - [`probelab`] — linear probing, logit-lens readout, ridge position
//!   decoding, PCA decodability, and feature-construction comparisons.
//! - [`conceptlab`] — difference-in-means concept vectors, cross-domain
//!   geometry, and magnitude-matched activation interventions.
//!
//! Everything is deterministic given the seeds in the configs; see the README
//! for the end-to-end CLI workflow.

pub mod conceptlab;
pub mod deltadirect;
pub mod geom;
pub mod microvlm;
pub mod probelab;
pub mod qagen;
pub mod rng;
pub mod scenegen;
pub mod tensor;
