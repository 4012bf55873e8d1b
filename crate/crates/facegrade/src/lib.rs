//! Multimodal ordinal severity grading for OSAHS.
//!
//! This crate classifies obstructive sleep apnea-hypopnea severity (Normal /
//! Mild / Moderate / Severe, keyed to AHI cut-points at 5, 15 and 30 events
//! per hour) from two modalities: 3D facial landmark meshes and sentence-
//! templated clinical attributes. The two encodings are fused by cross
//! attention and classified by a small MLP trained with an ordinal
//! regression objective; landmark features pass through stochastic gates
//! (a Gumbel-softmax relaxation) so the model also reports which craniofacial
//! features it relied on.
//!
//! Everything numeric is hand-built on a small dense-matrix core with
//! reverse-mode autodiff ([`tape`]), so gradients of the full pipeline can be
//! verified against finite differences end to end.
//!
//! # Runnable examples
//!
//! The `examples/` directory is the front door; each one is self-contained
//! and runs in seconds to a few minutes on a laptop core:
//!
//! | Example | What it shows |
//! |---------|---------------|
//! | `synth_dataset` | generate a synthetic cohort with a planted craniofacial signal and write the CSV pair |
//! | `sentence_templates` | clinical-attribute sentences and their tokenization |
//! | `train_pipeline` | end-to-end training with metrics on a held-out test split |
//! | `ablation_matrix` | the full ablation table: oversampling x objective x fusion x modality |
//! | `gate_selection` | train, harden the gates, inspect recovered landmark features |
//! | `attention_inspection` | dump per-subject cross-attention weight matrices |
//! | `gradient_check` | finite-difference verification of the composed model |
//!
//! Run one with `cargo run --release -p facegrade --example train_pipeline`.
//!
//! The same capabilities are scriptable through the thin `facegrade` binary
//! (`synth`, `train`, `eval`, `ablate`, `predict`, `gradcheck` subcommands).

pub mod error;
pub mod matrix;
pub mod params;
pub mod rng;
pub mod tape;

pub use error::{Error, Result};
