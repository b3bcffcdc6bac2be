//! Stiefel-manifold constrained low-rank adaptation.
//!
//! The `B` factor of a LoRA update `ΔW = s·B·A` is kept on the Stiefel
//! manifold `St(d, r) = {B : BᵀB = I_r}` and trained with an Adam variant
//! whose moments live in the ambient space, followed by tangent projection
//! and a QR retraction. `A` is trained with ordinary Adam. Euclidean Adam and
//! AdamW baselines, effective-rank and cosine-similarity diagnostics, and a
//! synthetic teacher-student harness are included.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! parsing and the command-line driver live in the `stiefel-lora` crate.
#![no_std]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::many_single_char_names)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adapters;
pub mod diagnostics;
mod error;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod optim;
mod rng;

pub use adapters::{BFactor, LoraAdapter, ScalingRule, Variant};
pub use diagnostics::{cosine_matrix, cosine_stats, effective_rank, snapshot, MetricsRecord};
pub use error::{Error, Result};
pub use harness::{
    compare, make_teacher, train, train_observed, Comparison, LrSchedule, MetricsTimeline, OptimizerKind,
    RunConfig, TeacherTask, TrainOutcome,
};
pub use linalg::{frobenius_norm, gaussian_matrix, matmul, qf, qr_positive, singular_values, sym, Matrix};
pub use manifold::{ortho_error, project_tangent, random_stiefel, retract_qr, StiefelPoint, TangentVector};
pub use optim::{adam_step, adamw_step, stiefel_adam_step, AdamHyper, AdamState};
pub use rng::RngState;
