//! Representation diagnostics: linear probes, ridge readouts, spectral
//! analyses, and layer-by-layer inspection of readout activations.

pub mod linalg;
pub mod probe;
pub mod ridge;

pub use linalg::{cholesky_solve, jacobi_eigh, Mat};
pub use probe::{stratified_split, train_probe, LinearProbe, ProbeReport, Standardizer};
pub use ridge::{r_squared, ridge_fit, ridge_fit_gd, RidgeFit};

/// Errors from probing and regression routines.
#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("no rows provided")]
    EmptyInput,

    #[error("class {class} has {count} samples; at least 2 are required")]
    DegenerateClass { class: usize, count: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("linear system is singular: {detail}")]
    SingularSystem { detail: String },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}
