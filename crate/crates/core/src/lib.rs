//! Kernel-based training set selection.
//!
//! The crate builds Gram matrices for a few standard kernel families,
//! scores subsets by how well they span the rest of the data in the
//! induced feature space, runs several selection strategies (random,
//! facility location, trace-error greedy and fixed-point variants),
//! and evaluates selections with classification error bounds and
//! k-nearest-neighbour sweeps.

pub mod approx;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod linalg;
pub mod select;

pub use approx::{bound_report, power_profile, ted_half, ted_objective, BoundReport, PowerProfile};
pub use data::{Dataset, Labels, SelectionMask};
pub use error::{Error, Result};
pub use kernel::{gram, gram_cross, GramMatrix, KernelFamily, KernelSpec, SpectralModel};

pub mod cli;
