//! Spectral-aware graph augmentation for graph contrastive learning.
//!
//! The crate perturbs a selected band of eigenpairs of the normalized
//! adjacency matrix, turns the perturbation back into an edge set by
//! relative-perturbation scoring, and trains a small GCN encoder on the
//! resulting views with a feature-level CCA objective. The `theory` module
//! contains brute-force checks of the spectral statements that motivate the
//! band choice.

pub mod augment;
pub mod error;
pub mod eval;
pub mod gcl;
pub mod graph;
pub mod io;
pub mod seed;
pub mod sparse;
pub mod spectral;
pub mod theory;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use graph::Graph;
pub use spectral::{EigenSystem, SpectrumKind};
