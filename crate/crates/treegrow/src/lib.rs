//! Tree growth chains with uniform backward dynamics: simulation of the
//! named example chains, sampling from explicit interval-partition trees,
//! dendritic-system encodings, and numerical verification of the
//! classification invariants and the trimmed Gromov-Prokhorov scaling limit.

#![forbid(unsafe_code)]

pub mod cli;
pub mod dendritic;
pub mod error;
pub mod growth;
pub mod ip_tree;
pub mod metric;
pub mod mmspace;
pub mod plane_tree;
pub mod rng;
pub mod sampler;
pub mod scalar;

pub use cli::cli_main;
pub use error::Error;
pub use ip_tree::{IpTree, IpTreeConfig, TreePoint};
pub use mmspace::FiniteMmSpace;
pub use plane_tree::{LabelledPlaneTree, PlaneTree, Word};
pub use scalar::Scalar;

/// Metric measure spaces over the simulation scalar.
pub type MmSpace = FiniteMmSpace<f64>;
/// Metric measure spaces over exact rationals, for the oracles.
pub type MmSpaceExact = FiniteMmSpace<num::BigRational>;
/// Ultrametric matrices over the simulation scalar.
pub type UltrametricF64 = dendritic::Ultrametric<f64>;
/// Ultrametric matrices over exact rationals.
pub type UltrametricExact = dendritic::Ultrametric<num::BigRational>;
