//! Finite periodic XY chains in the fermionic NS/R sector picture.
//!
//! Spectra and sector energy gaps, an exact-diagonalization oracle with
//! case classification, quantum geometric tensor and Ricci scalar,
//! finite-size scaling fits and (γ, h) scans.

pub mod chain;
pub mod cli;
pub mod ed;
pub mod geometry;
pub mod io;
pub mod precision;
pub mod scaling;
pub mod scan;
pub mod spectrum;

pub use chain::{ChainParams, RegionLabel, Sector};
