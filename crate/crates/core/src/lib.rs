//! Compact spectral/hp element kernel: quadrature, bases, reference and
//! physical elements, assembly, operator collections, mesh I/O and solvers.

pub mod assembly;
pub mod collections;
pub mod basis;
pub mod cli;
pub mod error;
pub mod explist;
pub mod flops;
pub mod geometry;
pub mod linalg;
pub mod meshio;
pub mod polylib;
pub mod quadrature;
pub mod session;
pub mod solvers;
pub mod stdregions;

pub use error::{Error, Result};

/// Seed for randomized utilities, from `SPECHP_SEED` (default 0).
pub fn seed() -> u64 {
    std::env::var("SPECHP_SEED")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}
