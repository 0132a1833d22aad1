//! Symplectic tomograms and their classical propagators for quadratic systems
//! under continuous position measurement.
//!
//! The crate computes tomograms of position-space quantum states, builds the
//! structured (affine map + Gaussian smoothing) tomogram propagators of a
//! driven oscillator and a free particle measured spectrally in position, and
//! cross-checks every closed form against brute-force numeric oracles
//! (discrete Gaussian path integrals, numeric propagator integrals, a
//! finite-difference Fokker-Planck residual and numeric entropies).
//!
//! Grid sweeps run on rayon when the default `parallel` feature is enabled;
//! disable default features for a fully sequential build.

pub mod analysis;
pub mod dynamics;
pub mod numerics;
pub mod oracle;
mod parallel;
pub mod propagators;
pub mod scenario;
pub mod tomography;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),
    #[error("grid does not cover the integrand support: {0}")]
    Coverage(String),
    #[error("grid too coarse: {0}")]
    Resolution(String),
    #[error("caustic: sin(omega T) vanishes, boundary trajectory is not unique")]
    Caustic,
    #[error("resonance: mode frequency Omega_n coincides with omega")]
    Resonance,
    #[error("mode-sum truncation tail {tail:.3e} exceeds budget {budget:.3e}")]
    Truncation { tail: f64, budget: f64 },
    #[error("reconstruction tolerance exceeded: {0}")]
    Reconstruction(String),
}

pub type Result<T> = std::result::Result<T, Error>;
