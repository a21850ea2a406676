//! Nonlinear wavefunction-energy (WFE) dynamics.
//!
//! The energy functional is `E(ψ) = ⟨ψ|H|ψ⟩ + w N_f² D(ψ)`, where `D` is the
//! variance of the site-averaged operator family `(1/N_f) Σ O_i`. The crate
//! provides the state representations, observables, structure-preserving
//! integrators for `i ∂ψ/∂t = ∂E/∂ψ*`, the spin measurement toy model,
//! commutator checks on periodic grids and Monte Carlo estimates for
//! Curie-Weiss wavefunction ensembles. Units have `ħ = 1`.

pub mod admissibility;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod observables;
pub mod seeds;
pub mod spectral;
pub mod state;
pub mod toy;

pub use error::{Result, WfeError};
pub use linalg::{LinearOp, C64};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
