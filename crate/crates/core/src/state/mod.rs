//! Wavefunction representations and constructors for the named test states.
//!
//! Three representations are provided:
//!
//! * [`SpinState`]: `N` two-level spins in the full `2^N` configuration basis.
//! * [`SymmetricState`]: one distinguished spin (the qubit) plus `M = N - 1`
//!   spins restricted to the permutation-symmetric (Dicke) sector.
//! * [`GridState`]: one or two particles on a periodic grid in one or two
//!   dimensions, optionally carrying a spin-1/2 factor each.

mod builders;
mod family;
mod grid;
mod io;
mod spin;
mod symmetric;

pub use builders::{
    build_cat_state, build_initial_toy, build_momentum_cat, build_mqp_state, build_spin_cat, spin_product_state,
    BumpShape, GridBranches, InitialToySpec, QubitAmplitudes,
};
pub use family::{FamilyKind, FamilyOperator, OperatorFamily};
pub use grid::{GaussianSpec, GridGeometry, GridState};
pub use io::{AnyState, FORMAT_VERSION};
pub use spin::SpinState;
pub use symmetric::{embed_symmetric, project_symmetric, SymmetricState, MAX_EMBED_SPINS};

use crate::error::{Result, WfeError};
use crate::linalg::{inner, norm_sqr, C64};

/// Common surface of every amplitude-vector representation.
pub trait Wavefunction: Clone + Send + Sync {
    fn amplitudes(&self) -> &[C64];

    fn amplitudes_mut(&mut self) -> &mut [C64];

    /// Weight applied to `Σ conj(a) b` in inner products (grid cell volume).
    fn measure(&self) -> f64;

    fn shape_matches(&self, other: &Self) -> bool;

    fn shape_string(&self) -> String;

    fn norm(&self) -> f64 {
        norm_sqr(self.amplitudes(), self.measure()).sqrt()
    }

    fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes_mut().iter_mut().for_each(|z| *z /= n);
        }
    }

    /// Multiply every amplitude by `e^{i theta}`.
    fn rotate_phase(&mut self, theta: f64) {
        let p = C64::from_polar(1.0, theta);
        self.amplitudes_mut().iter_mut().for_each(|z| *z *= p);
    }
}

/// Returns `(‖a‖, <a|b>)` with the representation's measure applied.
pub fn norm_and_inner<W: Wavefunction>(a: &W, b: &W) -> Result<(f64, C64)> {
    if !a.shape_matches(b) {
        return Err(WfeError::ShapeMismatch(format!(
            "{} vs {}",
            a.shape_string(),
            b.shape_string()
        )));
    }
    Ok((a.norm(), inner(a.amplitudes(), b.amplitudes(), a.measure())))
}
