use super::Wavefunction;
use crate::error::{Result, WfeError};
use crate::linalg::C64;

/// Wavefunction of `n_spins` two-level spins in the full configuration basis.
///
/// Bit order: bit `i` of the basis index is spin `i` (site 0 is the least
/// significant bit); a cleared bit means `s_i = +1/2`, a set bit `s_i = -1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    n_spins: usize,
    amplitudes: Vec<C64>,
}

impl SpinState {
    pub fn new(n_spins: usize, amplitudes: Vec<C64>) -> Result<Self> {
        if n_spins == 0 || n_spins > 30 {
            return Err(WfeError::param("n_spins", format!("{n_spins} outside 1..=30")));
        }
        if amplitudes.len() != 1 << n_spins {
            return Err(WfeError::ShapeMismatch(format!(
                "{} amplitudes for {} spins (expected {})",
                amplitudes.len(),
                n_spins,
                1usize << n_spins
            )));
        }
        Ok(Self { n_spins, amplitudes })
    }

    pub fn zeros(n_spins: usize) -> Result<Self> {
        Self::new(n_spins, vec![C64::new(0.0, 0.0); 1 << n_spins.min(30)])
    }

    /// The basis configuration with the given index.
    pub fn basis(n_spins: usize, index: usize) -> Result<Self> {
        let mut s = Self::zeros(n_spins)?;
        if index >= s.amplitudes.len() {
            return Err(WfeError::param("index", "basis index out of range"));
        }
        s.amplitudes[index] = C64::new(1.0, 0.0);
        Ok(s)
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `s_site` (±1/2) in configuration `index`.
    #[inline]
    pub fn spin_z(index: usize, site: usize) -> f64 {
        if (index >> site) & 1 == 0 {
            0.5
        } else {
            -0.5
        }
    }

    /// Sum of `s_i` over `sites` for every basis configuration.
    pub fn site_sum_diagonal(n_spins: usize, sites: &[usize]) -> Vec<f64> {
        (0..1usize << n_spins)
            .map(|idx| sites.iter().map(|&s| Self::spin_z(idx, s)).sum())
            .collect()
    }
}

impl Wavefunction for SpinState {
    fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    fn measure(&self) -> f64 {
        1.0
    }

    fn shape_matches(&self, other: &Self) -> bool {
        self.n_spins == other.n_spins
    }

    fn shape_string(&self) -> String {
        format!("SpinState(N={})", self.n_spins)
    }
}
