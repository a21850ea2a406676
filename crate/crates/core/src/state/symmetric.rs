use super::{SpinState, Wavefunction};
use crate::error::{Result, WfeError};
use crate::linalg::{binomial, C64};

/// Largest spin count for which the full `2^N` embedding is materialized.
pub const MAX_EMBED_SPINS: usize = 24;

/// Qubit plus `M = N - 1` apparatus spins in the permutation-symmetric sector.
///
/// Amplitudes are Dicke coefficients: entry `q * (M + 1) + n` is the
/// coefficient of `|s_1⟩ ⊗ |D_n⟩`, where `q = 0` is `s_1 = +1/2`, `q = 1` is
/// `s_1 = -1/2`, and `|D_n⟩` is the normalized symmetric apparatus state with
/// `n` spins down. The apparatus readout in that block is `S(n) = (M - 2n)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricState {
    n_spins: usize,
    amplitudes: Vec<C64>,
}

impl SymmetricState {
    pub fn new(n_spins: usize, amplitudes: Vec<C64>) -> Result<Self> {
        if n_spins == 0 {
            return Err(WfeError::param("n_spins", "must be positive"));
        }
        if amplitudes.len() != 2 * n_spins {
            return Err(WfeError::ShapeMismatch(format!(
                "{} amplitudes for symmetric N={} (expected {})",
                amplitudes.len(),
                n_spins,
                2 * n_spins
            )));
        }
        Ok(Self { n_spins, amplitudes })
    }

    pub fn zeros(n_spins: usize) -> Result<Self> {
        Self::new(n_spins, vec![C64::new(0.0, 0.0); 2 * n_spins.max(1)])
    }

    /// `|q⟩ ⊗ |D_n⟩` with `q = 0` for qubit up.
    pub fn basis(n_spins: usize, q: usize, n_down: usize) -> Result<Self> {
        let mut s = Self::zeros(n_spins)?;
        if q > 1 || n_down > s.apparatus_size() {
            return Err(WfeError::param("n_down", "basis label out of range"));
        }
        let idx = s.index(q, n_down);
        s.amplitudes[idx] = C64::new(1.0, 0.0);
        Ok(s)
    }

    /// Product `(a|+⟩ + b|−⟩) ⊗ Σ_n c_n |D_n⟩`, not renormalized.
    pub fn product(qubit: [C64; 2], apparatus: &[C64]) -> Result<Self> {
        if apparatus.is_empty() {
            return Err(WfeError::param("apparatus", "empty"));
        }
        let n_spins = apparatus.len();
        let amplitudes = qubit
            .iter()
            .flat_map(|q| apparatus.iter().map(move |c| q * c))
            .collect();
        Self::new(n_spins, amplitudes)
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    /// Number of apparatus spins `M`.
    pub fn apparatus_size(&self) -> usize {
        self.n_spins - 1
    }

    #[inline]
    pub fn index(&self, q: usize, n: usize) -> usize {
        q * self.n_spins + n
    }

    pub fn get(&self, q: usize, n: usize) -> C64 {
        self.amplitudes[self.index(q, n)]
    }

    /// `S(n)` for each amplitude index (qubit excluded).
    pub fn readout_diagonal(n_spins: usize) -> Vec<f64> {
        let m = n_spins - 1;
        (0..2)
            .flat_map(|_| (0..=m).map(move |n| (m as f64 - 2.0 * n as f64) / 2.0))
            .collect()
    }

    /// `s_1` for each amplitude index.
    pub fn qubit_diagonal(n_spins: usize) -> Vec<f64> {
        (0..2)
            .flat_map(|q| std::iter::repeat_n(if q == 0 { 0.5 } else { -0.5 }, n_spins))
            .collect()
    }

    /// Probability distribution over the apparatus readout, indexed by `n`.
    pub fn readout_distribution(&self) -> Vec<f64> {
        let m = self.apparatus_size();
        (0..=m)
            .map(|n| self.get(0, n).norm_sqr() + self.get(1, n).norm_sqr())
            .collect()
    }
}

impl Wavefunction for SymmetricState {
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
        format!("SymmetricState(N={})", self.n_spins)
    }
}

/// Spread each Dicke coefficient over its `C(M, n)` configurations.
///
/// Site 0 of the result is the qubit; sites `1..=M` are the apparatus.
pub fn embed_symmetric(s: &SymmetricState) -> Result<SpinState> {
    let n_spins = s.n_spins();
    if n_spins > MAX_EMBED_SPINS {
        return Err(WfeError::param(
            "n_spins",
            format!("{n_spins} exceeds the embedding limit {MAX_EMBED_SPINS}"),
        ));
    }
    let m = s.apparatus_size();
    let inv_sqrt: Vec<f64> = (0..=m).map(|n| 1.0 / binomial(m, n).sqrt()).collect();
    let amplitudes = (0..1usize << n_spins)
        .map(|idx| {
            let q = idx & 1;
            let n = (idx >> 1).count_ones() as usize;
            s.get(q, n) * inv_sqrt[n]
        })
        .collect();
    SpinState::new(n_spins, amplitudes)
}

/// Inverse of [`embed_symmetric`]; fails if the apparatus part of `f` is not
/// permutation symmetric to within `1e-10`.
pub fn project_symmetric(f: &SpinState) -> Result<SymmetricState> {
    const TOL: f64 = 1e-10;
    let n_spins = f.n_spins();
    let m = n_spins - 1;
    let mut sums = vec![C64::new(0.0, 0.0); 2 * n_spins];
    let amps = f.amplitudes();
    for (idx, a) in amps.iter().enumerate() {
        let q = idx & 1;
        let n = (idx >> 1).count_ones() as usize;
        sums[q * n_spins + n] += a;
    }
    // Symmetric configurations all carry c / sqrt(C(M,n)); the mean is that value.
    let means: Vec<C64> = sums
        .iter()
        .enumerate()
        .map(|(k, z)| z / binomial(m, k % n_spins))
        .collect();
    let mut asymmetry = 0.0f64;
    for (idx, a) in amps.iter().enumerate() {
        let q = idx & 1;
        let n = (idx >> 1).count_ones() as usize;
        asymmetry = asymmetry.max((a - means[q * n_spins + n]).norm());
    }
    if asymmetry > TOL {
        return Err(WfeError::NotSymmetric { asymmetry });
    }
    let amplitudes = means
        .iter()
        .enumerate()
        .map(|(k, z)| z * binomial(m, k % n_spins).sqrt())
        .collect();
    SymmetricState::new(n_spins, amplitudes)
}
