//! Quadratic functionals of a state: dispersion, magnetization, centre of
//! mass, energies, well occupations and the force-gap diagnostic.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::ModelSpec;
use crate::error::{Result, WfeError};
use crate::linalg::{inner, norm_sqr, LinearOp, C64};
use crate::spectral::{ExternalPotential, GridOps, GridTerm};
use crate::state::{FamilyOperator, GridState, OperatorFamily, SpinState, SymmetricState, Wavefunction};

/// Variance of `(1/n_sites) O` in the normalized direction of `psi`.
pub fn dispersion_of(op: &dyn LinearOp, n_sites: usize, psi: &[C64], measure: f64) -> f64 {
    let n2 = norm_sqr(psi, measure);
    if n2 == 0.0 {
        return 0.0;
    }
    let o = op.apply_vec(psi);
    let mean = inner(psi, &o, measure).re / n2;
    let sq = norm_sqr(&o, measure) / n2;
    (sq - mean * mean) / (n_sites * n_sites) as f64
}

pub fn dispersion<W: Wavefunction + FamilyOperator>(state: &W, family: &OperatorFamily) -> Result<f64> {
    let op = state.family_operator(family)?;
    Ok(dispersion_of(
        op.as_ref(),
        family.n_sites(),
        state.amplitudes(),
        state.measure(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinValues {
    /// `s = ±1/2`
    Half,
    /// `s = ±1`
    One,
}

impl SpinValues {
    fn factor(self) -> f64 {
        match self {
            SpinValues::Half => 1.0,
            SpinValues::One => 2.0,
        }
    }
}

/// States carrying `s_z` on every site.
pub trait SpinBearing: Wavefunction {
    fn n_spin_sites(&self) -> usize;

    /// `Σ_i s_i` (values ±1/2) per amplitude index.
    fn total_sz_diagonal(&self) -> Result<Vec<f64>>;
}

impl SpinBearing for SpinState {
    fn n_spin_sites(&self) -> usize {
        self.n_spins()
    }

    fn total_sz_diagonal(&self) -> Result<Vec<f64>> {
        let sites: Vec<usize> = (0..self.n_spins()).collect();
        Ok(SpinState::site_sum_diagonal(self.n_spins(), &sites))
    }
}

impl SpinBearing for SymmetricState {
    fn n_spin_sites(&self) -> usize {
        self.n_spins()
    }

    fn total_sz_diagonal(&self) -> Result<Vec<f64>> {
        let n = self.n_spins();
        Ok(SymmetricState::qubit_diagonal(n)
            .iter()
            .zip(SymmetricState::readout_diagonal(n))
            .map(|(a, b)| a + b)
            .collect())
    }
}

impl SpinBearing for GridState {
    fn n_spin_sites(&self) -> usize {
        self.geometry().n_particles
    }

    fn total_sz_diagonal(&self) -> Result<Vec<f64>> {
        let g = self.geometry();
        if g.spin_levels != 2 {
            return Err(WfeError::param("spin_levels", "state carries no spin"));
        }
        Ok((0..g.len())
            .map(|i| (0..g.n_particles).map(|p| g.spin_z(i, p)).sum())
            .collect())
    }
}

/// Mean per-site spin expectation `⟨Σ s_i⟩ / N`.
pub fn magnetization<W: SpinBearing>(state: &W, values: SpinValues) -> Result<f64> {
    let d = state.total_sz_diagonal()?;
    let a = state.amplitudes();
    let n2 = norm_sqr(a, state.measure());
    let s: f64 = a.iter().zip(&d).map(|(z, v)| z.norm_sqr() * v).sum::<f64>() * state.measure();
    Ok(values.factor() * s / n2 / state.n_spin_sites() as f64)
}

/// Per-axis `⟨(1/N) Σ X_i⟩` and `⟨Σ P_i⟩`.
pub fn com_and_momentum(state: &GridState) -> Result<(Vec<f64>, Vec<f64>)> {
    let ops = GridOps::new(*state.geometry())?;
    Ok(com_and_momentum_with(&ops, state))
}

pub fn com_and_momentum_with(ops: &GridOps, state: &GridState) -> (Vec<f64>, Vec<f64>) {
    let g = *state.geometry();
    let a = state.amplitudes();
    let n2 = norm_sqr(a, state.measure());
    let mut com = vec![0.0; g.dims];
    let mut mom = vec![0.0; g.dims];
    for d in 0..g.dims {
        for p in 0..g.n_particles {
            let ex = |t| inner(a, &ops.term_vec(t, a), state.measure()).re / n2;
            com[d] += ex(GridTerm::X(p, d)) / g.n_particles as f64;
            mom[d] += ex(GridTerm::P(p, d));
        }
    }
    (com, mom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    pub qm: f64,
    pub wfe: f64,
    pub total: f64,
}

/// `E_qm = ⟨ψ|H|ψ⟩`, `E_wfe = w N_f² D`.
pub fn energies_of(psi: &[C64], measure: f64, model: &ModelSpec) -> Result<Energies> {
    if psi.len() != model.dim() {
        return Err(WfeError::ShapeMismatch(format!(
            "state of length {} for a model of dimension {}",
            psi.len(),
            model.dim()
        )));
    }
    let qm = model.hamiltonian.expectation(psi, measure);
    let wfe = match &model.wfe {
        Some(t) => {
            let nf = t.n_sites as f64;
            t.w * nf * nf * dispersion_of(t.op.as_ref(), t.n_sites, psi, measure)
        }
        None => 0.0,
    };
    Ok(Energies {
        qm,
        wfe,
        total: qm + wfe,
    })
}

pub fn energies<W: Wavefunction>(state: &W, model: &ModelSpec) -> Result<Energies> {
    energies_of(state.amplitudes(), state.measure(), model)
}

/// Probability mass with readout `> split` (right) and `< −split` (left).
pub fn occupations_from_readout(psi: &[C64], readout: &[f64], split: f64) -> (f64, f64) {
    let mut left = 0.0;
    let mut right = 0.0;
    for (z, s) in psi.iter().zip(readout) {
        if *s > split {
            right += z.norm_sqr();
        } else if *s < -split {
            left += z.norm_sqr();
        }
    }
    (left, right)
}

/// `(p_left, p_right)` over the apparatus readout `S(n)`.
pub fn well_occupations(state: &SymmetricState, split: f64) -> Result<(f64, f64)> {
    let r = state.apparatus_size() as f64 / 2.0;
    if !(split > 0.0 && split < r) {
        return Err(WfeError::param("split", format!("must lie in (0, {r})")));
    }
    Ok(occupations_from_readout(
        state.amplitudes(),
        &SymmetricState::readout_diagonal(state.n_spins()),
        split,
    ))
}

/// Readout `S = Σ_{i>=1} s_i` of a full spin state (site 0 is the qubit).
pub fn spin_readout_diagonal(n_spins: usize) -> Vec<f64> {
    let sites: Vec<usize> = (1..n_spins).collect();
    SpinState::site_sum_diagonal(n_spins, &sites)
}

/// `|⟨∂v⟩ − ∂v(⟨x⟩)| / max|∂v|` for particle 0 along the first axis, the max
/// being taken over grid points where the density is non-negligible.
pub fn classical_force_gap(state: &GridState, v: &ExternalPotential) -> f64 {
    let g = *state.geometry();
    let a = state.amplitudes();
    let coords = g.coords();
    let n2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let peak = a.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    let mut mean_x = vec![0.0; g.dims];
    let mut mean_f = 0.0;
    let mut scale = 0.0f64;
    for (i, z) in a.iter().enumerate() {
        let p = z.norm_sqr();
        let x: Vec<f64> = (0..g.dims).map(|d| coords[g.axis_index(i, g.axis(0, d))]).collect();
        let f = v.force_x(&x);
        mean_f += p * f;
        for d in 0..g.dims {
            mean_x[d] += p * x[d];
        }
        if p > 1e-12 * peak {
            scale = scale.max(f.abs());
        }
    }
    if scale == 0.0 {
        return 0.0;
    }
    mean_f /= n2;
    mean_x.iter_mut().for_each(|x| *x /= n2);
    (mean_f - v.force_x(&mean_x)).abs() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroMode {
    /// `w N² R²`
    Cat,
    /// `w N R²`
    Product,
}

/// Order-of-magnitude WFE energy in SI units (`w` in J/m², `r` in m).
pub fn macro_estimate(w: f64, n: f64, r: f64, mode: MacroMode) -> Result<f64> {
    for (name, v) in [("w", w), ("N", n), ("R", r)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(WfeError::param(name, "must be positive"));
        }
    }
    Ok(match mode {
        MacroMode::Cat => w * n * n * r * r,
        MacroMode::Product => w * n * r * r,
    })
}

/// One sample of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    pub t: f64,
    pub norm: f64,
    pub e_qm: f64,
    pub e_wfe: f64,
    pub e_total: f64,
    pub m: Option<f64>,
    pub d: f64,
    pub p_left: Option<f64>,
    pub p_right: Option<f64>,
    #[serde(default)]
    pub com: Vec<f64>,
    #[serde(default)]
    pub momentum: Vec<f64>,
    /// `⟨S⟩` of the apparatus readout, spin runs only.
    pub readout_mean: Option<f64>,
}

const AXES: [&str; 2] = ["x", "y"];

impl ObservableReport {
    fn is_grid(&self) -> bool {
        !self.com.is_empty()
    }

    pub fn csv_header(&self) -> String {
        if self.is_grid() {
            let mut h = String::from("t,norm,E_qm,E_wfe,E_total");
            for a in AXES.iter().take(self.com.len()) {
                let _ = write!(h, ",com_{a}");
            }
            h.push_str(",D");
            for a in AXES.iter().take(self.momentum.len()) {
                let _ = write!(h, ",mom_{a}");
            }
            h
        } else {
            "t,norm,E_qm,E_wfe,E_total,m,D,p_left,p_right".into()
        }
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut r = format!("{},{},{},{},{}", self.t, self.norm, self.e_qm, self.e_wfe, self.e_total);
        if self.is_grid() {
            for c in &self.com {
                let _ = write!(r, ",{c}");
            }
            let _ = write!(r, ",{}", self.d);
            for p in &self.momentum {
                let _ = write!(r, ",{p}");
            }
        } else {
            let _ = write!(
                r,
                ",{},{},{},{}",
                opt(self.m),
                self.d,
                opt(self.p_left),
                opt(self.p_right)
            );
        }
        r
    }
}

/// Builds full reports for symmetric-sector toy runs.
pub fn symmetric_report(t: f64, s: &SymmetricState, model: &ModelSpec, split: f64) -> Result<ObservableReport> {
    let readout = SymmetricState::readout_diagonal(s.n_spins());
    spin_like_report(t, s, model, &readout, split)
}

/// Same observables for a full `2^N` state, site 0 being the qubit.
pub fn spin_report(t: f64, s: &SpinState, model: &ModelSpec, split: f64) -> Result<ObservableReport> {
    let readout = spin_readout_diagonal(s.n_spins());
    spin_like_report(t, s, model, &readout, split)
}

fn spin_like_report<W: SpinBearing>(
    t: f64,
    s: &W,
    model: &ModelSpec,
    readout: &[f64],
    split: f64,
) -> Result<ObservableReport> {
    let e = energies(s, model)?;
    let a = s.amplitudes();
    let (pl, pr) = occupations_from_readout(a, readout, split);
    let n2 = norm_sqr(a, 1.0);
    let mean_s = a.iter().zip(readout).map(|(z, v)| z.norm_sqr() * v).sum::<f64>() / n2;
    Ok(ObservableReport {
        t,
        norm: n2.sqrt(),
        e_qm: e.qm,
        e_wfe: e.wfe,
        e_total: e.total,
        m: Some(magnetization(s, SpinValues::Half)?),
        d: model.dispersion(a, 1.0),
        p_left: Some(pl),
        p_right: Some(pr),
        com: Vec::new(),
        momentum: Vec::new(),
        readout_mean: Some(mean_s),
    })
}

pub fn grid_report(t: f64, s: &GridState, ops: &GridOps, model: &ModelSpec) -> Result<ObservableReport> {
    let e = energies(s, model)?;
    let (com, momentum) = com_and_momentum_with(ops, s);
    Ok(ObservableReport {
        t,
        norm: s.norm(),
        e_qm: e.qm,
        e_wfe: e.wfe,
        e_total: e.total,
        m: None,
        d: model.dispersion(s.amplitudes(), s.measure()),
        p_left: None,
        p_right: None,
        com,
        momentum,
        readout_mean: None,
    })
}
