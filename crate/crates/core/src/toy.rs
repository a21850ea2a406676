//! Qubit plus apparatus measurement model.
//!
//! `H = −(1/m) Δ + V(S) + α_c s_1 S`, with `Δ = Σ_i (flip_i − 1)` (the
//! reflecting-boundary Laplacian on two-level sites), the double well
//! `V(S) = (ΔV/R⁴)(S² − R²)²`, readout `S = Σ_{i>=2} s_i` and `R = (N−1)/2`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_partial, EvolveParams, Method, ModelSpec, TrajectoryRecord};
use crate::error::{Result, WfeError};
use crate::linalg::{LinearOp, C64};
use crate::observables::{spin_report, symmetric_report};
use crate::seeds::derive_seed;
use crate::state::{
    build_initial_toy, FamilyKind, InitialToySpec, OperatorFamily, QubitAmplitudes, SpinState, SymmetricState,
    Wavefunction,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyParams {
    pub n_spins: usize,
    pub mass: f64,
    pub delta_v: f64,
    pub alpha_c: f64,
    pub w: f64,
    pub center: f64,
    pub qubit: QubitAmplitudes,
    pub include_qubit_in_wfe: bool,
    /// Relative size of the initial-state randomization.
    pub rho: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            n_spins: 10,
            mass: 1.0,
            delta_v: 8.0,
            alpha_c: -0.8,
            w: 1.0,
            center: 1.5,
            qubit: QubitAmplitudes::balanced(),
            include_qubit_in_wfe: true,
            rho: 1e-3,
        }
    }
}

impl ToyParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_spins < 2 {
            return Err(WfeError::param(
                "n_spins",
                "need a qubit and at least one apparatus spin",
            ));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(WfeError::param("mass", "must be positive"));
        }
        if !(self.delta_v > 0.0 && self.delta_v.is_finite()) {
            return Err(WfeError::param("delta_v", "must be positive"));
        }
        if !self.alpha_c.is_finite() {
            return Err(WfeError::param("alpha_c", "must be finite"));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(WfeError::param("w", "must be non-negative"));
        }
        if !(self.center >= 0.0 && self.center <= self.r()) {
            return Err(WfeError::param("center", format!("must lie in [0, {}]", self.r())));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(WfeError::param("rho", "must be non-negative"));
        }
        self.qubit.validate()
    }

    /// `R = (N − 1)/2`.
    pub fn r(&self) -> f64 {
        (self.n_spins - 1) as f64 / 2.0
    }

    pub fn potential(&self, s: f64) -> f64 {
        let r = self.r();
        self.delta_v / r.powi(4) * (s * s - r * r).powi(2)
    }

    pub fn family(&self) -> OperatorFamily {
        let first = usize::from(!self.include_qubit_in_wfe);
        OperatorFamily {
            kind: FamilyKind::SpinZ,
            sites: (first..self.n_spins).collect(),
        }
    }

    pub fn initial_spec(&self) -> InitialToySpec {
        InitialToySpec {
            n_spins: self.n_spins,
            qubit: self.qubit,
            center: self.center,
            rho: self.rho,
        }
    }

    pub fn initial_state(&self, seed: u64) -> Result<SymmetricState> {
        build_initial_toy(&self.initial_spec(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Default readout split `R/2`.
    pub fn split(&self) -> f64 {
        self.r() / 2.0
    }
}

/// Reflecting Laplacian in the qubit ⊗ Dicke basis.
pub fn toy_laplacian(state: &SymmetricState) -> SymmetricState {
    let mut out = state.clone();
    laplacian_apply(state.n_spins(), state.amplitudes(), out.amplitudes_mut());
    out
}

fn laplacian_apply(n_spins: usize, input: &[C64], out: &mut [C64]) {
    let m = n_spins - 1;
    let mf = m as f64;
    for q in 0..2 {
        let base = q * n_spins;
        let other = (1 - q) * n_spins;
        for n in 0..=m {
            let nf = n as f64;
            let mut z = input[other + n] - input[base + n] * (mf + 1.0);
            if n > 0 {
                z += input[base + n - 1] * (nf * (mf - nf + 1.0)).sqrt();
            }
            if n < m {
                z += input[base + n + 1] * ((nf + 1.0) * (mf - nf)).sqrt();
            }
            out[base + n] = z;
        }
    }
}

/// Reduced (`2N`-dimensional) toy Hamiltonian.
#[derive(Debug, Clone)]
pub struct ToyHamiltonian {
    n_spins: usize,
    inv_mass: f64,
    diag: Vec<f64>,
}

impl ToyHamiltonian {
    pub fn new(p: &ToyParams) -> Result<Self> {
        p.validate()?;
        let n = p.n_spins;
        let q = SymmetricState::qubit_diagonal(n);
        let s = SymmetricState::readout_diagonal(n);
        let diag = q
            .iter()
            .zip(&s)
            .map(|(q, s)| n as f64 / p.mass + p.potential(*s) + p.alpha_c * q * s)
            .collect();
        Ok(Self {
            n_spins: n,
            inv_mass: 1.0 / p.mass,
            diag,
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        dense_of(self)
    }
}

impl LinearOp for ToyHamiltonian {
    fn dim(&self) -> usize {
        2 * self.n_spins
    }

    fn apply(&self, input: &[C64], out: &mut [C64]) {
        laplacian_apply(self.n_spins, input, out);
        for ((o, x), d) in out.iter_mut().zip(input).zip(&self.diag) {
            // −(1/m)Δ = −(1/m)(flips − N); the −N part lives in `diag`.
            *o = -(*o + x * self.n_spins as f64) * self.inv_mass + x * d;
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.diag.clone())
    }
}

/// The same Hamiltonian on the full `2^N` configuration space.
#[derive(Debug, Clone)]
pub struct FullToyHamiltonian {
    n_spins: usize,
    inv_mass: f64,
    diag: Vec<f64>,
}

impl FullToyHamiltonian {
    pub fn new(p: &ToyParams) -> Result<Self> {
        p.validate()?;
        if p.n_spins > 20 {
            return Err(WfeError::param("n_spins", "full-space model limited to 20 spins"));
        }
        let n = p.n_spins;
        let readout: Vec<usize> = (1..n).collect();
        let diag = (0..1usize << n)
            .map(|idx| {
                let s: f64 = readout.iter().map(|&i| SpinState::spin_z(idx, i)).sum();
                let s1 = SpinState::spin_z(idx, 0);
                n as f64 / p.mass + p.potential(s) + p.alpha_c * s1 * s
            })
            .collect();
        Ok(Self {
            n_spins: n,
            inv_mass: 1.0 / p.mass,
            diag,
        })
    }
}

impl LinearOp for FullToyHamiltonian {
    fn dim(&self) -> usize {
        1 << self.n_spins
    }

    fn apply(&self, input: &[C64], out: &mut [C64]) {
        for (idx, o) in out.iter_mut().enumerate() {
            let flips: C64 = (0..self.n_spins).map(|i| input[idx ^ (1 << i)]).sum();
            *o = -flips * self.inv_mass + input[idx] * self.diag[idx];
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.diag.clone())
    }
}

/// Dense real matrix of a real-symmetric operator, built column by column.
pub fn dense_of(op: &dyn LinearOp) -> DMatrix<f64> {
    let n = op.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![C64::new(0.0, 0.0); n];
    let mut col = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = C64::new(1.0, 0.0);
        op.apply(&e, &mut col);
        for i in 0..n {
            m[(i, j)] = col[i].re;
        }
        e[j] = C64::new(0.0, 0.0);
    }
    m
}

/// Smallest eigenvalue of a real-symmetric operator by dense diagonalization.
pub fn min_eigenvalue(op: &dyn LinearOp) -> f64 {
    dense_of(op).symmetric_eigen().eigenvalues.min()
}

pub fn reduced_model(p: &ToyParams) -> Result<(ModelSpec, SymmetricState)> {
    let h = Arc::new(ToyHamiltonian::new(p)?);
    let probe_state = SymmetricState::zeros(p.n_spins)?;
    let model = ModelSpec::with_family(h, p.w, &p.family(), &probe_state)?;
    Ok((model, probe_state))
}

pub fn full_model(p: &ToyParams) -> Result<ModelSpec> {
    let h = Arc::new(FullToyHamiltonian::new(p)?);
    let probe_state = SpinState::zeros(p.n_spins)?;
    ModelSpec::with_family(h, p.w, &p.family(), &probe_state)
}

/// Step size bounded by the fastest linear and nonlinear frequencies.
pub fn stable_dt(p: &ToyParams, dt_max: f64) -> f64 {
    let n = p.n_spins as f64;
    let h_scale = 2.0 * n / p.mass + p.delta_v + p.alpha_c.abs() * p.r() / 2.0;
    let o_max = if p.include_qubit_in_wfe { n / 2.0 } else { p.r() };
    let lam = h_scale + 3.0 * p.w * o_max * o_max;
    dt_max.min(0.3 / lam)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Classifier {
    /// Cat when both wells hold at least this much.
    pub cat_min: f64,
    /// Left/right when the dominant well holds at least this much.
    pub decided_min: f64,
    /// Split as a fraction of `R`.
    pub split_fraction: f64,
}

impl Default for Classifier {
    fn default() -> Self {
        Self {
            cat_min: 0.25,
            decided_min: 0.7,
            split_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Cat,
    Left,
    Right,
    Undecided,
}

impl Classifier {
    pub fn classify(&self, p_left: f64, p_right: f64) -> Outcome {
        if p_left.min(p_right) >= self.cat_min {
            Outcome::Cat
        } else if p_right >= self.decided_min && p_right >= p_left {
            Outcome::Right
        } else if p_left >= self.decided_min {
            Outcome::Left
        } else {
            Outcome::Undecided
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunParams {
    pub t_final: f64,
    pub dt: f64,
    pub method: Method,
    pub record_every: usize,
    /// Shrink `dt` to [`stable_dt`] when needed.
    pub auto_dt: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            t_final: 3.25,
            dt: 0.01,
            method: Method::ConservativeMidpoint,
            record_every: 25,
            auto_dt: true,
        }
    }
}

impl RunParams {
    fn evolve_params(&self, p: &ToyParams) -> EvolveParams {
        let dt = if self.auto_dt { stable_dt(p, self.dt) } else { self.dt };
        let record_every = if self.auto_dt {
            // keep the sampling interval in time units roughly fixed
            ((self.record_every as f64 * self.dt / dt).round() as usize).max(1)
        } else {
            self.record_every
        };
        EvolveParams::new(self.t_final, dt, self.method, record_every)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub record: TrajectoryRecord,
    pub outcome: Outcome,
    pub p_left: f64,
    pub p_right: f64,
    pub final_readout_mean: f64,
    pub max_e_wfe: f64,
    pub e_min: f64,
    /// Numerical failure, if the run stopped early.
    pub failure: Option<String>,
}

/// Builds the banded initial state from `seed` and evolves it.
pub fn run_measurement(p: &ToyParams, run: &RunParams, classifier: &Classifier, seed: u64) -> Result<Measurement> {
    run_measurement_with(p, run, classifier, seed, |_, _| {})
}

/// As [`run_measurement`], handing every recorded state to `visit`.
pub fn run_measurement_with<V: Fn(f64, &SymmetricState)>(
    p: &ToyParams,
    run: &RunParams,
    classifier: &Classifier,
    seed: u64,
    visit: V,
) -> Result<Measurement> {
    let (model, _) = reduced_model(p)?;
    let psi0 = p.initial_state(seed)?;
    let split = classifier.split_fraction * p.r();
    let (ev, err) = evolve_partial(&psi0, &model, &run.evolve_params(p), |t, s| {
        visit(t, s);
        symmetric_report(t, s, &model, split)
    });
    if let Some(e) = &err {
        if !e.is_numerical() {
            return Err(err.expect("checked"));
        }
    }
    let last = ev.record.last().clone();
    let (pl, pr) = (last.p_left.unwrap_or(0.0), last.p_right.unwrap_or(0.0));
    let max_e_wfe = ev.record.reports.iter().map(|r| r.e_wfe).fold(0.0, f64::max);
    Ok(Measurement {
        outcome: classifier.classify(pl, pr),
        p_left: pl,
        p_right: pr,
        final_readout_mean: last.readout_mean.unwrap_or(0.0),
        max_e_wfe,
        e_min: min_eigenvalue(model.hamiltonian.as_ref()),
        failure: err.map(|e| e.to_string()),
        record: ev.record,
    })
}

/// Runs the same initial data in the full `2^N` space.
pub fn run_full_space(p: &ToyParams, params: &EvolveParams, seed: u64) -> Result<TrajectoryRecord> {
    let model = full_model(p)?;
    let psi0 = crate::state::embed_symmetric(&p.initial_state(seed)?)?;
    let split = p.split();
    crate::dynamics::evolve(&psi0, &model, params, |t, s| spin_report(t, s, &model, split)).map(|e| e.record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepParams {
    pub n_list: Vec<usize>,
    pub w_list: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub base: ToyParams,
    pub run: RunParams,
    pub classifier: Classifier,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            n_list: vec![6, 8, 10, 12, 14],
            w_list: vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
            trials: 4,
            seed: 0,
            base: ToyParams {
                qubit: QubitAmplitudes::balanced(),
                ..ToyParams::default()
            },
            run: RunParams::default(),
            classifier: Classifier::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_spins: usize,
    pub w: f64,
    pub trials: usize,
    pub cat_fraction: f64,
    pub left_fraction: f64,
    pub right_fraction: f64,
    pub undecided_fraction: f64,
    pub mean_e_wfe_max: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// `(w, N_c)` for every `w`; `None` when the crossing is outside the scanned sizes.
    pub critical: Vec<(f64, Option<f64>)>,
    /// Fitted `d log N_c / d log w` over the resolved crossings.
    pub slope: Option<f64>,
}

impl SweepResult {
    pub fn cells_csv(&self) -> String {
        let mut s =
            String::from("N,w,trials,cat_fraction,left_fraction,right_fraction,undecided_fraction,mean_E_wfe_max\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.n_spins,
                c.w,
                c.trials,
                c.cat_fraction,
                c.left_fraction,
                c.right_fraction,
                c.undecided_fraction,
                c.mean_e_wfe_max
            ));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("w,N_c\n");
        for (w, nc) in &self.critical {
            s.push_str(&format!("{},{}\n", w, nc.map(|v| v.to_string()).unwrap_or_default()));
        }
        s
    }
}

/// Cat-formation frequencies over a grid of sizes and penalties.
pub fn cat_sweep(sp: &SweepParams) -> Result<SweepResult> {
    if sp.trials == 0 || sp.n_list.is_empty() || sp.w_list.is_empty() {
        return Err(WfeError::param("trials", "sweep needs sizes, penalties and trials"));
    }
    let mut jobs = Vec::new();
    for (ni, &n) in sp.n_list.iter().enumerate() {
        for (wi, &w) in sp.w_list.iter().enumerate() {
            let mut p = sp.base.clone();
            p.n_spins = n;
            p.w = w;
            p.center = p.center.min(p.r());
            p.validate()?;
            for trial in 0..sp.trials {
                let seed = derive_seed(sp.seed, &[n as u64, trial as u64]);
                jobs.push((ni, wi, p.clone(), seed));
            }
        }
    }
    let results: Vec<Result<Measurement>> = jobs
        .par_iter()
        .map(|(_, _, p, seed)| run_measurement(p, &sp.run, &sp.classifier, *seed))
        .collect();
    let mut cells = Vec::new();
    for (ni, &n) in sp.n_list.iter().enumerate() {
        for (wi, &w) in sp.w_list.iter().enumerate() {
            let mut counts = [0usize; 4];
            let mut e_sum = 0.0;
            let mut failures = 0;
            for (job, res) in jobs.iter().zip(&results) {
                if job.0 != ni || job.1 != wi {
                    continue;
                }
                let m = res.as_ref().map_err(|e| WfeError::param("sweep", e.to_string()))?;
                if m.failure.is_some() {
                    failures += 1;
                    continue;
                }
                counts[match m.outcome {
                    Outcome::Cat => 0,
                    Outcome::Left => 1,
                    Outcome::Right => 2,
                    Outcome::Undecided => 3,
                }] += 1;
                e_sum += m.max_e_wfe;
            }
            let done = (sp.trials - failures).max(1) as f64;
            cells.push(SweepCell {
                n_spins: n,
                w,
                trials: sp.trials,
                cat_fraction: counts[0] as f64 / done,
                left_fraction: counts[1] as f64 / done,
                right_fraction: counts[2] as f64 / done,
                undecided_fraction: counts[3] as f64 / done,
                mean_e_wfe_max: e_sum / done,
                failures,
            });
        }
    }
    let critical: Vec<(f64, Option<f64>)> = sp
        .w_list
        .iter()
        .map(|&w| {
            let col: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.w == w)
                .map(|c| (c.n_spins as f64, c.cat_fraction))
                .collect();
            (w, critical_size(&col))
        })
        .collect();
    let pts: Vec<(f64, f64)> = critical
        .iter()
        .filter_map(|&(w, nc)| nc.filter(|_| w > 0.0).map(|n| (w.ln(), n.ln())))
        .collect();
    Ok(SweepResult {
        cells,
        critical,
        slope: fit_slope(&pts),
    })
}

/// Smallest size with cat fraction below 1/2, linearly interpolated between
/// the bracketing sizes.
pub fn critical_size(col: &[(f64, f64)]) -> Option<f64> {
    let first = col.iter().position(|&(_, f)| f < 0.5)?;
    if first == 0 {
        return None;
    }
    let (n0, f0) = col[first - 1];
    let (n1, f1) = col[first];
    Some(n0 + (f0 - 0.5) / (f0 - f1) * (n1 - n0))
}

/// Least-squares slope; `None` with fewer than two points.
pub fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}
