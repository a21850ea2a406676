//! The nonlinear flow `i ∂ψ/∂t = K(ψ) ψ` with
//! `K(ψ) = H + w O² − 2 w ⟨ψ|O|ψ⟩ O` and `O = Σ_i O_i`.
//!
//! With `ħ = 1` and `w = 0` this is the ordinary Schrödinger equation. The
//! energy `⟨H⟩ + w (⟨O²⟩ − ⟨O⟩²)` and the norm are both invariants.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WfeError};
use crate::linalg::{all_finite, inner, norm_sqr, LinearOp, C64, I};
use crate::observables::{dispersion_of, ObservableReport};
use crate::state::{FamilyOperator, OperatorFamily, Wavefunction};

/// The WFE penalty `w (Σ_i O_i)` over `n_sites` sites.
#[derive(Clone)]
pub struct WfeTerm {
    pub w: f64,
    pub op: Arc<dyn LinearOp>,
    pub n_sites: usize,
}

/// `E = E_QM + E_WFE`.
#[derive(Clone)]
pub struct ModelSpec {
    pub hamiltonian: Arc<dyn LinearOp>,
    pub wfe: Option<WfeTerm>,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim())
            .field("w", &self.w())
            .finish()
    }
}

impl ModelSpec {
    pub fn linear(hamiltonian: Arc<dyn LinearOp>) -> Self {
        Self { hamiltonian, wfe: None }
    }

    /// Linear part plus `w` times the family realized on `state`'s space.
    pub fn with_family<W: FamilyOperator>(
        hamiltonian: Arc<dyn LinearOp>,
        w: f64,
        family: &OperatorFamily,
        state: &W,
    ) -> Result<Self> {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(WfeError::param("w", "must be finite and non-negative"));
        }
        let op = state.family_operator(family)?;
        if op.dim() != hamiltonian.dim() {
            return Err(WfeError::ShapeMismatch(format!(
                "family dimension {} vs hamiltonian dimension {}",
                op.dim(),
                hamiltonian.dim()
            )));
        }
        Ok(Self {
            hamiltonian,
            wfe: Some(WfeTerm {
                w,
                op,
                n_sites: family.n_sites(),
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn w(&self) -> f64 {
        self.wfe.as_ref().map_or(0.0, |t| t.w)
    }

    /// Family dispersion `D`, zero without a WFE term.
    pub fn dispersion(&self, psi: &[C64], measure: f64) -> f64 {
        self.wfe
            .as_ref()
            .map_or(0.0, |t| dispersion_of(t.op.as_ref(), t.n_sites, psi, measure))
    }

    fn mu(&self, psi: &[C64], measure: f64) -> f64 {
        match &self.wfe {
            Some(t) if t.w != 0.0 => t.op.expectation(psi, measure),
            _ => 0.0,
        }
    }

    /// `K(μ) y` for a given `μ`.
    fn apply_k(&self, y: &[C64], mu: f64, out: &mut [C64]) {
        self.hamiltonian.apply(y, out);
        if let Some(t) = &self.wfe {
            if t.w != 0.0 {
                add_wfe(t, y, mu, out);
            }
        }
    }

    /// The energy functional on unnormalized amplitudes.
    pub fn energy(&self, psi: &[C64], measure: f64) -> f64 {
        let mut e = self.hamiltonian.expectation(psi, measure);
        if let Some(t) = &self.wfe {
            let o = t.op.apply_vec(psi);
            let mu = inner(psi, &o, measure).re;
            e += t.w * (norm_sqr(&o, measure) - mu * mu);
        }
        e
    }
}

fn add_wfe(t: &WfeTerm, y: &[C64], mu: f64, out: &mut [C64]) {
    if let Some(d) = t.op.is_diagonal().then(|| t.op.diagonal()).flatten() {
        for ((o, x), v) in out.iter_mut().zip(y).zip(&d) {
            *o += x * (t.w * (v * v - 2.0 * mu * v));
        }
    } else {
        let o1 = t.op.apply_vec(y);
        let o2 = t.op.apply_vec(&o1);
        for ((o, a), b) in out.iter_mut().zip(&o1).zip(&o2) {
            *o += (b - a * (2.0 * mu)) * t.w;
        }
    }
}

/// `{w O² − 2 w ⟨ψ|O|ψ⟩ O} ψ`.
pub fn wfe_gradient<W: Wavefunction + FamilyOperator>(state: &W, w: f64, family: &OperatorFamily) -> Result<W> {
    if !(w >= 0.0) {
        return Err(WfeError::param("w", "must be non-negative"));
    }
    let op = state.family_operator(family)?;
    let t = WfeTerm {
        w,
        op,
        n_sites: family.n_sites(),
    };
    let mu = t.op.expectation(state.amplitudes(), state.measure());
    let mut out = state.clone();
    out.amplitudes_mut().iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
    if w != 0.0 {
        add_wfe(&t, state.amplitudes(), mu, out.amplitudes_mut());
    }
    Ok(out)
}

/// `∂ψ/∂t = −i (H ψ + WFE gradient)`.
pub fn rhs<W: Wavefunction>(state: &W, model: &ModelSpec) -> Result<W> {
    check_dim(state, model)?;
    let mut out = state.clone();
    let mu = model.mu(state.amplitudes(), state.measure());
    model.apply_k(state.amplitudes(), mu, out.amplitudes_mut());
    out.amplitudes_mut().iter_mut().for_each(|z| *z *= -I);
    Ok(out)
}

fn check_dim<W: Wavefunction>(state: &W, model: &ModelSpec) -> Result<()> {
    if state.amplitudes().len() != model.dim() {
        return Err(WfeError::ShapeMismatch(format!(
            "state of length {} for a model of dimension {}",
            state.amplitudes().len(),
            model.dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Midpoint rule with the WFE mean averaged over the step endpoints;
    /// conserves norm and energy exactly up to the stage tolerance.
    #[default]
    ConservativeMidpoint,
    /// The symplectic implicit midpoint rule.
    ImplicitMidpoint,
    /// Explicit second-order method on a doubled phase space, with the
    /// copies bound by a rotation of frequency `omega`.
    ExtendedPhaseSpace { omega: f64 },
    /// Classical Runge-Kutta, for order studies only.
    Rk4,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ConservativeMidpoint => "conservative_midpoint",
            Method::ImplicitMidpoint => "implicit_midpoint",
            Method::ExtendedPhaseSpace { .. } => "extended_phase_space",
            Method::Rk4 => "rk4",
        }
    }
}

pub const STAGE_TOL: f64 = 1e-12;
pub const STAGE_MAX_ITER: usize = 50;
/// Past [`STAGE_TOL`], iteration continues down to this roundoff floor while
/// the residual still contracts, so equivalent runs stay in step.
const STAGE_FLOOR: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveParams {
    pub t_final: f64,
    pub dt: f64,
    #[serde(default)]
    pub method: Method,
    pub record_every: usize,
}

impl EvolveParams {
    pub fn new(t_final: f64, dt: f64, method: Method, record_every: usize) -> Self {
        Self {
            t_final,
            dt,
            method,
            record_every,
        }
    }

    /// Number of steps and the step that lands exactly on `t_final`.
    pub fn steps(&self) -> Result<(usize, f64)> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(WfeError::param("dt", "must be positive"));
        }
        if !(self.t_final >= self.dt * (1.0 - 1e-9)) || !self.t_final.is_finite() {
            return Err(WfeError::param("t_final", "must be at least dt"));
        }
        if self.record_every == 0 {
            return Err(WfeError::param("record_every", "must be positive"));
        }
        if let Method::ExtendedPhaseSpace { omega } = self.method {
            if !(omega > 0.0) {
                return Err(WfeError::param("omega", "must be positive"));
            }
        }
        let n = (self.t_final / self.dt).round().max(1.0) as usize;
        Ok((n, self.t_final / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub reports: Vec<ObservableReport>,
    pub method: String,
    pub dt: f64,
    pub steps: usize,
    /// Largest stage-solver iteration count over the run (implicit methods).
    pub max_iterations: usize,
    /// Largest converged stage residual over the run.
    pub max_residual: f64,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &ObservableReport {
        self.reports.last().expect("trajectory has at least the initial sample")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if let Some(r) = self.reports.first() {
            s.push_str(&r.csv_header());
            s.push('\n');
        }
        for r in &self.reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

pub struct Evolution<W> {
    pub record: TrajectoryRecord,
    pub state: W,
}

/// Single-step integrator on raw amplitudes.
pub struct Propagator<'a> {
    model: &'a ModelSpec,
    measure: f64,
    dt: f64,
    method: Method,
    h_diag: Option<Vec<f64>>,
    o_diag: Option<Vec<f64>>,
    mirror: Vec<C64>,
    pub max_iterations: usize,
    pub max_residual: f64,
}

impl<'a> Propagator<'a> {
    pub fn new(model: &'a ModelSpec, measure: f64, dt: f64, method: Method, psi0: &[C64]) -> Self {
        let o_diag = model
            .wfe
            .as_ref()
            .filter(|t| t.op.is_diagonal() && t.w != 0.0)
            .and_then(|t| t.op.diagonal());
        Self {
            model,
            measure,
            dt,
            method,
            h_diag: model.hamiltonian.diagonal(),
            o_diag,
            mirror: psi0.to_vec(),
            max_iterations: 0,
            max_residual: 0.0,
        }
    }

    /// Diagonal of `K(μ)` used to precondition the stage iteration.
    fn split_diagonal(&self, mu: f64, out: &mut [f64]) {
        match &self.h_diag {
            Some(h) => out.copy_from_slice(h),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
        if let (Some(o), Some(t)) = (&self.o_diag, &self.model.wfe) {
            for (d, v) in out.iter_mut().zip(o) {
                *d += t.w * (v * v - 2.0 * mu * v);
            }
        }
    }

    pub fn step(&mut self, psi: &mut [C64], t: f64) -> Result<()> {
        match self.method {
            Method::ConservativeMidpoint => self.midpoint(psi, t, true),
            Method::ImplicitMidpoint => self.midpoint(psi, t, false),
            Method::ExtendedPhaseSpace { omega } => {
                self.extended(psi, omega);
                Ok(())
            }
            Method::Rk4 => {
                self.rk4(psi);
                Ok(())
            }
        }?;
        if !all_finite(psi) {
            return Err(WfeError::NonFinite { time: t + self.dt });
        }
        Ok(())
    }

    /// Solves `y = ψ − i (dt/2) K(μ) y` by a Jacobi-split fixed point, where
    /// `μ = μ(y)` (symplectic) or the endpoint average `(μ(ψ) + μ(2y − ψ))/2`.
    fn midpoint(&mut self, psi: &mut [C64], t: f64, averaged: bool) -> Result<()> {
        let n = psi.len();
        let h = 0.5 * self.dt;
        let mu0 = self.model.mu(psi, self.measure);
        let mut ky = vec![C64::new(0.0, 0.0); n];
        let mut diag = vec![0.0; n];
        let mut end = vec![C64::new(0.0, 0.0); n];

        // Explicit half step as the starting guess.
        self.model.apply_k(psi, mu0, &mut ky);
        let mut y: Vec<C64> = psi.iter().zip(&ky).map(|(p, k)| p - I * h * k).collect();
        let mut last_res = f64::INFINITY;
        let mut ratio = 0.0;
        for it in 1..=STAGE_MAX_ITER {
            let mu = if averaged {
                for ((e, yv), p) in end.iter_mut().zip(&y).zip(psi.iter()) {
                    *e = 2.0 * yv - p;
                }
                0.5 * (mu0 + self.model.mu(&end, self.measure))
            } else {
                self.model.mu(&y, self.measure)
            };
            self.model.apply_k(&y, mu, &mut ky);
            self.split_diagonal(mu, &mut diag);
            let mut res = 0.0f64;
            let mut scale = 0.0f64;
            for i in 0..n {
                let off = ky[i] - y[i] * diag[i];
                let next = (psi[i] - I * h * off) / (C64::new(1.0, 0.0) + I * h * diag[i]);
                res = res.max((next - y[i]).norm());
                scale = scale.max(next.norm());
                y[i] = next;
            }
            let res = if scale > 0.0 { res / scale } else { res };
            if it > 1 {
                ratio = res / last_res;
            }
            let settled = res <= STAGE_FLOOR || (it > 1 && res > 0.5 * last_res) || it == STAGE_MAX_ITER;
            if res <= STAGE_TOL && settled {
                self.max_iterations = self.max_iterations.max(it);
                self.max_residual = self.max_residual.max(res);
                for (p, yv) in psi.iter_mut().zip(&y) {
                    *p = 2.0 * yv - *p;
                }
                return Ok(());
            }
            if !res.is_finite() || (it >= 4 && ratio > 1.0 && res > 1e-8) {
                return Err(WfeError::StageDivergence {
                    time: t,
                    iterations: it,
                    residual: res,
                    contraction: ratio,
                });
            }
            last_res = res;
        }
        Err(WfeError::StageDivergence {
            time: t,
            iterations: STAGE_MAX_ITER,
            residual: last_res,
            contraction: ratio,
        })
    }

    fn force(&self, z: &[C64], out: &mut [C64]) {
        let mu = self.model.mu(z, self.measure);
        self.model.apply_k(z, mu, out);
    }

    fn extended(&mut self, psi: &mut [C64], omega: f64) {
        let d = self.dt;
        let n = psi.len();
        let mut g = vec![C64::new(0.0, 0.0); n];
        let mut z = vec![C64::new(0.0, 0.0); n];
        let phi = &mut self.mirror;
        let model = self.model;
        let measure = self.measure;
        let force = |z: &[C64], out: &mut [C64]| {
            let mu = model.mu(z, measure);
            model.apply_k(z, mu, out);
        };
        // A: evaluate at (q, y); kick p and drift x.
        let mut flow_a = |psi: &mut [C64], phi: &mut [C64], s: f64| {
            for i in 0..n {
                z[i] = C64::new(psi[i].re, phi[i].im);
            }
            force(&z, &mut g);
            for i in 0..n {
                psi[i].im -= s * g[i].re;
                phi[i].re += s * g[i].im;
            }
        };
        flow_a(psi, phi, d / 2.0);
        // B: evaluate at (x, p); drift q and kick y.
        let mut zb = vec![C64::new(0.0, 0.0); n];
        let mut gb = vec![C64::new(0.0, 0.0); n];
        let mut flow_b = |psi: &mut [C64], phi: &mut [C64], s: f64| {
            for i in 0..n {
                zb[i] = C64::new(phi[i].re, psi[i].im);
            }
            force(&zb, &mut gb);
            for i in 0..n {
                psi[i].re += s * gb[i].im;
                phi[i].im -= s * gb[i].re;
            }
        };
        flow_b(psi, phi, d / 2.0);
        let (sn, cs) = (2.0 * omega * d).sin_cos();
        for i in 0..n {
            let (q, p, x, y) = (psi[i].re, psi[i].im, phi[i].re, phi[i].im);
            let (dq, dp) = (q - x, p - y);
            let rq = cs * dq + sn * dp;
            let rp = -sn * dq + cs * dp;
            psi[i] = C64::new(0.5 * (q + x + rq), 0.5 * (p + y + rp));
            phi[i] = C64::new(0.5 * (q + x - rq), 0.5 * (p + y - rp));
        }
        flow_b(psi, phi, d / 2.0);
        flow_a(psi, phi, d / 2.0);
    }

    fn rk4(&mut self, psi: &mut [C64]) {
        let n = psi.len();
        let d = self.dt;
        let mut k = [
            vec![C64::new(0.0, 0.0); n],
            vec![C64::new(0.0, 0.0); n],
            vec![C64::new(0.0, 0.0); n],
            vec![C64::new(0.0, 0.0); n],
        ];
        let mut tmp = vec![C64::new(0.0, 0.0); n];
        let weights = [0.5, 0.5, 1.0];
        self.force(psi, &mut k[0]);
        for s in 0..3 {
            let (done, next) = k.split_at_mut(s + 1);
            for i in 0..n {
                tmp[i] = psi[i] - I * (d * weights[s]) * done[s][i];
            }
            self.force(&tmp, &mut next[0]);
        }
        for i in 0..n {
            psi[i] -= I * (d / 6.0) * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }
}

/// Integrates and records; on a numerical failure the partial trajectory is
/// returned alongside the error.
pub fn evolve_partial<W, F>(
    state0: &W,
    model: &ModelSpec,
    params: &EvolveParams,
    probe: F,
) -> (Evolution<W>, Option<WfeError>)
where
    W: Wavefunction,
    F: Fn(f64, &W) -> Result<ObservableReport>,
{
    let mut record = TrajectoryRecord {
        times: Vec::new(),
        reports: Vec::new(),
        method: params.method.name().to_string(),
        dt: params.dt,
        steps: 0,
        max_iterations: 0,
        max_residual: 0.0,
    };
    let fail = |record, state: W, e| (Evolution { record, state }, Some(e));
    let (n, dt) = match params.steps().and_then(|s| check_dim(state0, model).map(|_| s)) {
        Ok(v) => v,
        Err(e) => return fail(record, state0.clone(), e),
    };
    record.dt = dt;
    let mut state = state0.clone();
    match probe(0.0, &state) {
        Ok(r) => {
            record.times.push(0.0);
            record.reports.push(r);
        }
        Err(e) => return fail(record, state, e),
    }
    let mut prop = Propagator::new(model, state.measure(), dt, params.method, state.amplitudes());
    for k in 0..n {
        let t = k as f64 * dt;
        if let Err(e) = prop.step(state.amplitudes_mut(), t) {
            record.max_iterations = prop.max_iterations;
            record.max_residual = prop.max_residual;
            return fail(record, state, e);
        }
        record.steps = k + 1;
        if (k + 1) % params.record_every == 0 || k + 1 == n {
            let t = (k + 1) as f64 * dt;
            match probe(t, &state) {
                Ok(r) => {
                    record.times.push(t);
                    record.reports.push(r);
                }
                Err(e) => return fail(record, state, e),
            }
        }
    }
    record.max_iterations = prop.max_iterations;
    record.max_residual = prop.max_residual;
    (Evolution { record, state }, None)
}

pub fn evolve<W, F>(state0: &W, model: &ModelSpec, params: &EvolveParams, probe: F) -> Result<Evolution<W>>
where
    W: Wavefunction,
    F: Fn(f64, &W) -> Result<ObservableReport>,
{
    match evolve_partial(state0, model, params, probe) {
        (ev, None) => Ok(ev),
        (_, Some(e)) => Err(e),
    }
}

/// Minimal report (norm, energies, dispersion) for any representation.
pub fn basic_report<W: Wavefunction>(t: f64, state: &W, model: &ModelSpec) -> Result<ObservableReport> {
    let e = crate::observables::energies(state, model)?;
    Ok(ObservableReport {
        t,
        norm: state.norm(),
        e_qm: e.qm,
        e_wfe: e.wfe,
        e_total: e.total,
        m: None,
        d: model.dispersion(state.amplitudes(), state.measure()),
        p_left: None,
        p_right: None,
        com: Vec::new(),
        momentum: Vec::new(),
        readout_mean: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySeries {
    pub times: Vec<f64>,
    /// L² distance between the readout distributions of the two runs.
    pub distribution_distance: Vec<f64>,
    /// `⟨S⟩_a − ⟨S⟩_b`.
    pub delta_mean: Vec<f64>,
    pub final_mean_a: f64,
    pub final_mean_b: f64,
}

/// Readout distribution over the distinct values of `readout`.
pub fn readout_distribution(psi: &[C64], readout: &[f64]) -> BTreeMap<i64, f64> {
    let mut m = BTreeMap::new();
    for (z, s) in psi.iter().zip(readout) {
        *m.entry((s * 2.0).round() as i64).or_insert(0.0) += z.norm_sqr();
    }
    m
}

/// Runs two initial states side by side and tracks how their readout
/// statistics separate.
pub fn sensitivity_run<W: Wavefunction>(
    state_a: &W,
    state_b: &W,
    model: &ModelSpec,
    params: &EvolveParams,
    readout: &[f64],
) -> Result<SensitivitySeries> {
    if !state_a.shape_matches(state_b) {
        return Err(WfeError::ShapeMismatch(format!(
            "{} vs {}",
            state_a.shape_string(),
            state_b.shape_string()
        )));
    }
    if readout.len() != state_a.amplitudes().len() {
        return Err(WfeError::ShapeMismatch("readout diagonal length".into()));
    }
    let probe = |t: f64, s: &W| -> Result<ObservableReport> {
        let mut r = basic_report(t, s, model)?;
        let a = s.amplitudes();
        let n2 = norm_sqr(a, 1.0);
        r.readout_mean = Some(a.iter().zip(readout).map(|(z, v)| z.norm_sqr() * v).sum::<f64>() / n2);
        Ok(r)
    };
    let collect = |s0: &W| -> Result<(Vec<f64>, Vec<BTreeMap<i64, f64>>, Vec<f64>)> {
        let dists = std::sync::Mutex::new(Vec::new());
        let ev = evolve(s0, model, params, |t, s| {
            dists
                .lock()
                .expect("poisoned")
                .push(readout_distribution(s.amplitudes(), readout));
            probe(t, s)
        })?;
        let means = ev
            .record
            .reports
            .iter()
            .map(|r| r.readout_mean.unwrap_or(0.0))
            .collect();
        Ok((ev.record.times, dists.into_inner().expect("poisoned"), means))
    };
    let (ra, rb) = rayon::join(|| collect(state_a), || collect(state_b));
    let (times, da, ma) = ra?;
    let (_, db, mb) = rb?;
    let distribution_distance = da
        .iter()
        .zip(&db)
        .map(|(a, b)| {
            let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
            keys.into_iter()
                .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let delta_mean = ma.iter().zip(&mb).map(|(a, b)| a - b).collect();
    Ok(SensitivitySeries {
        times,
        distribution_distance,
        delta_mean,
        final_mean_a: *ma.last().unwrap_or(&0.0),
        final_mean_b: *mb.last().unwrap_or(&0.0),
    })
}
