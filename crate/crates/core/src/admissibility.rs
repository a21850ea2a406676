//! Commutator checks deciding whether a site-operator family can carry the
//! WFE penalty without disturbing the centre-of-mass equations.
//!
//! For a family `O = Σ_i O_i` the penalty adds `w (O² − 2⟨O⟩O)` to the
//! generator. Only the part of that operator that involves `O_k` can fail to
//! commute with `X_k` or `P_k`; this part is
//! `G_k = O_k² + 2 Σ_{j≠k} O_j O_k − 2 (Σ_i ⟨O_i⟩) O_k`, and the family is
//! admissible when `⟨[X_k, G_k]⟩` and `⟨[P_k, G_k]⟩` vanish.
//!
//! Grid commutators are only canonical up to discretization error, so each
//! verdict is measured against the `[X, P] = i` residual of the same state.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfeError};
use crate::linalg::{inner, norm_sqr, LinearOp, C64};
use crate::spectral::{GridOps, GridSum, GridTerm};
use crate::state::{FamilyKind, GridGeometry, GridState, OperatorFamily, Wavefunction};

/// Largest `[X, P]` residual for which a verdict is reported.
pub const CALIBRATION_LIMIT: f64 = 1e-8;

/// Verdict tolerance in units of the measured calibration residual.
pub const CALIBRATION_FACTOR: f64 = 100.0;

/// Allowed real part of a commutator expectation, relative to its scale.
pub const IMAGINARY_TOL: f64 = 1e-10;

/// Tolerance for the spin-sector terms, which vanish by factorization.
pub const SPIN_SECTOR_TOL: f64 = 1e-12;

/// Overall constant in `d⟨X_k⟩/dt = ⟨P_k⟩/m + w · ANOMALY_CONSTANT · Φ_k`,
/// where `Φ_k = ℱ_k / i`. Fitted once against simulated trajectories.
pub const ANOMALY_CONSTANT: f64 = 1.0;

/// The grid operators plus the candidate family.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    ops: Arc<GridOps>,
    candidate: FamilyKind,
}

impl OperatorSet {
    pub fn new(geometry: GridGeometry, candidate: FamilyKind) -> Result<Self> {
        Self::with_ops(GridOps::new(geometry)?, candidate)
    }

    pub fn with_ops(ops: Arc<GridOps>, candidate: FamilyKind) -> Result<Self> {
        let family = OperatorFamily::all(candidate, ops.geometry().n_particles);
        GridSum::family(ops.clone(), &family)?;
        Ok(Self { ops, candidate })
    }

    pub fn ops(&self) -> &Arc<GridOps> {
        &self.ops
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.ops.geometry()
    }

    pub fn candidate(&self) -> FamilyKind {
        self.candidate
    }

    pub fn n_particles(&self) -> usize {
        self.ops.geometry().n_particles
    }

    /// `O_p` of the candidate family.
    pub fn site(&self, p: usize) -> GridTerm {
        GridTerm::of_kind(self.candidate, p)
    }

    /// `Σ_p O_p`.
    pub fn family_sum(&self) -> GridSum {
        let family = OperatorFamily::all(self.candidate, self.n_particles());
        GridSum::family(self.ops.clone(), &family).expect("checked at construction")
    }

    fn check_state(&self, state: &GridState) -> Result<()> {
        if state.geometry() != self.geometry() {
            return Err(WfeError::ShapeMismatch(format!(
                "state {} does not live on the operator grid",
                state.shape_string()
            )));
        }
        Ok(())
    }

    fn check_site(&self, k: usize) -> Result<()> {
        if k >= self.n_particles() {
            return Err(WfeError::param("k", format!("particle {k} of {}", self.n_particles())));
        }
        Ok(())
    }

    /// Worst `‖[X, P]ψ − iψ‖/‖ψ‖` over all particles and coordinates.
    pub fn calibration(&self, state: &GridState) -> Result<f64> {
        self.check_state(state)?;
        let g = self.geometry();
        let psi = state.amplitudes();
        Ok((0..g.n_particles)
            .flat_map(|p| (0..g.dims).map(move |d| (p, d)))
            .map(|(p, d)| self.ops.calibration_residual(psi, p, d))
            .fold(0.0, f64::max))
    }

    fn calibrated(&self, state: &GridState) -> Result<f64> {
        let r = self.calibration(state)?;
        if !(r <= CALIBRATION_LIMIT) {
            return Err(WfeError::Calibration {
                residual: r,
                limit: CALIBRATION_LIMIT,
            });
        }
        Ok(r)
    }

    fn expect(&self, t: GridTerm, state: &GridState) -> f64 {
        let a = state.amplitudes();
        inner(a, &self.ops.term_vec(t, a), state.measure()).re / norm_sqr(a, state.measure())
    }
}

/// A real polynomial in grid terms; each word is applied right to left.
#[derive(Debug, Clone)]
pub struct OpPoly {
    ops: Arc<GridOps>,
    words: Vec<(f64, Vec<GridTerm>)>,
}

impl OpPoly {
    pub fn new(ops: Arc<GridOps>) -> Self {
        Self { ops, words: Vec::new() }
    }

    pub fn push(&mut self, c: f64, word: &[GridTerm]) {
        if c != 0.0 {
            self.words.push((c, word.to_vec()));
        }
    }

    pub fn words(&self) -> &[(f64, Vec<GridTerm>)] {
        &self.words
    }

    /// Concatenation of several polynomials on the same grid.
    pub fn sum(parts: &[&OpPoly]) -> Self {
        let mut out = Self::new(parts[0].ops.clone());
        for p in parts {
            out.words.extend(p.words.iter().cloned());
        }
        out
    }
}

impl LinearOp for OpPoly {
    fn dim(&self) -> usize {
        self.ops.geometry().len()
    }

    fn apply(&self, input: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let mut cur = vec![C64::new(0.0, 0.0); input.len()];
        let mut next = vec![C64::new(0.0, 0.0); input.len()];
        for (c, word) in &self.words {
            cur.copy_from_slice(input);
            for &t in word.iter().rev() {
                self.ops.apply_term(t, &cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
            out.par_iter_mut().zip(&cur).for_each(|(o, x)| *o += x * c);
        }
    }
}

/// `O_k² + 2 Σ_{j≠k} O_j O_k − 2 (Σ_i ⟨O_i⟩) O_k` for site terms `site(i)`
/// and the supplied mean `mu`.
fn g_from_sites(ops: &Arc<GridOps>, n: usize, k: usize, site: impl Fn(usize) -> GridTerm, mu: f64) -> OpPoly {
    let mut g = OpPoly::new(ops.clone());
    g.push(1.0, &[site(k), site(k)]);
    for j in (0..n).filter(|&j| j != k) {
        g.push(2.0, &[site(j), site(k)]);
    }
    g.push(-2.0 * mu, &[site(k)]);
    g
}

/// The state-dependent operator `G_k` of the candidate family.
pub fn build_g(set: &OperatorSet, state: &GridState, k: usize) -> Result<OpPoly> {
    set.check_state(state)?;
    set.check_site(k)?;
    let n = set.n_particles();
    let mu: f64 = (0..n).map(|i| set.expect(set.site(i), state)).sum();
    Ok(g_from_sites(set.ops(), n, k, |i| set.site(i), mu))
}

/// `G_k` of the `L_z + S_z` family regrouped as orbital, spin and mixed parts.
#[derive(Debug, Clone)]
pub struct GParts {
    pub orbital: OpPoly,
    pub spin: OpPoly,
    pub mixed: OpPoly,
}

impl GParts {
    pub fn total(&self) -> OpPoly {
        OpPoly::sum(&[&self.orbital, &self.spin, &self.mixed])
    }
}

/// Splits `G_k` for orbital-plus-spin angular momentum into
/// `I` (pure `L`), `II` (pure `S`) and `III` (cross terms).
pub fn g_parts(set: &OperatorSet, state: &GridState, k: usize) -> Result<GParts> {
    set.check_state(state)?;
    set.check_site(k)?;
    let g = set.geometry();
    if g.dims != 2 || g.spin_levels != 2 {
        return Err(WfeError::param(
            "geometry",
            "the L + S split needs two dimensions and spin_levels = 2",
        ));
    }
    let n = set.n_particles();
    let l_tot: f64 = (0..n).map(|i| set.expect(GridTerm::Lz(i), state)).sum();
    let s_tot: f64 = (0..n).map(|i| set.expect(GridTerm::Sz(i), state)).sum();
    let ops = set.ops();
    let orbital = g_from_sites(ops, n, k, GridTerm::Lz, l_tot);
    let spin = g_from_sites(ops, n, k, GridTerm::Sz, s_tot);
    let mut mixed = OpPoly::new(ops.clone());
    mixed.push(2.0, &[GridTerm::Lz(k), GridTerm::Sz(k)]);
    for j in (0..n).filter(|&j| j != k) {
        mixed.push(2.0, &[GridTerm::Lz(k), GridTerm::Sz(j)]);
        mixed.push(2.0, &[GridTerm::Sz(k), GridTerm::Lz(j)]);
    }
    mixed.push(-2.0 * s_tot, &[GridTerm::Lz(k)]);
    mixed.push(-2.0 * l_tot, &[GridTerm::Sz(k)]);
    Ok(GParts { orbital, spin, mixed })
}

/// `⟨ψ|AG − GA|ψ⟩/‖ψ‖²` together with the Cauchy–Schwarz scale
/// `2‖Aψ‖‖Gψ‖/‖ψ‖²`.
pub fn commutator_expectation(ops: &GridOps, a: GridTerm, g: &dyn LinearOp, state: &GridState) -> (C64, f64) {
    let g_psi = g.apply_vec(state.amplitudes());
    commutator_given(ops, a, g, &g_psi, state)
}

/// As [`commutator_expectation`] with `Gψ` already computed.
fn commutator_given(ops: &GridOps, a: GridTerm, g: &dyn LinearOp, g_psi: &[C64], state: &GridState) -> (C64, f64) {
    let psi = state.amplitudes();
    let m = state.measure();
    let n2 = norm_sqr(psi, m);
    let a_psi = ops.term_vec(a, psi);
    let ag = inner(&a_psi, g_psi, m);
    let ga = inner(psi, &g.apply_vec(&a_psi), m);
    let scale = 2.0 * (norm_sqr(&a_psi, m) * norm_sqr(g_psi, m)).sqrt() / n2;
    ((ag - ga) / n2, scale)
}

/// One line of a constraint report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub value_re: f64,
    pub value_im: f64,
    pub scale: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRecord {
    fn new(name: String, value: C64, scale: f64, tolerance: f64) -> Result<Self> {
        if value.re.abs() > IMAGINARY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(WfeError::NotImaginary {
                check: name,
                real: value.re,
                scale,
            });
        }
        Ok(Self {
            pass: value.norm() <= tolerance * scale,
            name,
            value_re: value.re,
            value_im: value.im,
            scale,
            tolerance,
        })
    }

    pub fn value(&self) -> C64 {
        C64::new(self.value_re, self.value_im)
    }
}

fn com_check(
    set: &OperatorSet,
    state: &GridState,
    k: usize,
    a: GridTerm,
    label: &str,
    calib: f64,
) -> Result<CheckRecord> {
    let g = build_g(set, state, k)?;
    let (v, scale) = commutator_expectation(set.ops(), a, &g, state);
    CheckRecord::new(format!("{label}[{k}]"), v, scale, CALIBRATION_FACTOR * calib)
}

/// `⟨ψ|X_k G − G X_k|ψ⟩`; refuses a verdict on a poorly calibrated grid.
pub fn check_com_position(set: &OperatorSet, state: &GridState, k: usize) -> Result<CheckRecord> {
    let calib = set.calibrated(state)?;
    com_check(set, state, k, GridTerm::X(k, 0), "com_position", calib)
}

/// `⟨ψ|P_k G − G P_k|ψ⟩`; refuses a verdict on a poorly calibrated grid.
pub fn check_com_momentum(set: &OperatorSet, state: &GridState, k: usize) -> Result<CheckRecord> {
    let calib = set.calibrated(state)?;
    com_check(set, state, k, GridTerm::P(k, 0), "com_momentum", calib)
}

/// `Φ_k = ℱ_k / i` (times [`ANOMALY_CONSTANT`]), where
/// `ℱ_k = −i⟨Y_k L_k + L_k Y_k⟩ − 2i Σ_{j≠k} ⟨L_j Y_k⟩ + 2i 𝓛 ⟨Y_k⟩`
/// and `𝓛 = Σ_i ⟨L_i⟩`. This is the extra velocity of `⟨X_k⟩` per unit `w`
/// produced by the orbital part of an angular-momentum penalty.
pub fn anomaly_f(set: &OperatorSet, state: &GridState, k: usize) -> Result<f64> {
    set.check_state(state)?;
    set.check_site(k)?;
    if set.geometry().dims != 2 {
        return Err(WfeError::param("dims", "the anomaly term needs two dimensions"));
    }
    set.calibrated(state)?;
    Ok(ANOMALY_CONSTANT * anomaly_unchecked(set.ops(), state, k))
}

/// `ℱ_k / i` without the calibration gate or the fitted constant.
pub fn anomaly_unchecked(ops: &GridOps, state: &GridState, k: usize) -> f64 {
    let psi = state.amplitudes();
    let m = state.measure();
    let n2 = norm_sqr(psi, m);
    let n = ops.geometry().n_particles;
    let y_psi = ops.term_vec(GridTerm::X(k, 1), psi);
    let l_psi: Vec<Vec<C64>> = (0..n).map(|j| ops.term_vec(GridTerm::Lz(j), psi)).collect();
    let l_tot: f64 = l_psi.iter().map(|l| inner(psi, l, m).re).sum::<f64>() / n2;
    let y_mean = inner(psi, &y_psi, m).re / n2;
    // ⟨YL + LY⟩ = 2 Re⟨Yψ|Lψ⟩ for symmetric Y, L.
    let yl = 2.0 * inner(&y_psi, &l_psi[k], m).re / n2;
    let cross: f64 = (0..n)
        .filter(|&j| j != k)
        .map(|j| inner(&y_psi, &l_psi[j], m).re / n2)
        .sum();
    -yl - 2.0 * cross + 2.0 * l_tot * y_mean
}

/// Contributions of the spin (`II`) and mixed (`III`) parts of `G_k` to
/// `⟨[X_k, G_k]⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinSector {
    pub spin: C64,
    pub mixed: C64,
    /// `1 − tr(ρ²)` of the spin marginal; zero for space ⊗ spin products.
    pub entanglement: f64,
}

impl SpinSector {
    pub fn is_product(&self) -> bool {
        self.entanglement <= 1e-12
    }
}

/// Evaluates the spin-sector terms; non-product input is evaluated anyway and
/// reported through [`SpinSector::entanglement`].
pub fn check_spin_sector(set: &OperatorSet, state: &GridState, k: usize) -> Result<SpinSector> {
    let parts = g_parts(set, state, k)?;
    let x = GridTerm::X(k, 0);
    let (spin, _) = commutator_expectation(set.ops(), x, &parts.spin, state);
    let (mixed, _) = commutator_expectation(set.ops(), x, &parts.mixed, state);
    Ok(SpinSector {
        spin,
        mixed,
        entanglement: spin_entanglement(state),
    })
}

/// Linear entropy of the spin marginal.
fn spin_entanglement(state: &GridState) -> f64 {
    let sd = state.geometry().spin_dim();
    let a = state.amplitudes();
    let mut rho = vec![C64::new(0.0, 0.0); sd * sd];
    for row in a.chunks(sd) {
        for i in 0..sd {
            for j in 0..sd {
                rho[i * sd + j] += row[i] * row[j].conj();
            }
        }
    }
    let tr: f64 = (0..sd).map(|i| rho[i * sd + i].re).sum();
    let tr2: f64 = rho.iter().map(|z| z.norm_sqr()).sum();
    (1.0 - tr2 / (tr * tr)).max(0.0)
}

/// Pass/fail table of one candidate on one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub candidate: FamilyKind,
    pub checks: Vec<CheckRecord>,
    pub calibration_residual: f64,
}

impl ConstraintReport {
    pub fn verdict(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Runs every check for every particle. Angular-momentum candidates also get
/// the anomaly term, and `L + S` the spin-sector terms.
pub fn constraint_report(set: &OperatorSet, state: &GridState) -> Result<ConstraintReport> {
    let calib = set.calibrated(state)?;
    let tol = CALIBRATION_FACTOR * calib;
    let mut checks = Vec::new();
    for k in 0..set.n_particles() {
        let g = build_g(set, state, k)?;
        let g_psi = g.apply_vec(state.amplitudes());
        let (v, scale) = commutator_given(set.ops(), GridTerm::X(k, 0), &g, &g_psi, state);
        checks.push(CheckRecord::new(format!("com_position[{k}]"), v, scale, tol)?);
        let (v, s) = commutator_given(set.ops(), GridTerm::P(k, 0), &g, &g_psi, state);
        checks.push(CheckRecord::new(format!("com_momentum[{k}]"), v, s, tol)?);
        if matches!(set.candidate, FamilyKind::AngularMomentumLz | FamilyKind::TotalJz) {
            let phi = ANOMALY_CONSTANT * anomaly_unchecked(set.ops(), state, k);
            checks.push(CheckRecord::new(
                format!("anomaly[{k}]"),
                C64::new(0.0, phi),
                scale,
                tol,
            )?);
        }
        if set.candidate == FamilyKind::TotalJz {
            let s = check_spin_sector(set, state, k)?;
            checks.push(CheckRecord::new(
                format!("spin_sector_ii[{k}]"),
                s.spin,
                1.0,
                SPIN_SECTOR_TOL,
            )?);
            checks.push(CheckRecord::new(
                format!("spin_sector_iii[{k}]"),
                s.mixed,
                1.0,
                SPIN_SECTOR_TOL,
            )?);
        }
    }
    Ok(ConstraintReport {
        candidate: set.candidate,
        checks,
        calibration_residual: calib,
    })
}

/// Two-particle Gaussian test states
/// `Π_p exp(−|r_p|²/(2s²) + c x_p y_p/s² + i κ_p x_p) · exp(γ x_0 x_1/s²)`
/// with `κ_p = kick · (p + 1)`, times a product spinor when spin is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestFamily {
    pub width: f64,
    pub correlation: f64,
    pub coupling: f64,
    pub kick: f64,
    /// Spinor angles `θ_p` of `(cos θ_p, sin θ_p)`.
    pub spin_angles: Vec<f64>,
}

impl Default for TestFamily {
    fn default() -> Self {
        Self {
            width: 1.0,
            correlation: 0.3,
            coupling: 0.2,
            kick: 0.4,
            spin_angles: vec![0.3, 1.1],
        }
    }
}

impl TestFamily {
    /// No correlation, coupling or kick.
    pub fn isotropic(width: f64) -> Self {
        Self {
            width,
            correlation: 0.0,
            coupling: 0.0,
            kick: 0.0,
            ..Self::default()
        }
    }

    pub fn build(&self, geometry: GridGeometry) -> Result<GridState> {
        geometry.validate()?;
        if !(self.width > 0.0) {
            return Err(WfeError::param("width", "must be positive"));
        }
        if geometry.spin_levels == 2 && self.spin_angles.len() < geometry.n_particles {
            return Err(WfeError::param("spin_angles", "one angle per particle required"));
        }
        let g = geometry;
        let s2 = self.width * self.width;
        let coords = g.coords();
        let amps = (0..g.len())
            .map(|idx| {
                let mut z = C64::new(0.0, 0.0);
                let mut xs = [0.0; 2];
                for p in 0..g.n_particles {
                    let x = coords[g.axis_index(idx, g.axis(p, 0))];
                    let y = if g.dims == 2 {
                        coords[g.axis_index(idx, g.axis(p, 1))]
                    } else {
                        0.0
                    };
                    xs[p] = x;
                    z += C64::new(
                        -(x * x + y * y) / (2.0 * s2) + self.correlation * x * y / s2,
                        self.kick * (p + 1) as f64 * x,
                    );
                }
                if g.n_particles == 2 {
                    z += self.coupling * xs[0] * xs[1] / s2;
                }
                let mut amp = z.exp();
                if g.spin_levels == 2 {
                    for p in 0..g.n_particles {
                        let up = (idx / g.spin_stride(p)).is_multiple_of(2);
                        let (s, c) = self.spin_angles[p].sin_cos();
                        amp *= if up { c } else { s };
                    }
                }
                amp
            })
            .collect();
        let mut st = GridState::new(geometry, amps)?;
        st.normalize();
        Ok(st)
    }
}

/// Grid and state family used for the admissibility table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableParams {
    pub points: usize,
    pub half_width: f64,
    pub family: TestFamily,
    pub candidates: Vec<FamilyKind>,
}

impl Default for TableParams {
    fn default() -> Self {
        Self {
            points: 40,
            half_width: 8.0,
            family: TestFamily::default(),
            candidates: vec![
                FamilyKind::PositionX,
                FamilyKind::MomentumPx,
                FamilyKind::AngularMomentumLz,
                FamilyKind::TotalJz,
            ],
        }
    }
}

/// One report per candidate, each on a two-particle, two-dimensional grid
/// (with spin for `L + S`).
pub fn admissibility_table(params: &TableParams) -> Result<Vec<ConstraintReport>> {
    params
        .candidates
        .iter()
        .map(|&kind| {
            let spin_levels = if matches!(kind, FamilyKind::TotalJz | FamilyKind::SpinZ) {
                2
            } else {
                1
            };
            let geometry = GridGeometry::new(2, 2, params.points, params.half_width, spin_levels)?;
            let set = OperatorSet::new(geometry, kind)?;
            let state = params.family.build(geometry)?;
            constraint_report(&set, &state)
        })
        .collect()
}
