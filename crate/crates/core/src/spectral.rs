//! Matrix-free operators on periodic grids: positions, spectral momenta,
//! angular momentum, spin, and the grid Hamiltonian.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfeError};
use crate::linalg::{LinearOp, C64, I};
use crate::state::{FamilyKind, FamilyOperator, GridGeometry, GridState, OperatorFamily, Wavefunction};

/// Shared FFT plans and coordinate tables for one geometry.
pub struct GridOps {
    geometry: GridGeometry,
    coords: Vec<f64>,
    k: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GridOps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridOps").field("geometry", &self.geometry).finish()
    }
}

/// One single-particle operator on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridTerm {
    /// Coordinate `d` of particle `p`.
    X(usize, usize),
    /// Momentum `-i ∂` along coordinate `d` of particle `p`.
    P(usize, usize),
    /// `x p_y − y p_x` of particle `p`.
    Lz(usize),
    Sz(usize),
    /// `L_z + S_z` of particle `p`.
    Jz(usize),
}

impl GridTerm {
    /// The site operator `O_p` of a family kind.
    pub fn of_kind(kind: FamilyKind, p: usize) -> Self {
        match kind {
            FamilyKind::PositionX => GridTerm::X(p, 0),
            FamilyKind::MomentumPx => GridTerm::P(p, 0),
            FamilyKind::AngularMomentumLz => GridTerm::Lz(p),
            FamilyKind::SpinZ => GridTerm::Sz(p),
            FamilyKind::TotalJz => GridTerm::Jz(p),
        }
    }
}

impl GridOps {
    pub fn new(geometry: GridGeometry) -> Result<Arc<Self>> {
        geometry.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Self {
            coords: geometry.coords(),
            k: geometry.wavenumbers(),
            fwd: planner.plan_fft_forward(geometry.points),
            inv: planner.plan_fft_inverse(geometry.points),
            geometry,
        }))
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    pub(crate) fn check_term(&self, t: GridTerm) -> Result<()> {
        let g = &self.geometry;
        let (p, d) = match t {
            GridTerm::X(p, d) | GridTerm::P(p, d) => (p, d),
            GridTerm::Lz(p) | GridTerm::Sz(p) | GridTerm::Jz(p) => (p, 0),
        };
        if p >= g.n_particles || d >= g.dims {
            return Err(WfeError::param("site", format!("{t:?} outside the geometry")));
        }
        if matches!(t, GridTerm::Lz(_) | GridTerm::Jz(_)) && g.dims != 2 {
            return Err(WfeError::param("dims", "angular momentum needs two dimensions"));
        }
        if matches!(t, GridTerm::Sz(_) | GridTerm::Jz(_)) && g.spin_levels != 2 {
            return Err(WfeError::param("spin_levels", "spin operators need spin_levels = 2"));
        }
        Ok(())
    }

    /// Multiply by a function of the grid index along `axis`.
    pub fn mul_axis(&self, axis: usize, table: &[f64], input: &[C64], out: &mut [C64]) {
        let g = &self.geometry;
        let stride = g.axis_stride(axis);
        let block = stride * g.points;
        let chunk = block * (16384 / block).max(1);
        out.par_chunks_mut(chunk)
            .zip(input.par_chunks(chunk))
            .for_each(|(o, x)| {
                for (i, (oi, xi)) in o.iter_mut().zip(x).enumerate() {
                    *oi = xi * table[(i / stride) % g.points];
                }
            });
    }

    /// Apply `f(k)` along `axis` by FFT.
    ///
    /// Lines are transposed through a small tile so that both the strided
    /// reads and the FFTs stay in cache.
    pub fn spectral_axis(&self, axis: usize, mult: &[f64], input: &[C64], out: &mut [C64]) {
        const TILE: usize = 32;
        let g = self.geometry.points;
        let stride = self.geometry.axis_stride(axis);
        let block = stride * g;
        let chunk = block * (65536 / block).max(1);
        let scale = 1.0 / g as f64;
        let scratch_len = self
            .fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len());
        out.par_chunks_mut(chunk)
            .zip(input.par_chunks(chunk))
            .for_each(|(o, x)| {
                let zero = C64::new(0.0, 0.0);
                let mut buf = vec![zero; TILE.min(stride) * g];
                let mut scratch = vec![zero; scratch_len];
                for (ob, xb) in o.chunks_mut(block).zip(x.chunks(block)) {
                    for t0 in (0..stride).step_by(TILE) {
                        let tw = TILE.min(stride - t0);
                        let buf = &mut buf[..tw * g];
                        for j in 0..g {
                            let row = &xb[j * stride + t0..j * stride + t0 + tw];
                            for (q, v) in row.iter().enumerate() {
                                buf[q * g + j] = *v;
                            }
                        }
                        self.fwd.process_with_scratch(buf, &mut scratch);
                        for line in buf.chunks_mut(g) {
                            for (z, m) in line.iter_mut().zip(mult) {
                                *z *= m * scale;
                            }
                        }
                        self.inv.process_with_scratch(buf, &mut scratch);
                        for j in 0..g {
                            let row = &mut ob[j * stride + t0..j * stride + t0 + tw];
                            for (q, v) in row.iter_mut().enumerate() {
                                *v = buf[q * g + j];
                            }
                        }
                    }
                }
            });
    }

    pub fn apply_term(&self, t: GridTerm, input: &[C64], out: &mut [C64]) {
        let g = &self.geometry;
        match t {
            GridTerm::X(p, d) => self.mul_axis(g.axis(p, d), &self.coords, input, out),
            GridTerm::P(p, d) => self.spectral_axis(g.axis(p, d), &self.k, input, out),
            GridTerm::Lz(p) => {
                let (ax, ay) = (g.axis(p, 0), g.axis(p, 1));
                let mut tmp = vec![C64::new(0.0, 0.0); input.len()];
                let mut tmp2 = vec![C64::new(0.0, 0.0); input.len()];
                self.spectral_axis(ay, &self.k, input, &mut tmp);
                self.mul_axis(ax, &self.coords, &tmp, out);
                self.spectral_axis(ax, &self.k, input, &mut tmp);
                self.mul_axis(ay, &self.coords, &tmp, &mut tmp2);
                out.par_iter_mut().zip(&tmp2).for_each(|(o, b)| *o -= b);
            }
            GridTerm::Sz(p) => {
                out.par_iter_mut()
                    .zip(input)
                    .enumerate()
                    .for_each(|(i, (o, x))| *o = x * g.spin_z(i, p));
            }
            GridTerm::Jz(p) => {
                self.apply_term(GridTerm::Lz(p), input, out);
                out.par_iter_mut()
                    .zip(input)
                    .enumerate()
                    .for_each(|(i, (o, x))| *o += x * g.spin_z(i, p));
            }
        }
    }

    pub fn term_vec(&self, t: GridTerm, input: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); input.len()];
        self.apply_term(t, input, &mut out);
        out
    }

    /// Diagonal of a position- or spin-diagonal term.
    fn term_diagonal(&self, t: GridTerm) -> Option<Vec<f64>> {
        let g = &self.geometry;
        match t {
            GridTerm::X(p, d) => Some(g.axis_diagonal(g.axis(p, d), |x| x)),
            GridTerm::Sz(p) => Some((0..g.len()).map(|i| g.spin_z(i, p)).collect()),
            _ => None,
        }
    }

    /// Kinetic energy `Σ_axes k²/(2m)` applied spectrally.
    pub fn apply_kinetic(&self, mass: f64, input: &[C64], out: &mut [C64]) {
        let k2: Vec<f64> = self.k.iter().map(|k| k * k / (2.0 * mass)).collect();
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let mut tmp = vec![C64::new(0.0, 0.0); input.len()];
        for axis in 0..self.geometry.n_axes() {
            self.spectral_axis(axis, &k2, input, &mut tmp);
            out.par_iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        }
    }

    /// Residual `‖[X, P]ψ − iψ‖ / ‖ψ‖` along `axis`.
    pub fn calibration_residual(&self, psi: &[C64], particle: usize, d: usize) -> f64 {
        let x = GridTerm::X(particle, d);
        let p = GridTerm::P(particle, d);
        let xp = self.term_vec(x, &self.term_vec(p, psi));
        let px = self.term_vec(p, &self.term_vec(x, psi));
        let num: f64 = xp
            .iter()
            .zip(&px)
            .zip(psi)
            .map(|((a, b), z)| (a - b - I * z).norm_sqr())
            .sum();
        let den: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        (num / den).sqrt()
    }
}

/// A real linear combination of grid terms.
#[derive(Debug, Clone)]
pub struct GridSum {
    ops: Arc<GridOps>,
    terms: Vec<(f64, GridTerm)>,
}

impl GridSum {
    pub fn new(ops: Arc<GridOps>, terms: Vec<(f64, GridTerm)>) -> Result<Self> {
        for &(_, t) in &terms {
            ops.check_term(t)?;
        }
        Ok(Self { ops, terms })
    }

    /// `Σ_{p ∈ sites} O_p` for the given family kind.
    pub fn family(ops: Arc<GridOps>, family: &OperatorFamily) -> Result<Self> {
        let terms = family
            .sites
            .iter()
            .map(|&p| (1.0, GridTerm::of_kind(family.kind, p)))
            .collect();
        Self::new(ops, terms).map_err(|e| family.incompatible(e.to_string()))
    }

    pub fn terms(&self) -> &[(f64, GridTerm)] {
        &self.terms
    }
}

impl LinearOp for GridSum {
    fn dim(&self) -> usize {
        self.ops.geometry.len()
    }

    fn apply(&self, input: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let mut tmp = vec![C64::new(0.0, 0.0); input.len()];
        for &(c, t) in &self.terms {
            self.ops.apply_term(t, input, &mut tmp);
            out.par_iter_mut().zip(&tmp).for_each(|(o, x)| *o += x * c);
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim()];
        for &(c, t) in &self.terms {
            let d = self.ops.term_diagonal(t)?;
            acc.iter_mut().zip(d).for_each(|(a, v)| *a += c * v);
        }
        Some(acc)
    }

    fn is_diagonal(&self) -> bool {
        self.terms
            .iter()
            .all(|(_, t)| matches!(t, GridTerm::X(..) | GridTerm::Sz(_)))
    }
}

impl FamilyOperator for GridState {
    fn family_operator(&self, family: &OperatorFamily) -> Result<Arc<dyn LinearOp>> {
        let ops = GridOps::new(*self.geometry())?;
        Ok(Arc::new(GridSum::family(ops, family)?))
    }
}

/// Single-particle external potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExternalPotential {
    #[default]
    None,
    /// `(k/2) |r|²`
    Harmonic { k: f64 },
    /// `a (x² − b²)²` along the first coordinate.
    Quartic { a: f64, b: f64 },
}

impl ExternalPotential {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            ExternalPotential::None => 0.0,
            ExternalPotential::Harmonic { k } => 0.5 * k * x.iter().map(|v| v * v).sum::<f64>(),
            ExternalPotential::Quartic { a, b } => a * (x[0] * x[0] - b * b).powi(2),
        }
    }

    /// `∂v/∂x` along the first coordinate.
    pub fn force_x(&self, x: &[f64]) -> f64 {
        match *self {
            ExternalPotential::None => 0.0,
            ExternalPotential::Harmonic { k } => k * x[0],
            ExternalPotential::Quartic { a, b } => 4.0 * a * x[0] * (x[0] * x[0] - b * b),
        }
    }
}

/// `Σ_p [P_p²/(2m) + v(r_p)] + (κ/2)|r_0 − r_1|²`.
#[derive(Debug, Clone)]
pub struct GridHamiltonian {
    ops: Arc<GridOps>,
    mass: f64,
    potential: Vec<f64>,
}

impl GridHamiltonian {
    pub fn new(ops: Arc<GridOps>, mass: f64, external: ExternalPotential, pair_kappa: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(WfeError::param("mass", "must be positive"));
        }
        let g = *ops.geometry();
        let coords = g.coords();
        let potential = (0..g.len())
            .map(|i| {
                let pos: Vec<Vec<f64>> = (0..g.n_particles)
                    .map(|p| (0..g.dims).map(|d| coords[g.axis_index(i, g.axis(p, d))]).collect())
                    .collect();
                let mut v: f64 = pos.iter().map(|r| external.value(r)).sum();
                if g.n_particles == 2 && pair_kappa != 0.0 {
                    let d2: f64 = pos[0].iter().zip(&pos[1]).map(|(a, b)| (a - b).powi(2)).sum();
                    v += 0.5 * pair_kappa * d2;
                }
                v
            })
            .collect();
        Ok(Self { ops, mass, potential })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn ops(&self) -> &Arc<GridOps> {
        &self.ops
    }
}

impl LinearOp for GridHamiltonian {
    fn dim(&self) -> usize {
        self.potential.len()
    }

    fn apply(&self, input: &[C64], out: &mut [C64]) {
        self.ops.apply_kinetic(self.mass, input, out);
        out.par_iter_mut()
            .zip(input)
            .zip(&self.potential)
            .for_each(|((o, x), v)| *o += x * v);
    }

    /// Potential plus the (constant) diagonal of the spectral kinetic term.
    fn diagonal(&self) -> Option<Vec<f64>> {
        let k = self.ops.wavenumbers();
        let mean_k2 = k.iter().map(|v| v * v).sum::<f64>() / k.len() as f64;
        let kin = self.ops.geometry().n_axes() as f64 * mean_k2 / (2.0 * self.mass);
        Some(self.potential.iter().map(|v| v + kin).collect())
    }
}

/// `⟨ψ|A|ψ⟩` for a single grid term on a state.
pub fn term_expectation(ops: &GridOps, t: GridTerm, state: &GridState) -> f64 {
    let a = state.amplitudes();
    crate::linalg::inner(a, &ops.term_vec(t, a), state.measure()).re
}
