//! Shared test helpers: random states and a dense per-axis operator oracle
//! for two-particle grids.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wfe_core::state::{FamilyKind, GridGeometry, SpinState, SymmetricState};
use wfe_core::C64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

pub fn normalized(mut v: Vec<C64>) -> Vec<C64> {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= n);
    v
}

pub fn random_symmetric(n_spins: usize, seed: u64) -> SymmetricState {
    SymmetricState::new(n_spins, normalized(random_vec(2 * n_spins, &mut rng(seed)))).unwrap()
}

pub fn random_spin(n_spins: usize, seed: u64) -> SpinState {
    SpinState::new(n_spins, normalized(random_vec(1 << n_spins, &mut rng(seed)))).unwrap()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Two particles in two dimensions, optionally with spin. Momentum is an
/// explicit `G × G` matrix built from the discrete Fourier sum
/// `P_ab = (1/G) Σ_m k_m e^{i k_m (x_a − x_b)}` and applied axis by axis.
pub struct DenseOracle {
    pub g: usize,
    pub x: Vec<f64>,
    pub p: Vec<C64>,
    pub spin: bool,
    pub cell: f64,
}

impl DenseOracle {
    pub fn new(geometry: &GridGeometry) -> Self {
        assert_eq!((geometry.n_particles, geometry.dims), (2, 2));
        let g = geometry.points;
        let l = geometry.half_width;
        let h = 2.0 * l / g as f64;
        let x: Vec<f64> = (0..g).map(|j| -l + j as f64 * h).collect();
        let ks: Vec<f64> = (0..g)
            .map(|m| {
                let m = if m < g / 2 { m as f64 } else { m as f64 - g as f64 };
                std::f64::consts::PI * m / l
            })
            .collect();
        let mut p = vec![C64::new(0.0, 0.0); g * g];
        for a in 0..g {
            for b in 0..g {
                p[a * g + b] = ks.iter().map(|&k| C64::from_polar(k, k * (x[a] - x[b]))).sum::<C64>() / g as f64;
            }
        }
        Self {
            g,
            x,
            p,
            spin: geometry.spin_levels == 2,
            cell: h.powi(4),
        }
    }

    fn spin_dim(&self) -> usize {
        if self.spin {
            4
        } else {
            1
        }
    }

    fn len(&self) -> usize {
        self.g.pow(4) * self.spin_dim()
    }

    fn stride(&self, axis: usize) -> usize {
        self.g.pow(3 - axis as u32) * self.spin_dim()
    }

    fn index_on(&self, i: usize, axis: usize) -> usize {
        (i / self.stride(axis)) % self.g
    }

    /// `x` along axis `2p + d`.
    pub fn pos(&self, p: usize, d: usize, v: &[C64]) -> Vec<C64> {
        let axis = 2 * p + d;
        (0..self.len()).map(|i| v[i] * self.x[self.index_on(i, axis)]).collect()
    }

    /// The dense momentum matrix along axis `2p + d`.
    pub fn mom(&self, p: usize, d: usize, v: &[C64]) -> Vec<C64> {
        let axis = 2 * p + d;
        let s = self.stride(axis);
        let g = self.g;
        (0..self.len())
            .map(|i| {
                let a = self.index_on(i, axis);
                let base = i - a * s;
                (0..g).map(|b| self.p[a * g + b] * v[base + b * s]).sum()
            })
            .collect()
    }

    pub fn lz(&self, p: usize, v: &[C64]) -> Vec<C64> {
        let a = self.pos(p, 0, &self.mom(p, 1, v));
        let b = self.pos(p, 1, &self.mom(p, 0, v));
        a.iter().zip(&b).map(|(x, y)| x - y).collect()
    }

    pub fn sz(&self, p: usize, v: &[C64]) -> Vec<C64> {
        assert!(self.spin);
        let stride = if p == 0 { 2 } else { 1 };
        (0..self.len())
            .map(|i| v[i] * if (i / stride) % 2 == 0 { 0.5 } else { -0.5 })
            .collect()
    }

    pub fn site(&self, kind: FamilyKind, p: usize, v: &[C64]) -> Vec<C64> {
        match kind {
            FamilyKind::PositionX => self.pos(p, 0, v),
            FamilyKind::MomentumPx => self.mom(p, 0, v),
            FamilyKind::AngularMomentumLz => self.lz(p, v),
            FamilyKind::SpinZ => self.sz(p, v),
            FamilyKind::TotalJz => {
                let l = self.lz(p, v);
                let s = self.sz(p, v);
                l.iter().zip(&s).map(|(a, b)| a + b).collect()
            }
        }
    }

    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        dot(a, b) * self.cell
    }

    /// Normalized expectation `⟨ψ|v⟩/⟨ψ|ψ⟩`.
    pub fn mean(&self, psi: &[C64], v: &[C64]) -> C64 {
        dot(psi, v) / dot(psi, psi)
    }

    /// `G_k v = O_k² v + 2 Σ_{j≠k} O_j O_k v − 2 μ O_k v` with
    /// `μ = Σ_i ⟨ψ|O_i|ψ⟩`.
    pub fn g_apply(&self, kind: FamilyKind, k: usize, psi: &[C64], v: &[C64]) -> Vec<C64> {
        let mu: f64 = (0..2).map(|i| self.mean(psi, &self.site(kind, i, psi)).re).sum();
        let ok = self.site(kind, k, v);
        let okk = self.site(kind, k, &ok);
        let j = 1 - k;
        let ojk = self.site(kind, j, &ok);
        (0..v.len())
            .map(|i| okk[i] + ojk[i] * 2.0 - ok[i] * (2.0 * mu))
            .collect()
    }

    /// `⟨ψ|A G − G A|ψ⟩/⟨ψ|ψ⟩` for `A = X_k` (`momentum = false`) or `P_k`.
    pub fn com_check(&self, kind: FamilyKind, k: usize, momentum: bool, psi: &[C64]) -> C64 {
        let a = |v: &[C64]| if momentum { self.mom(k, 0, v) } else { self.pos(k, 0, v) };
        let gpsi = self.g_apply(kind, k, psi, psi);
        let agpsi = a(&gpsi);
        let gapsi = self.g_apply(kind, k, psi, &a(psi));
        (dot(psi, &agpsi) - dot(psi, &gapsi)) / dot(psi, psi)
    }

    /// `ℱ_k / i` from its definition, with every expectation formed
    /// directly as `⟨ψ|A B ψ⟩`.
    pub fn anomaly(&self, k: usize, psi: &[C64]) -> C64 {
        let y = |v: &[C64]| self.pos(k, 1, v);
        let ly = self.lz(k, &y(psi));
        let yl = y(&self.lz(k, psi));
        let j = 1 - k;
        let ljy = self.lz(j, &y(psi));
        let l_tot: C64 = (0..2).map(|i| self.mean(psi, &self.lz(i, psi))).sum();
        let y_mean = self.mean(psi, &y(psi));
        -(self.mean(psi, &yl) + self.mean(psi, &ly)) - self.mean(psi, &ljy) * 2.0 + l_tot * y_mean * 2.0
    }
}
