use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GaussianSpec, GridGeometry, GridState, SymmetricState, Wavefunction};
use crate::error::{Result, WfeError};
use crate::linalg::{binomial, C64};

const BRANCH_TOL: f64 = 1e-12;
const MOMENTUM_OVERLAP_WARN: f64 = 1e-10;

/// `α|+⟩ + β e^{iγ}|−⟩` with real `α, β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitAmplitudes {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub gamma: f64,
}

impl QubitAmplitudes {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let q = Self { alpha, beta, gamma };
        q.validate()?;
        Ok(q)
    }

    pub fn balanced() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            alpha: h,
            beta: h,
            gamma: 0.0,
        }
    }

    /// Normalized amplitudes with `α − β = eps`.
    pub fn biased(eps: f64) -> Self {
        let s = (2.0 - eps * eps).sqrt();
        Self {
            alpha: (eps + s) / 2.0,
            beta: (s - eps) / 2.0,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alpha * self.alpha + self.beta * self.beta;
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(WfeError::param("qubit", format!("α² + β² = {n}, expected 1")));
        }
        Ok(())
    }

    pub fn spinor(&self) -> [C64; 2] {
        [C64::new(self.alpha, 0.0), C64::from_polar(self.beta, self.gamma)]
    }
}

impl Default for QubitAmplitudes {
    fn default() -> Self {
        Self::balanced()
    }
}

/// Spin cat `α|n=0⟩ + βe^{iγ}|n=M⟩` on the apparatus. With `correlated`
/// the qubit follows the branch (`|+⟩|n=0⟩`, `|−⟩|n=M⟩`); otherwise it is
/// held at `|+⟩`.
pub fn build_spin_cat(n_spins: usize, amps: QubitAmplitudes, correlated: bool) -> Result<SymmetricState> {
    amps.validate()?;
    if n_spins < 2 {
        return Err(WfeError::param("n_spins", "a cat needs at least one apparatus spin"));
    }
    let mut s = SymmetricState::zeros(n_spins)?;
    let m = n_spins - 1;
    let [a, b] = amps.spinor();
    let i0 = s.index(0, 0);
    let i1 = s.index(usize::from(correlated), m);
    s.amplitudes_mut()[i0] = a;
    s.amplitudes_mut()[i1] = b;
    s.normalize();
    Ok(s)
}

/// Qubit spinor times `M` identical apparatus spinors, in Dicke coefficients.
pub fn spin_product_state(n_spins: usize, qubit: [C64; 2], site: [C64; 2]) -> Result<SymmetricState> {
    if n_spins == 0 {
        return Err(WfeError::param("n_spins", "must be positive"));
    }
    let m = n_spins - 1;
    let app: Vec<C64> = (0..=m)
        .map(|n| site[0].powu((m - n) as u32) * site[1].powu(n as u32) * binomial(m, n).sqrt())
        .collect();
    let mut s = SymmetricState::product(qubit, &app)?;
    if s.norm() == 0.0 {
        return Err(WfeError::param("site", "zero spinor"));
    }
    s.normalize();
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpShape {
    /// Gaussian with density standard deviation `width`.
    Gaussian,
    /// Normalized characteristic function of an interval of length `width`.
    Characteristic,
}

/// Two single-particle bumps at `x = ±half_separation` along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBranches {
    pub geometry: GridGeometry,
    pub half_separation: f64,
    pub width: f64,
    pub shape: BumpShape,
    #[serde(default)]
    pub amplitudes: QubitAmplitudes,
}

impl GridBranches {
    fn check(&self) -> Result<()> {
        self.geometry.validate()?;
        self.amplitudes.validate()?;
        if self.geometry.spin_levels != 1 {
            return Err(WfeError::param("spin_levels", "branch states are spinless"));
        }
        if !(self.width > 0.0) || !(self.half_separation >= 0.0) {
            return Err(WfeError::param("width", "width and separation must be positive"));
        }
        let r = self.half_separation;
        let l = self.geometry.half_width;
        match self.shape {
            BumpShape::Gaussian => {
                let s = self.width;
                // Amplitude overlap of two bumps 2R apart, and a Mills-ratio
                // bound on the density mass beyond the box edge.
                let overlap = (-(2.0 * r).powi(2) / (8.0 * s * s)).exp();
                if overlap > BRANCH_TOL {
                    return Err(WfeError::BranchOverlap(format!("gaussian overlap {overlap:.3e}")));
                }
                let z = (l - r) / s;
                let tail = if z > 0.0 {
                    (-z * z / 2.0).exp() / (z * (2.0 * std::f64::consts::PI).sqrt())
                } else {
                    1.0
                };
                if tail > BRANCH_TOL {
                    return Err(WfeError::BranchOverlap(format!(
                        "tail mass {tail:.3e} beyond the box edge"
                    )));
                }
            }
            BumpShape::Characteristic => {
                if 2.0 * r < self.width {
                    return Err(WfeError::BranchOverlap("intervals intersect".into()));
                }
                if r + self.width / 2.0 >= l {
                    return Err(WfeError::BranchOverlap("interval leaves the box".into()));
                }
            }
        }
        Ok(())
    }

    /// Normalized single-particle bump centred at `c` on the first axis.
    fn bump(&self, c: f64) -> Result<Vec<C64>> {
        let g = &self.geometry;
        let mut v = match self.shape {
            BumpShape::Gaussian => {
                let mut center = vec![0.0; g.dims];
                center[0] = c;
                let spec = GaussianSpec::at(center, self.width);
                GridState::sample_single(g, |x| spec.eval(x))
            }
            BumpShape::Characteristic => {
                let half = self.width / 2.0;
                let transverse = GaussianSpec::at(vec![0.0; g.dims], self.width);
                GridState::sample_single(g, |x| {
                    let inside = (x[0] - c).abs() <= half + 1e-12 * g.spacing();
                    let t = if g.dims == 2 {
                        transverse.eval(&[0.0, x[1]])
                    } else {
                        C64::new(1.0, 0.0)
                    };
                    if inside {
                        t
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
            }
        };
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>() * g.spacing().powi(g.dims as i32);
        if n2 == 0.0 {
            return Err(WfeError::param("width", "bump contains no grid point"));
        }
        let s = n2.sqrt();
        v.iter_mut().for_each(|z| *z /= s);
        Ok(v)
    }
}

/// Product over particles of `α φ(x + R) + β e^{iγ} φ(x − R)`.
pub fn build_mqp_state(p: &GridBranches) -> Result<GridState> {
    p.check()?;
    let left = p.bump(-p.half_separation)?;
    let right = p.bump(p.half_separation)?;
    let [a, b] = p.amplitudes.spinor();
    let single: Vec<C64> = left.iter().zip(&right).map(|(l, r)| a * l + b * r).collect();
    let factors = vec![single; p.geometry.n_particles];
    let mut s = GridState::from_product(p.geometry, &factors, &[])?;
    s.normalize();
    Ok(s)
}

/// `α Π φ(x_j + R) + β e^{iγ} Π φ(x_j − R)`.
pub fn build_cat_state(p: &GridBranches) -> Result<GridState> {
    p.check()?;
    let n = p.geometry.n_particles;
    let left = GridState::from_product(p.geometry, &vec![p.bump(-p.half_separation)?; n], &[])?;
    let right = GridState::from_product(p.geometry, &vec![p.bump(p.half_separation)?; n], &[])?;
    let [a, b] = p.amplitudes.spinor();
    let amps = left
        .amplitudes()
        .iter()
        .zip(right.amplitudes())
        .map(|(l, r)| a * l + b * r)
        .collect();
    let mut s = GridState::new(p.geometry, amps)?;
    s.normalize();
    Ok(s)
}

/// Single spin-1/2 particle `α ψ_q(p − p0)|+⟩ + β e^{iγ} ψ_q(p + p0)|−⟩`,
/// where `ψ_q` is a Gaussian of momentum spread `q` centred at the origin.
pub fn build_momentum_cat(geometry: GridGeometry, q: f64, p0: f64, amps: QubitAmplitudes) -> Result<GridState> {
    amps.validate()?;
    if geometry.n_particles != 1 || geometry.spin_levels != 2 {
        return Err(WfeError::param("geometry", "momentum cat needs one particle with spin"));
    }
    if !(q > 0.0) {
        return Err(WfeError::param("q", "must be positive"));
    }
    let sigma = 1.0 / (2.0 * q);
    let mut kick = vec![0.0; geometry.dims];
    kick[0] = p0;
    let up = GaussianSpec::at(vec![0.0; geometry.dims], sigma).with_momentum(kick.clone());
    kick[0] = -p0;
    let down = GaussianSpec::at(vec![0.0; geometry.dims], sigma).with_momentum(kick);
    let mut fu = GridState::sample_single(&geometry, |x| up.eval(x));
    let mut fd = GridState::sample_single(&geometry, |x| down.eval(x));
    let cell = geometry.spacing().powi(geometry.dims as i32);
    for f in [&mut fu, &mut fd] {
        let n = (f.iter().map(|z| z.norm_sqr()).sum::<f64>() * cell).sqrt();
        f.iter_mut().for_each(|z| *z /= n);
    }
    let [a, b] = amps.spinor();
    let amplitudes = fu.iter().zip(&fd).flat_map(|(u, d)| [a * u, b * d]).collect();
    let mut s = GridState::new(geometry, amplitudes)?;
    s.normalize();
    let overlap = (-(p0 * p0) / (2.0 * q * q)).exp();
    if overlap > MOMENTUM_OVERLAP_WARN {
        s.notes.push(format!(
            "momentum bumps overlap {overlap:.3e} exceeds {MOMENTUM_OVERLAP_WARN:e}"
        ));
    }
    Ok(s)
}

/// Parameters of the banded toy initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialToySpec {
    pub n_spins: usize,
    pub qubit: QubitAmplitudes,
    /// Half-width of the band `|S| <= center`.
    pub center: f64,
    /// RMS size of the complex perturbation relative to the mean band amplitude.
    #[serde(default)]
    pub rho: f64,
}

/// `[α|+⟩ + β|−⟩] ⊗ Σ_{|S(n)| <= center} √C(M,n) |n⟩`, normalized.
///
/// With `rho > 0` each banded apparatus coefficient receives an independent
/// complex Gaussian kick of RMS `rho` times the mean banded magnitude; both
/// qubit branches share the same apparatus factor.
pub fn build_initial_toy<R: Rng + ?Sized>(spec: &InitialToySpec, rng: &mut R) -> Result<SymmetricState> {
    spec.qubit.validate()?;
    if spec.n_spins < 2 {
        return Err(WfeError::param(
            "n_spins",
            "need a qubit and at least one apparatus spin",
        ));
    }
    let m = spec.n_spins - 1;
    let r = m as f64 / 2.0;
    if !(0.0..=r).contains(&spec.center) {
        return Err(WfeError::param("center", format!("must lie in [0, {r}]")));
    }
    if !(spec.rho >= 0.0 && spec.rho.is_finite()) {
        return Err(WfeError::param("rho", "must be non-negative"));
    }
    let mut band: Vec<C64> = (0..=m)
        .map(|n| {
            let s = (m as f64 - 2.0 * n as f64) / 2.0;
            if s.abs() <= spec.center + 1e-12 {
                C64::new(binomial(m, n).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    let banded: Vec<usize> = (0..=m).filter(|&n| band[n].norm() > 0.0).collect();
    if banded.is_empty() {
        return Err(WfeError::EmptyBand { center: spec.center });
    }
    if spec.rho > 0.0 {
        let mean = banded.iter().map(|&n| band[n].norm()).sum::<f64>() / banded.len() as f64;
        let scale = spec.rho * mean / std::f64::consts::SQRT_2;
        for &n in &banded {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            band[n] += C64::new(re, im) * scale;
        }
    }
    let mut s = SymmetricState::product(spec.qubit.spinor(), &band)?;
    s.normalize();
    Ok(s)
}
