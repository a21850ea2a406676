//! Curie-Weiss wavefunction ensembles.
//!
//! A symmetric wavefunction of `N` spins is a unit vector `ϕ ∈ C^{N+1}`
//! indexed by the number `n` of down spins. The ensemble average is
//! `[g] = ∫ dϕ e^{−f(ϕ)} g(ϕ) / Z` over the unit sphere with
//! `f = Nβ{1 − m² + (ω − 1) D}`, `ω = N w`. Uniform directions are drawn by
//! normalizing i.i.d. complex Gaussians.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfeError};
use crate::linalg::C64;
use crate::seeds::derive_seed;

/// Below this effective sample size an estimate is flagged as degenerate.
pub const MIN_ESS: f64 = 50.0;

/// Importance samples per independent seed stream.
const IMPORTANCE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Importance,
    Metropolis,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Importance => "importance",
            Sampler::Metropolis => "metropolis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleParams {
    pub n: usize,
    pub beta: f64,
    pub omega: f64,
    pub sampler: Sampler,
    pub n_samples: usize,
    pub seed: u64,
    /// RMS size of a Metropolis move relative to the unit vector; adapted
    /// during burn-in.
    pub step_size: f64,
    /// Independent Metropolis chains.
    pub chains: usize,
    /// Threshold for the weight fraction carried by `m² > ε`.
    pub epsilon: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            n: 10,
            beta: 1.0,
            omega: 2.0,
            sampler: Sampler::Importance,
            n_samples: 100_000,
            seed: 0,
            step_size: 0.3,
            chains: 4,
            epsilon: 0.5,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(WfeError::param("n", "need at least one spin"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(WfeError::param("beta", "must be finite and non-negative"));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(WfeError::param("omega", "must be finite and non-negative"));
        }
        if self.n_samples < 100 {
            return Err(WfeError::param("n_samples", "need at least 100 samples"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(WfeError::param("step_size", "must be positive"));
        }
        if self.chains < 1 {
            return Err(WfeError::param("chains", "need at least one chain"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(WfeError::param("epsilon", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub sampler: Sampler,
    pub n_samples: usize,
    pub m2_mean: f64,
    pub std_error: f64,
    pub effective_sample_size: f64,
    /// Metropolis only.
    pub acceptance_rate: Option<f64>,
    /// Largest normalized importance weight.
    pub max_weight: Option<f64>,
    /// Ensemble weight carried by states with `m² > ε`.
    pub weight_frac_above_eps: f64,
    pub degenerate: bool,
}

/// `N + 1` complex numbers with independent standard normal parts.
pub fn sample_phi<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<C64> {
    (0..=n)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

/// `(m, D)` from the weights `p_n = |ϕ_n|²` of a unit vector.
fn moments(p: &[f64]) -> (f64, f64) {
    let n = (p.len() - 1) as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for (k, pk) in p.iter().enumerate() {
        let x = (n - 2.0 * k as f64) / n;
        s1 += pk * x;
        s2 += pk * x * x;
    }
    (s1, s2 - s1 * s1)
}

fn f_of(n: usize, beta: f64, omega: f64, m: f64, d: f64) -> f64 {
    n as f64 * beta * (1.0 - m * m + (omega - 1.0) * d)
}

fn weights_of(phi: &[C64]) -> Vec<f64> {
    let p: Vec<f64> = phi.iter().map(|z| z.norm_sqr()).collect();
    let s: f64 = p.iter().sum();
    p.into_iter().map(|v| v / s).collect()
}

fn check_unit(phi: &[C64], n: usize) -> Result<()> {
    if phi.len() != n + 1 {
        return Err(WfeError::ShapeMismatch(format!("{} components for N = {n}", phi.len())));
    }
    let n2: f64 = phi.iter().map(|z| z.norm_sqr()).sum();
    if (n2 - 1.0).abs() > 1e-12 {
        return Err(WfeError::NotNormalized(n2));
    }
    Ok(())
}

/// `E_CW(ϕ) = −(1/N) Σ |ϕ_n|² (N − 2n)²`.
pub fn cw_energy(phi: &[C64]) -> f64 {
    let n = (phi.len() - 1) as f64;
    -phi.iter()
        .enumerate()
        .map(|(k, z)| z.norm_sqr() * (n - 2.0 * k as f64).powi(2))
        .sum::<f64>()
        / n
}

/// Magnetization `m` and dispersion `D` of a unit vector.
pub fn m_and_d(phi: &[C64], n: usize) -> Result<(f64, f64)> {
    check_unit(phi, n)?;
    let p: Vec<f64> = phi.iter().map(|z| z.norm_sqr()).collect();
    let (m, d) = moments(&p);
    debug_assert!((-(n as f64) * (m * m + d) - cw_energy(phi)).abs() <= 1e-12 * n as f64);
    Ok((m, d))
}

/// `f(ϕ) = Nβ{1 − m² + (ω − 1) D}`.
pub fn f_value(phi: &[C64], params: &EnsembleParams) -> Result<f64> {
    let (m, d) = m_and_d(phi, params.n)?;
    Ok(f_of(params.n, params.beta, params.omega, m, d))
}

/// Running sums for self-normalized importance sampling with log-weights
/// shifted by `shift`.
#[derive(Debug, Clone, Copy)]
struct ImportanceSums {
    shift: f64,
    w: f64,
    wm: f64,
    ww: f64,
    wwm: f64,
    wwmm: f64,
    w_eps: f64,
    w_max: f64,
    count: usize,
}

impl ImportanceSums {
    fn empty() -> Self {
        Self {
            shift: f64::NEG_INFINITY,
            w: 0.0,
            wm: 0.0,
            ww: 0.0,
            wwm: 0.0,
            wwmm: 0.0,
            w_eps: 0.0,
            w_max: 0.0,
            count: 0,
        }
    }

    fn rescale(&mut self, shift: f64) {
        if shift == self.shift {
            return;
        }
        let a = if self.shift == f64::NEG_INFINITY {
            0.0
        } else {
            (self.shift - shift).exp()
        };
        self.w *= a;
        self.wm *= a;
        self.w_eps *= a;
        self.w_max *= a;
        self.ww *= a * a;
        self.wwm *= a * a;
        self.wwmm *= a * a;
        self.shift = shift;
    }

    fn merge(mut self, mut other: Self) -> Self {
        let s = self.shift.max(other.shift);
        self.rescale(s);
        other.rescale(s);
        Self {
            shift: s,
            w: self.w + other.w,
            wm: self.wm + other.wm,
            ww: self.ww + other.ww,
            wwm: self.wwm + other.wwm,
            wwmm: self.wwmm + other.wwmm,
            w_eps: self.w_eps + other.w_eps,
            w_max: self.w_max.max(other.w_max),
            count: self.count + other.count,
        }
    }
}

fn importance_chunk(params: &EnsembleParams, chunk: usize, len: usize) -> ImportanceSums {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &[0, chunk as u64]));
    let draws: Vec<(f64, f64)> = (0..len)
        .map(|_| {
            let p = weights_of(&sample_phi(params.n, &mut rng));
            let (m, d) = moments(&p);
            (-f_of(params.n, params.beta, params.omega, m, d), m * m)
        })
        .collect();
    let shift = draws.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    let mut s = ImportanceSums::empty();
    s.shift = shift;
    for (lw, m2) in draws {
        let w = (lw - shift).exp();
        s.w += w;
        s.wm += w * m2;
        s.ww += w * w;
        s.wwm += w * w * m2;
        s.wwmm += w * w * m2 * m2;
        if m2 > params.epsilon {
            s.w_eps += w;
        }
        s.w_max = s.w_max.max(w);
        s.count += 1;
    }
    s
}

fn estimate_importance(params: &EnsembleParams) -> EnsembleEstimate {
    let n_chunks = params.n_samples.div_ceil(IMPORTANCE_CHUNK);
    let parts: Vec<ImportanceSums> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = IMPORTANCE_CHUNK.min(params.n_samples - c * IMPORTANCE_CHUNK);
            importance_chunk(params, c, len)
        })
        .collect();
    let s = parts.into_iter().fold(ImportanceSums::empty(), ImportanceSums::merge);
    let mean = s.wm / s.w;
    // Delta-method variance of a ratio estimator.
    let var = (s.wwmm - 2.0 * mean * s.wwm + mean * mean * s.ww).max(0.0) / (s.w * s.w);
    let ess = s.w * s.w / s.ww;
    EnsembleEstimate {
        sampler: Sampler::Importance,
        n_samples: s.count,
        m2_mean: mean,
        std_error: var.sqrt(),
        effective_sample_size: ess,
        acceptance_rate: None,
        max_weight: Some(s.w_max / s.w),
        weight_frac_above_eps: s.w_eps / s.w,
        degenerate: ess < MIN_ESS,
    }
}

struct ChainResult {
    m2: Vec<f64>,
    accepted: usize,
    proposed: usize,
}

fn run_chain(params: &EnsembleParams, chain: usize, len: usize) -> ChainResult {
    let n = params.n;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &[1, chain as u64]));
    let burn = len / 10;
    let normalize = |v: &mut Vec<C64>| {
        let s = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= s);
    };
    let energy = |phi: &[C64]| {
        let p: Vec<f64> = phi.iter().map(|z| z.norm_sqr()).collect();
        let (m, d) = moments(&p);
        (f_of(n, params.beta, params.omega, m, d), m * m)
    };
    let mut phi = sample_phi(n, &mut rng);
    normalize(&mut phi);
    let (mut f, mut m2) = energy(&phi);
    let mut step = params.step_size;
    let comp = (2.0 * (n + 1) as f64).sqrt();
    let mut out = Vec::with_capacity(len - burn);
    let (mut accepted, mut proposed, mut window) = (0, 0, 0);
    for it in 0..len {
        let xi = sample_phi(n, &mut rng);
        let mut prop: Vec<C64> = phi.iter().zip(&xi).map(|(a, b)| a + b * (step / comp)).collect();
        normalize(&mut prop);
        let (fp, m2p) = energy(&prop);
        let u: f64 = rng.random();
        let ok = fp <= f || u < (f - fp).exp();
        if ok {
            phi = prop;
            f = fp;
            m2 = m2p;
        }
        if it < burn {
            window += ok as usize;
            if (it + 1) % 100 == 0 {
                // Steer the acceptance rate toward 0.3 while burning in.
                step *= ((window as f64 / 100.0 - 0.3) * 2.0).exp();
                step = step.clamp(1e-6, 2.0);
                window = 0;
            }
        } else {
            accepted += ok as usize;
            proposed += 1;
            out.push(m2);
        }
    }
    ChainResult {
        m2: out,
        accepted,
        proposed,
    }
}

fn estimate_metropolis(params: &EnsembleParams) -> EnsembleEstimate {
    let per = params.n_samples.div_ceil(params.chains).max(100);
    let chains: Vec<ChainResult> = (0..params.chains)
        .into_par_iter()
        .map(|c| run_chain(params, c, per))
        .collect();
    let all: Vec<f64> = chains.iter().flat_map(|c| c.m2.iter().copied()).collect();
    let total = all.len() as f64;
    let mean = all.iter().sum::<f64>() / total;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (total - 1.0).max(1.0);
    // Batch means within each chain.
    let batches_per_chain = 20;
    let mut batch_means = Vec::new();
    for c in &chains {
        let b = c.m2.len() / batches_per_chain;
        if b == 0 {
            continue;
        }
        for chunk in c.m2.chunks_exact(b) {
            batch_means.push(chunk.iter().sum::<f64>() / b as f64);
        }
    }
    let nb = batch_means.len() as f64;
    let bm_var = batch_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nb - 1.0).max(1.0);
    let se = (bm_var / nb).sqrt();
    let ess = if se > 0.0 { (var / (se * se)).min(total) } else { total };
    let frac = all.iter().filter(|&&v| v > params.epsilon).count() as f64 / total;
    let accepted: usize = chains.iter().map(|c| c.accepted).sum();
    let proposed: usize = chains.iter().map(|c| c.proposed).sum();
    EnsembleEstimate {
        sampler: Sampler::Metropolis,
        n_samples: all.len(),
        m2_mean: mean,
        std_error: se,
        effective_sample_size: ess,
        acceptance_rate: Some(accepted as f64 / proposed.max(1) as f64),
        max_weight: None,
        weight_frac_above_eps: frac,
        degenerate: ess < MIN_ESS,
    }
}

/// Monte Carlo estimate of `[m²]`. Independent seed streams are combined
/// in a fixed order, so results do not depend on the thread count.
pub fn estimate_m2(params: &EnsembleParams) -> Result<EnsembleEstimate> {
    params.validate()?;
    Ok(match params.sampler {
        Sampler::Importance => estimate_importance(params),
        Sampler::Metropolis => estimate_metropolis(params),
    })
}

/// Composite Gauss-Legendre rule on `[a, b]`.
fn integrate(rule: &GaussLegendre, panels: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| rule.integrate(a + i as f64 * h, a + (i + 1) as f64 * h, &f))
        .sum()
}

/// `[m²]` by quadrature over the simplex of `|ϕ_n|²`, which is uniformly
/// distributed for uniform complex directions. `N ∈ {1, 2}`.
pub fn exact_m2_small_n(n: usize, beta: f64, omega: f64) -> Result<f64> {
    if !(beta >= 0.0 && omega >= 0.0) {
        return Err(WfeError::param("beta", "beta and omega must be non-negative"));
    }
    let rule = GaussLegendre::new(NonZeroUsize::new(20).expect("nonzero"));
    let panels = 64;
    // f ≥ 0 with minimum 0, so e^{−f} never overflows.
    let weight = |p: &[f64]| {
        let (m, d) = moments(p);
        ((-f_of(n, beta, omega, m, d)).exp(), m * m)
    };
    match n {
        1 => {
            let num = integrate(&rule, panels, 0.0, 1.0, |u| {
                let (w, m2) = weight(&[u, 1.0 - u]);
                w * m2
            });
            let den = integrate(&rule, panels, 0.0, 1.0, |u| weight(&[u, 1.0 - u]).0);
            Ok(num / den)
        }
        2 => {
            let inner = |u0: f64, with_m2: bool| {
                let rest = 1.0 - u0;
                rest * integrate(&rule, panels / 4, 0.0, 1.0, |r| {
                    let u2 = rest * r;
                    let (w, m2) = weight(&[u0, (rest - u2).max(0.0), u2]);
                    if with_m2 {
                        w * m2
                    } else {
                        w
                    }
                })
            };
            let num = integrate(&rule, panels / 4, 0.0, 1.0, |u0| inner(u0, true));
            let den = integrate(&rule, panels / 4, 0.0, 1.0, |u0| inner(u0, false));
            Ok(num / den)
        }
        _ => Err(WfeError::param("n", "quadrature oracle covers N = 1 and N = 2 only")),
    }
}

/// One cell of a magnetization scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub beta: f64,
    pub omega: f64,
    pub estimate: EnsembleEstimate,
}

impl CurveRow {
    pub const CSV_HEADER: &'static str = "N,beta,omega,sampler,n_samples,m2,std_error,ess,weight_frac_above_eps";

    pub fn csv_row(&self) -> String {
        let e = &self.estimate;
        format!(
            "{},{},{},{},{},{:.10e},{:.6e},{:.3},{:.6}",
            self.n,
            self.beta,
            self.omega,
            e.sampler.name(),
            e.n_samples,
            e.m2_mean,
            e.std_error,
            e.effective_sample_size,
            e.weight_frac_above_eps
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveParams {
    pub n_list: Vec<usize>,
    pub beta_grid: Vec<f64>,
    pub omega_list: Vec<f64>,
    /// Sampler, sample count, step and threshold shared by every cell.
    pub base: EnsembleParams,
    /// Rerun degenerate importance cells with Metropolis.
    pub fallback: bool,
}

impl Default for CurveParams {
    fn default() -> Self {
        Self {
            n_list: vec![10, 50, 100],
            beta_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0],
            omega_list: vec![0.0, 2.0],
            base: EnsembleParams::default(),
            fallback: true,
        }
    }
}

/// `[m²]` over `(N, β, ω)`; each cell has its own seed stream.
pub fn magnetization_curve(p: &CurveParams) -> Result<Vec<CurveRow>> {
    let mut cells = Vec::new();
    for (i, &n) in p.n_list.iter().enumerate() {
        for (j, &beta) in p.beta_grid.iter().enumerate() {
            for (k, &omega) in p.omega_list.iter().enumerate() {
                let params = EnsembleParams {
                    n,
                    beta,
                    omega,
                    seed: derive_seed(p.base.seed, &[i as u64, j as u64, k as u64]),
                    ..p.base.clone()
                };
                params.validate()?;
                cells.push(params);
            }
        }
    }
    cells
        .par_iter()
        .map(|params| {
            let mut est = estimate_m2(params)?;
            if p.fallback && est.degenerate && params.sampler == Sampler::Importance {
                est = estimate_m2(&EnsembleParams {
                    sampler: Sampler::Metropolis,
                    ..params.clone()
                })?;
            }
            Ok(CurveRow {
                n: params.n,
                beta: params.beta,
                omega: params.omega,
                estimate: est,
            })
        })
        .collect()
}

/// Smallest scanned `β` at which `[m²]` exceeds `eps`, per `(N, ω)`.
pub fn crossing_beta(rows: &[CurveRow], n: usize, omega: f64, eps: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.n == n && r.omega == omega && r.estimate.m2_mean > eps)
        .map(|r| r.beta)
        .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.min(b))))
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(CurveRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[(usize, f64)], n: usize) -> Vec<C64> {
        let mut phi = vec![C64::new(0.0, 0.0); n + 1];
        for &(k, a) in v {
            phi[k] = C64::new(a, 0.0);
        }
        phi
    }

    #[test]
    fn polarized_and_cat_moments() {
        let (m, d) = m_and_d(&unit(&[(0, 1.0)], 6), 6).unwrap();
        assert_eq!((m, d), (1.0, 0.0));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let (m, d) = m_and_d(&unit(&[(0, r), (6, r)], 6), 6).unwrap();
        assert!(m.abs() < 1e-15 && (d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f_of_cat_is_n_beta_omega() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let p = EnsembleParams {
            n: 5,
            beta: 0.7,
            omega: 3.0,
            ..Default::default()
        };
        let f = f_value(&unit(&[(0, r), (5, r)], 5), &p).unwrap();
        assert!((f - 5.0 * 0.7 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_input_rejected() {
        assert!(matches!(
            m_and_d(&unit(&[(0, 0.5)], 3), 3),
            Err(WfeError::NotNormalized(_))
        ));
    }

    #[test]
    fn quadrature_oracles() {
        assert!((exact_m2_small_n(1, 0.0, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((exact_m2_small_n(2, 0.0, 5.0).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert!((exact_m2_small_n(1, 1.0, 1.0).unwrap() - 0.429_230_705_827_751).abs() < 1e-10);
        assert!(exact_m2_small_n(3, 1.0, 1.0).is_err());
    }
}
