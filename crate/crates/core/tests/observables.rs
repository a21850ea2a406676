mod common;

use std::sync::Arc;

use proptest::prelude::*;

use wfe_core::dynamics::ModelSpec;
use wfe_core::linalg::ZeroOp;
use wfe_core::observables::{
    classical_force_gap, com_and_momentum, dispersion, energies, macro_estimate, magnetization, symmetric_report,
    well_occupations, MacroMode, SpinValues,
};
use wfe_core::spectral::ExternalPotential;
use wfe_core::state::{
    build_cat_state, build_spin_cat, spin_product_state, BumpShape, FamilyKind, FamilyOperator, GaussianSpec,
    GridBranches, GridGeometry, GridState, OperatorFamily, QubitAmplitudes, SpinState, SymmetricState, Wavefunction,
};
use wfe_core::toy::{dense_of, reduced_model, ToyParams};
use wfe_core::C64;

fn apparatus(n_spins: usize) -> OperatorFamily {
    OperatorFamily::new(FamilyKind::SpinZ, (1..n_spins).collect()).unwrap()
}

fn plus() -> [C64; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [C64::new(h, 0.0), C64::new(h, 0.0)]
}

fn up() -> [C64; 2] {
    [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
}

fn grid_state(g: GridGeometry, f: impl Fn(&[f64]) -> C64) -> GridState {
    let mut s = GridState::new(g, GridState::sample_single(&g, f)).unwrap();
    s.normalize();
    s
}

#[test]
fn dispersion_examples() {
    let top = SymmetricState::basis(5, 0, 0).unwrap();
    assert_eq!(dispersion(&top, &apparatus(5)).unwrap(), 0.0);
    let cat = build_spin_cat(5, QubitAmplitudes::balanced(), false).unwrap();
    assert!((dispersion(&cat, &apparatus(5)).unwrap() - 0.25).abs() <= 1e-15);
    for m in [1, 3, 8, 20] {
        let prod = spin_product_state(m + 1, up(), plus()).unwrap();
        let d = dispersion(&prod, &apparatus(m + 1)).unwrap();
        assert!((d - 1.0 / (4.0 * m as f64)).abs() <= 1e-14, "M={m}: {d}");
    }
}

#[test]
fn incompatible_family_is_an_error() {
    let s = SymmetricState::basis(4, 0, 0).unwrap();
    assert!(dispersion(&s, &OperatorFamily::all(FamilyKind::PositionX, 4)).is_err());
}

#[test]
fn magnetization_examples() {
    let all_up = SpinState::basis(6, 0).unwrap();
    assert_eq!(magnetization(&all_up, SpinValues::Half).unwrap(), 0.5);
    let top = SymmetricState::basis(6, 0, 0).unwrap();
    assert_eq!(magnetization(&top, SpinValues::One).unwrap(), 1.0);
    let cat = build_spin_cat(6, QubitAmplitudes::balanced(), true).unwrap();
    assert!(magnetization(&cat, SpinValues::One).unwrap().abs() <= 1e-15);
}

#[test]
fn reduced_magnetization_matches_the_dicke_sum() {
    let s = common::random_symmetric(7, 4);
    let m = 6;
    // qubit ±1 plus Σ_n |ϕ_n|² (M − 2n)
    let want = (0..=m)
        .map(|n| {
            let (a, b) = (s.get(0, n).norm_sqr(), s.get(1, n).norm_sqr());
            (a - b) + (a + b) * (m as f64 - 2.0 * n as f64)
        })
        .sum::<f64>()
        / 7.0;
    assert!((magnetization(&s, SpinValues::One).unwrap() - want).abs() <= 1e-14);
}

#[test]
fn centre_of_mass_examples() {
    let g = GridGeometry::new(1, 2, 64, 10.0, 1).unwrap();
    let still = GaussianSpec::at(vec![0.0, 0.0], 1.0);
    let (x, p) = com_and_momentum(&grid_state(g, |x| still.eval(x))).unwrap();
    assert!(x.iter().chain(&p).all(|v| v.abs() <= 1e-12), "{x:?} {p:?}");

    let moving = GaussianSpec::at(vec![0.0, 0.0], 1.0).with_momentum(vec![1.5, 0.0]);
    let (_, p) = com_and_momentum(&grid_state(g, |x| moving.eval(x))).unwrap();
    assert!((p[0] - 1.5).abs() <= 1e-10 && p[1].abs() <= 1e-10, "{p:?}");

    let g2 = GridGeometry::new(2, 1, 64, 10.0, 1).unwrap();
    let single = |c: f64| {
        let spec = GaussianSpec::at(vec![c], 0.7);
        GridState::sample_single(&g2, |x| spec.eval(x))
    };
    let mut pair = GridState::from_product(g2, &[single(-2.0), single(2.0)], &[]).unwrap();
    pair.normalize();
    let (x, _) = com_and_momentum(&pair).unwrap();
    assert!(x[0].abs() <= 1e-12, "{x:?}");
}

fn spin_model(n_spins: usize, w: f64) -> ModelSpec {
    let probe = SymmetricState::zeros(n_spins).unwrap();
    ModelSpec::with_family(Arc::new(ZeroOp(2 * n_spins)), w, &apparatus(n_spins), &probe).unwrap()
}

#[test]
fn energy_examples() {
    let p = ToyParams {
        w: 2.5,
        ..ToyParams::default()
    };
    let (model, _) = reduced_model(&p).unwrap();
    let top = SymmetricState::basis(p.n_spins, 0, 0).unwrap();
    let e = energies(&top, &model).unwrap();
    assert_eq!(e.wfe, 0.0);
    assert_eq!(e.total, e.qm);

    let w = 0.3;
    let cat = build_spin_cat(5, QubitAmplitudes::balanced(), false).unwrap();
    assert!((energies(&cat, &spin_model(5, w)).unwrap().wfe - 4.0 * w).abs() <= 1e-14);
    for m in [4, 9, 16] {
        let prod = spin_product_state(m + 1, up(), plus()).unwrap();
        let e = energies(&prod, &spin_model(m + 1, w)).unwrap().wfe;
        assert!((e - w * m as f64 / 4.0).abs() <= 1e-13, "M={m}: {e}");
    }
}

fn log_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn penalty_scales_quadratically_for_cats_and_linearly_for_products() {
    let w = 1.0;
    let mut cat = Vec::new();
    let mut prod = Vec::new();
    let mut d_cat = Vec::new();
    let mut d_prod = Vec::new();
    for m in [4usize, 8, 16] {
        let c = build_spin_cat(m + 1, QubitAmplitudes::balanced(), false).unwrap();
        let q = spin_product_state(m + 1, up(), plus()).unwrap();
        let model = spin_model(m + 1, w);
        cat.push((m as f64, energies(&c, &model).unwrap().wfe));
        prod.push((m as f64, energies(&q, &model).unwrap().wfe));
        d_cat.push((m as f64, dispersion(&c, &apparatus(m + 1)).unwrap()));
        d_prod.push((m as f64, dispersion(&q, &apparatus(m + 1)).unwrap()));
    }
    assert!((log_slope(&cat) - 2.0).abs() <= 0.05);
    assert!((log_slope(&prod) - 1.0).abs() <= 0.05);
    assert!(log_slope(&d_cat).abs() <= 0.05);
    assert!((log_slope(&d_prod) + 1.0).abs() <= 0.05);
}

#[test]
fn occupation_examples() {
    let m = 8;
    let split = m as f64 / 4.0;
    let cat = build_spin_cat(m + 1, QubitAmplitudes::balanced(), true).unwrap();
    let (l, r) = well_occupations(&cat, split).unwrap();
    assert!((l - 0.5).abs() <= 1e-15 && (r - 0.5).abs() <= 1e-15);
    let top = SymmetricState::basis(m + 1, 1, 0).unwrap();
    assert_eq!(well_occupations(&top, split).unwrap(), (0.0, 1.0));
    let p = ToyParams {
        n_spins: m + 1,
        center: 1.0,
        ..ToyParams::default()
    };
    assert_eq!(
        well_occupations(&p.initial_state(3).unwrap(), split).unwrap(),
        (0.0, 0.0)
    );
    assert!(well_occupations(&top, m as f64).is_err());
}

#[test]
fn harmonic_force_gap_vanishes() {
    let g = GridGeometry::new(1, 1, 128, 8.0, 1).unwrap();
    let s = GridState::new(g, common::random_vec(g.len(), &mut common::rng(2))).unwrap();
    assert!(classical_force_gap(&s, &ExternalPotential::Harmonic { k: 3.0 }) <= 1e-14);
    assert_eq!(classical_force_gap(&s, &ExternalPotential::None), 0.0);
}

/// `|⟨v'⟩ − v'(⟨x⟩)| / max|v'|` over points holding more than `1e-12` of
/// the peak density, summed directly.
fn force_gap_oracle(s: &GridState, v: &ExternalPotential) -> f64 {
    let x = s.geometry().coords();
    let p: Vec<f64> = s.amplitudes().iter().map(|z| z.norm_sqr()).collect();
    let total: f64 = p.iter().sum();
    let peak = p.iter().cloned().fold(0.0, f64::max);
    let mean_x = p.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / total;
    let mean_f = p.iter().zip(&x).map(|(a, b)| a * v.force_x(&[*b])).sum::<f64>() / total;
    let scale = p
        .iter()
        .zip(&x)
        .filter(|(a, _)| **a > 1e-12 * peak)
        .map(|(_, b)| v.force_x(&[*b]).abs())
        .fold(0.0, f64::max);
    (mean_f - v.force_x(&[mean_x])).abs() / scale
}

#[test]
fn quartic_force_gap_separates_narrow_packets_from_cats() {
    let g = GridGeometry::new(1, 1, 512, 8.0, 1).unwrap();
    let v = ExternalPotential::Quartic { a: 1.0, b: 2.0 };
    let packets: Vec<GridState> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&sigma| {
            let spec = GaussianSpec::at(vec![2.0], sigma);
            grid_state(g, |x| spec.eval(x))
        })
        .collect();
    let gaps: Vec<f64> = packets.iter().map(|s| classical_force_gap(s, &v)).collect();
    assert!(gaps[2] < gaps[1] && gaps[1] < gaps[0], "{gaps:?}");
    assert!(gaps[2] < 0.01, "{gaps:?}");
    let cat = build_cat_state(&GridBranches {
        geometry: g,
        half_separation: 2.0,
        width: 0.2,
        shape: BumpShape::Gaussian,
        amplitudes: QubitAmplitudes::new(0.8, 0.6, 0.0).unwrap(),
    })
    .unwrap();
    let gap = classical_force_gap(&cat, &v);
    assert!(gap > 10.0 * gaps[2], "{gap} vs {gaps:?}");
    for s in packets.iter().chain([&cat]) {
        let want = force_gap_oracle(s, &v);
        assert!((classical_force_gap(s, &v) - want).abs() <= 1e-12 * want, "{want}");
    }
}

#[test]
fn macroscopic_estimates() {
    let cat = macro_estimate(1e-25, 1e20, 1e-2, MacroMode::Cat).unwrap();
    assert!((cat - 1e11).abs() <= 1e-15 * 1e11, "{cat}");
    assert_eq!(macro_estimate(1e-25, 1e20, 1e-6, MacroMode::Product).unwrap(), 1e-17);
    let hydrogen = macro_estimate(1e-25, 1.0, 6e-11, MacroMode::Cat).unwrap();
    assert!((hydrogen - 3.6e-46).abs() <= 1e-15 * 3.6e-46, "{hydrogen}");
    assert!(macro_estimate(0.0, 1.0, 1.0, MacroMode::Cat).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dispersion_is_nonnegative(n in 1usize..9, seed in any::<u64>()) {
        let s = common::random_spin(n, seed);
        let d = dispersion(&s, &OperatorFamily::all(FamilyKind::SpinZ, n)).unwrap();
        prop_assert!(d >= -1e-14);
        let s = common::random_symmetric(n + 1, seed);
        prop_assert!(dispersion(&s, &apparatus(n + 1)).unwrap() >= -1e-14);
    }

    #[test]
    fn zero_dispersion_exactly_on_eigenstates(n in 1usize..=8, seed in any::<u64>()) {
        let probe = SpinState::zeros(n).unwrap();
        let family = OperatorFamily::all(FamilyKind::SpinZ, n);
        let op = probe.family_operator(&family).unwrap();
        let eig = dense_of(op.as_ref()).symmetric_eigen();
        let mut r = common::rng(seed);
        let dim = 1usize << n;
        // eigenvectors, and random mixtures inside one eigenspace
        for k in 0..dim {
            let v: Vec<C64> = eig.eigenvectors.column(k).iter().map(|x| C64::new(*x, 0.0)).collect();
            let s = SpinState::new(n, v).unwrap();
            prop_assert!(dispersion(&s, &family).unwrap().abs() <= 1e-14);
        }
        let lam = eig.eigenvalues[(seed % dim as u64) as usize];
        let coeffs = common::random_vec(dim, &mut r);
        let mut v = vec![C64::new(0.0, 0.0); dim];
        for k in (0..dim).filter(|&k| (eig.eigenvalues[k] - lam).abs() < 1e-9) {
            for (i, x) in eig.eigenvectors.column(k).iter().enumerate() {
                v[i] += coeffs[k] * x;
            }
        }
        let s = SpinState::new(n, common::normalized(v)).unwrap();
        prop_assert!(dispersion(&s, &family).unwrap().abs() <= 1e-14);
        // conversely D is the squared eigen-residual, so D = 0 forces an eigenstate
        let s = common::random_spin(n, seed);
        let o = op.apply_vec(s.amplitudes());
        let mu = op.expectation(s.amplitudes(), 1.0);
        let resid: f64 = o.iter().zip(s.amplitudes()).map(|(a, b)| (a - b * mu).norm_sqr()).sum();
        let d = dispersion(&s, &family).unwrap();
        prop_assert!((d * (n * n) as f64 - resid).abs() <= 1e-12);
        if n > 1 {
            prop_assert!(d > 1e-6);
        }
    }

    #[test]
    fn report_invariants(n in 2usize..12, seed in any::<u64>(), w in 0.0f64..5.0) {
        let p = ToyParams { n_spins: n, w, center: 0.0, ..ToyParams::default() };
        let (model, _) = reduced_model(&p).unwrap();
        let s = common::random_symmetric(n, seed);
        let split = p.r() / 2.0;
        let r = symmetric_report(0.0, &s, &model, split).unwrap();
        let nf = n as f64;
        prop_assert!((r.e_wfe - w * nf * nf * r.d).abs() <= 1e-12 * (1.0 + r.e_wfe));
        prop_assert!(r.d >= -1e-14);
        let (pl, pr) = (r.p_left.unwrap(), r.p_right.unwrap());
        prop_assert!(pl + pr <= 1.0 + 1e-12);
        let readout = SymmetricState::readout_diagonal(n);
        let middle: f64 = s.amplitudes().iter().zip(&readout)
            .filter(|(_, v)| v.abs() <= split)
            .map(|(z, _)| z.norm_sqr())
            .sum();
        prop_assert!((pl + pr + middle - 1.0).abs() <= 1e-12);
    }
}
