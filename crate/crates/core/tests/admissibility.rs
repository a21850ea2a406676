mod common;

use std::sync::Arc;

use proptest::prelude::*;

use common::DenseOracle;
use wfe_core::admissibility::{
    anomaly_unchecked, build_g, check_com_momentum, check_com_position, check_spin_sector, commutator_expectation,
    constraint_report, OpPoly, OperatorSet, TestFamily, ANOMALY_CONSTANT,
};
use wfe_core::dynamics::{wfe_gradient, Method, ModelSpec, Propagator};
use wfe_core::linalg::inner;
use wfe_core::spectral::{term_expectation, ExternalPotential, GridHamiltonian, GridOps, GridTerm};
use wfe_core::state::{FamilyKind, GridGeometry, GridState, OperatorFamily, Wavefunction};
use wfe_core::{LinearOp, C64};

fn oracle_case(kind: FamilyKind) -> (OperatorSet, GridState, DenseOracle) {
    let spin = if kind == FamilyKind::TotalJz { 2 } else { 1 };
    let g = GridGeometry::new(2, 2, 16, 6.0, spin).unwrap();
    let set = OperatorSet::new(g, kind).unwrap();
    let st = TestFamily::default().build(g).unwrap();
    (set, st, DenseOracle::new(&g))
}

const SPATIAL: [FamilyKind; 4] = [
    FamilyKind::PositionX,
    FamilyKind::MomentumPx,
    FamilyKind::AngularMomentumLz,
    FamilyKind::TotalJz,
];

#[test]
fn commutators_match_dense_oracle() {
    for kind in SPATIAL {
        let (set, st, oracle) = oracle_case(kind);
        for k in 0..2 {
            let g = build_g(&set, &st, k).unwrap();
            for momentum in [false, true] {
                let a = if momentum { GridTerm::P(k, 0) } else { GridTerm::X(k, 0) };
                let (v, _) = commutator_expectation(set.ops(), a, &g, &st);
                let want = oracle.com_check(kind, k, momentum, st.amplitudes());
                assert!(
                    (v - want).norm() <= 1e-10,
                    "{kind} k={k} momentum={momentum}: {v} vs {want}"
                );
            }
        }
    }
}

#[test]
fn anomaly_matches_dense_oracle() {
    let (set, st, oracle) = oracle_case(FamilyKind::AngularMomentumLz);
    for k in 0..2 {
        let got = anomaly_unchecked(set.ops(), &st, k);
        let want = oracle.anomaly(k, st.amplitudes());
        assert!(want.im.abs() <= 1e-12, "{want}");
        assert!(got.abs() > 1e-3, "{got}");
        assert!((got - want.re).abs() <= 1e-10, "k={k}: {got} vs {want}");
    }
}

#[test]
fn angular_momentum_violation_is_visible_on_a_small_grid() {
    let (_, st, oracle) = oracle_case(FamilyKind::AngularMomentumLz);
    let psi = st.amplitudes();
    let n2 = oracle.inner(psi, psi).re;
    let xpsi = oracle.pos(0, 0, psi);
    let gpsi = oracle.g_apply(FamilyKind::AngularMomentumLz, 0, psi, psi);
    let scale = 2.0 * (oracle.inner(&xpsi, &xpsi).re * oracle.inner(&gpsi, &gpsi).re).sqrt() / n2;
    let v = oracle.com_check(FamilyKind::AngularMomentumLz, 0, false, psi);
    assert!(v.norm() > 1e-3 * scale, "{v} vs scale {scale}");
    assert!(v.re.abs() <= 1e-10 * scale);
}

#[test]
fn gradient_is_g_plus_complement() {
    let w = 0.7;
    for kind in SPATIAL {
        let (set, st, _) = oracle_case(kind);
        let family = OperatorFamily::all(kind, 2);
        let grad = wfe_gradient(&st, w, &family).unwrap();
        let ops = set.ops();
        let mu: f64 = (0..2).map(|i| term_expectation(ops, set.site(i), &st)).sum();
        for k in 0..2 {
            let mut total = build_g(&set, &st, k).unwrap();
            let j = set.site(1 - k);
            total.push(1.0, &[j, j]);
            total.push(-2.0 * mu, &[j]);
            let ours = total.apply_vec(st.amplitudes());
            let scale = grad.amplitudes().iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (a, b) in ours.iter().zip(grad.amplitudes()) {
                assert!((a * w - b).norm() <= 1e-12 * scale, "{kind} k={k}");
            }
        }
    }
}

#[test]
fn position_and_momentum_pass_on_a_calibrated_grid() {
    let g = GridGeometry::new(2, 1, 64, 10.0, 1).unwrap();
    let st = TestFamily::default().build(g).unwrap();
    for kind in [FamilyKind::PositionX, FamilyKind::MomentumPx] {
        let set = OperatorSet::new(g, kind).unwrap();
        assert!(set.calibration(&st).unwrap() < 1e-12);
        for k in 0..2 {
            let x = check_com_position(&set, &st, k).unwrap();
            let p = check_com_momentum(&set, &st, k).unwrap();
            assert!(x.pass && p.pass, "{kind}: {x:?} {p:?}");
        }
        let exact = match kind {
            FamilyKind::PositionX => check_com_position(&set, &st, 0).unwrap(),
            _ => check_com_momentum(&set, &st, 0).unwrap(),
        };
        assert!(exact.value().norm() <= 1e-14 * exact.scale, "{exact:?}");
    }
}

#[test]
fn report_serializes_with_fixed_keys() {
    let g = GridGeometry::new(2, 1, 64, 10.0, 1).unwrap();
    let st = TestFamily::default().build(g).unwrap();
    let set = OperatorSet::new(g, FamilyKind::PositionX).unwrap();
    let r = constraint_report(&set, &st).unwrap();
    assert!(r.verdict());
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert_eq!(v["candidate"], "position_x");
    assert!(v["calibration_residual"].is_number());
    let check = &v["checks"][0];
    for key in ["name", "value_re", "value_im", "scale", "tolerance", "pass"] {
        assert!(!check[key].is_null(), "{key}");
    }
    assert_eq!(r.checks.len(), 4);
}

#[test]
fn spin_sector_terms_vanish_on_products() {
    let (set, st, _) = oracle_case(FamilyKind::TotalJz);
    for k in 0..2 {
        let s = check_spin_sector(&set, &st, k).unwrap();
        assert!(s.is_product());
        assert!(s.spin.norm() <= 1e-12 && s.mixed.norm() <= 1e-12, "{s:?}");
    }
}

#[test]
fn spin_sector_mixed_term_survives_entanglement() {
    let g = GridGeometry::new(2, 2, 16, 6.0, 2).unwrap();
    let set = OperatorSet::new(g, FamilyKind::TotalJz).unwrap();
    let spatial = GridGeometry::new(2, 2, 16, 6.0, 1).unwrap();
    let a = TestFamily::default().build(spatial).unwrap();
    // b is a moved by three cells along particle 0's y axis
    let stride = spatial.axis_stride(spatial.axis(0, 1));
    let b: Vec<C64> = (0..spatial.len())
        .map(|i| {
            let j = spatial.axis_index(i, spatial.axis(0, 1));
            a.amplitudes()[i - j * stride + ((j + 16 - 3) % 16) * stride]
        })
        .collect();
    // a(r)|↑↑⟩ + b(r)|↓↓⟩
    let amps: Vec<C64> = a
        .amplitudes()
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| [*x, C64::new(0.0, 0.0), C64::new(0.0, 0.0), *y])
        .collect();
    let mut st = GridState::new(g, amps).unwrap();
    st.normalize();
    let s = check_spin_sector(&set, &st, 0).unwrap();
    assert!(!s.is_product());
    assert!(s.mixed.norm() > 1e-4, "{s:?}");
}

/// `d⟨X_k⟩/dt` under an `L_z` penalty equals `⟨P_k⟩/m + w Φ_k`.
#[test]
fn anomaly_predicts_the_com_velocity() {
    assert_eq!(ANOMALY_CONSTANT, 1.0);
    let g = GridGeometry::new(2, 2, 32, 7.5, 1).unwrap();
    let ops = GridOps::new(g).unwrap();
    let st = TestFamily {
        coupling: 0.1,
        kick: 0.2,
        ..TestFamily::default()
    }
    .build(g)
    .unwrap();
    let h = Arc::new(GridHamiltonian::new(ops.clone(), 1.0, ExternalPotential::None, 0.0).unwrap());
    let family = OperatorFamily::all(FamilyKind::AngularMomentumLz, 2);
    let phi = ANOMALY_CONSTANT * anomaly_unchecked(&ops, &st, 0);
    let p = term_expectation(&ops, GridTerm::P(0, 0), &st);
    assert!(phi.abs() > 1e-2, "{phi}");
    for w in [0.05, 0.2] {
        let model = ModelSpec::with_family(h.clone(), w, &family, &st).unwrap();
        let dt = 1e-3;
        let mut prop = Propagator::new(&model, st.measure(), dt, Method::Rk4, st.amplitudes());
        let mut psi = st.amplitudes().to_vec();
        let x = |v: &[C64]| inner(v, &ops.term_vec(GridTerm::X(0, 0), v), st.measure()).re;
        let x0 = x(&psi);
        prop.step(&mut psi, 0.0).unwrap();
        let x1 = x(&psi);
        prop.step(&mut psi, dt).unwrap();
        let x2 = x(&psi);
        let slope = (-3.0 * x0 + 4.0 * x1 - x2) / (2.0 * dt);
        let ratio = (slope - p) / (w * phi);
        assert!((ratio - 1.0).abs() <= 0.05, "w={w}: ratio {ratio}");
    }
}

fn sym_geometry() -> GridGeometry {
    GridGeometry::new(2, 2, 8, 4.0, 2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn grid_operators_are_symmetric(seed in any::<u64>()) {
        let g = sym_geometry();
        let ops = GridOps::new(g).unwrap();
        let mut r = common::rng(seed);
        let a = common::random_vec(g.len(), &mut r);
        let b = common::random_vec(g.len(), &mut r);
        let m = g.measure();
        let terms = [
            GridTerm::X(0, 0), GridTerm::X(1, 1), GridTerm::P(0, 1), GridTerm::P(1, 0),
            GridTerm::Lz(0), GridTerm::Lz(1), GridTerm::Sz(0), GridTerm::Jz(1),
        ];
        for t in terms {
            let tb = ops.term_vec(t, &b);
            let ta = ops.term_vec(t, &a);
            let lhs = inner(&a, &tb, m);
            let rhs = inner(&ta, &b, m);
            let scale = (inner(&a, &a, m).re * inner(&tb, &tb, m).re).sqrt();
            prop_assert!((lhs - rhs).norm() <= 1e-10 * scale, "{:?}", t);
        }
    }

    #[test]
    fn polynomial_g_is_symmetric(seed in any::<u64>()) {
        let g = sym_geometry();
        let set = OperatorSet::new(g, FamilyKind::TotalJz).unwrap();
        let st = TestFamily::default().build(g).unwrap();
        let op: OpPoly = build_g(&set, &st, 0).unwrap();
        let mut r = common::rng(seed);
        let a = common::random_vec(g.len(), &mut r);
        let b = common::random_vec(g.len(), &mut r);
        let m = g.measure();
        let gb = op.apply_vec(&b);
        let ga = op.apply_vec(&a);
        let scale = (inner(&a, &a, m).re * inner(&gb, &gb, m).re).sqrt();
        prop_assert!((inner(&a, &gb, m) - inner(&ga, &b, m)).norm() <= 1e-10 * scale);
    }
}
