mod common;

use std::sync::Arc;

use proptest::prelude::*;

use wfe_core::dynamics::{evolve, rhs, sensitivity_run, wfe_gradient, EvolveParams, Method, ModelSpec, Propagator};
use wfe_core::linalg::{inner, ZeroOp};
use wfe_core::observables::symmetric_report;
use wfe_core::spectral::{term_expectation, ExternalPotential, GridHamiltonian, GridOps, GridTerm};
use wfe_core::state::{
    FamilyKind, GaussianSpec, GridGeometry, GridState, OperatorFamily, QubitAmplitudes, SymmetricState, Wavefunction,
};
use wfe_core::toy::{
    dense_of, reduced_model, run_measurement, Classifier, FullToyHamiltonian, RunParams, ToyHamiltonian, ToyParams,
};
use wfe_core::{LinearOp, C64};

fn spin_z(n: usize) -> OperatorFamily {
    OperatorFamily::all(FamilyKind::SpinZ, n)
}

fn toy(n_spins: usize, w: f64) -> ToyParams {
    ToyParams {
        n_spins,
        w,
        center: if n_spins.is_multiple_of(2) { 0.5 } else { 1.0 },
        ..ToyParams::default()
    }
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn gradient_on_an_eigenstate_is_a_real_multiple() {
    // qubit up, M = 5, two apparatus spins down: Σ s = 1/2 + 1/2
    let s = SymmetricState::basis(6, 0, 2).unwrap();
    let w = 0.7;
    let g = wfe_gradient(&s, w, &spin_z(6)).unwrap();
    for (a, b) in g.amplitudes().iter().zip(s.amplitudes()) {
        assert!((a + b * w).norm() <= 1e-15);
    }
    let zero = wfe_gradient(&common::random_symmetric(6, 1), 0.0, &spin_z(6)).unwrap();
    assert!(zero.amplitudes().iter().all(|z| z.norm() == 0.0));
}

/// `∂E/∂ψ*` by central differences of the unnormalized penalty
/// `w(⟨ψ|O²|ψ⟩ − ⟨ψ|O|ψ⟩²)`.
fn fd_gradient(model: &ModelSpec, psi: &[C64], h: f64) -> Vec<C64> {
    let e = |v: &[C64]| model.energy(v, 1.0);
    (0..psi.len())
        .map(|j| {
            let mut part = [0.0; 2];
            for (c, dir) in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)].into_iter().enumerate() {
                let mut p = psi.to_vec();
                p[j] += dir * h;
                let up = e(&p);
                p[j] -= dir * (2.0 * h);
                part[c] = (up - e(&p)) / (2.0 * h);
            }
            C64::new(part[0], part[1]) / 2.0
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let w = 1.3;
    let probe = SymmetricState::zeros(6).unwrap();
    let model = ModelSpec::with_family(Arc::new(ZeroOp(12)), w, &spin_z(6), &probe).unwrap();
    for seed in 0..20 {
        let s = common::random_symmetric(6, seed);
        let g = wfe_gradient(&s, w, &spin_z(6)).unwrap();
        let fd = fd_gradient(&model, s.amplitudes(), 1e-5);
        let norm = g.amplitudes().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let err = g
            .amplitudes()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-6 * norm, "seed {seed}: {err} vs {norm}");
    }
}

#[test]
fn stationary_state_only_rotates() {
    let p = toy(6, 0.0);
    let h = Arc::new(ToyHamiltonian::new(&p).unwrap());
    let eig = dense_of(h.as_ref()).symmetric_eigen();
    let k = 3;
    let e = eig.eigenvalues[k];
    let v: Vec<C64> = eig.eigenvectors.column(k).iter().map(|x| C64::new(*x, 0.0)).collect();
    let s = SymmetricState::new(6, v).unwrap();
    let model = ModelSpec::linear(h);
    let r = rhs(&s, &model).unwrap();
    for (a, b) in r.amplitudes().iter().zip(s.amplitudes()) {
        assert!((a - C64::new(0.0, -e) * b).norm() <= 1e-12);
    }
    let t = 2.0;
    for method in [Method::ConservativeMidpoint, Method::ImplicitMidpoint] {
        let ev = evolve(&s, &model, &EvolveParams::new(t, 0.01, method, 50), |t, s| {
            wfe_core::dynamics::basic_report(t, s, &model)
        })
        .unwrap();
        let target: Vec<C64> = s
            .amplitudes()
            .iter()
            .map(|z| z * C64::from_polar(1.0, -e * t))
            .collect();
        let fid = inner(&target, ev.state.amplitudes(), 1.0).norm();
        assert!(fid >= 1.0 - 1e-8, "{}: {fid}", method.name());
    }
}

#[test]
fn pure_penalty_keeps_an_eigenstate_in_place() {
    let s = SymmetricState::basis(6, 0, 2).unwrap();
    let (w, lam, t) = (0.7, 1.0, 3.0);
    let model = ModelSpec::with_family(Arc::new(ZeroOp(12)), w, &spin_z(6), &s).unwrap();
    let ev = evolve(
        &s,
        &model,
        &EvolveParams::new(t, 0.01, Method::default(), 100),
        |t, s| wfe_core::dynamics::basic_report(t, s, &model),
    )
    .unwrap();
    let idx = s.index(0, 2);
    let z = ev.state.amplitudes()[idx];
    assert!((z.norm_sqr() - 1.0).abs() <= 1e-10);
    // the midpoint rule advances `ψ̇ = i a ψ` by exactly `2 atan(a dt / 2)` per step
    let phase = 300.0 * 2.0 * (w * lam * lam * 0.01 / 2.0f64).atan();
    assert!((z - C64::from_polar(1.0, phase)).norm() <= 1e-10, "{z}");
    assert!((z - C64::from_polar(1.0, w * lam * lam * t)).norm() <= 1e-4, "{z}");
}

fn endpoint(p: &ToyParams, method: Method, t: f64, dt: f64) -> Vec<C64> {
    let (model, _) = reduced_model(p).unwrap();
    let s0 = p.initial_state(5).unwrap();
    let steps = (t / dt).round() as usize;
    let ev = evolve(&s0, &model, &EvolveParams::new(t, dt, method, steps), |t, s| {
        wfe_core::dynamics::basic_report(t, s, &model)
    })
    .unwrap();
    ev.state.amplitudes().to_vec()
}

#[test]
fn integrators_are_second_order() {
    let p = ToyParams {
        rho: 0.1,
        ..toy(6, 1.0)
    };
    let (t, dt) = (0.5, 0.01);
    for method in [
        Method::ImplicitMidpoint,
        Method::ConservativeMidpoint,
        Method::ExtendedPhaseSpace { omega: 20.0 },
    ] {
        let reference = endpoint(&p, method, t, dt / 2.0 / 16.0);
        let e1 = max_diff(&endpoint(&p, method, t, dt), &reference);
        let e2 = max_diff(&endpoint(&p, method, t, dt / 2.0), &reference);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() <= 1.0, "{}: ratio {ratio}", method.name());
    }
}

#[test]
fn conservative_midpoint_conserves_norm_and_energy() {
    let p = ToyParams {
        rho: 0.05,
        ..toy(10, 1.0)
    };
    let (model, _) = reduced_model(&p).unwrap();
    let s0 = p.initial_state(2).unwrap();
    let split = p.split();
    let ev = evolve(
        &s0,
        &model,
        &EvolveParams::new(5.0, 0.01, Method::ConservativeMidpoint, 10),
        |t, s| symmetric_report(t, s, &model, split),
    )
    .unwrap();
    let e0 = ev.record.reports[0].e_total;
    for r in &ev.record.reports {
        assert!((r.norm - 1.0).abs() <= 1e-9);
        assert!(
            (r.e_total - e0).abs() <= 1e-6 * e0.abs(),
            "t={}: {}",
            r.t,
            r.e_total - e0
        );
    }
}

#[test]
fn implicit_midpoint_conserves_the_norm() {
    let p = ToyParams {
        rho: 0.05,
        ..toy(10, 1.0)
    };
    let (model, _) = reduced_model(&p).unwrap();
    let ev = evolve(
        &p.initial_state(2).unwrap(),
        &model,
        &EvolveParams::new(5.0, 0.01, Method::ImplicitMidpoint, 10),
        |t, s| wfe_core::dynamics::basic_report(t, s, &model),
    )
    .unwrap();
    assert!(ev.record.reports.iter().all(|r| (r.norm - 1.0).abs() <= 1e-9));
    assert!(ev.record.max_residual <= 1e-12 && ev.record.max_iterations <= 50);
}

#[test]
fn evolution_is_phase_covariant() {
    let p = ToyParams {
        rho: 0.1,
        ..toy(8, 2.0)
    };
    let (model, _) = reduced_model(&p).unwrap();
    let s0 = p.initial_state(7).unwrap();
    let mut rotated = s0.clone();
    rotated.rotate_phase(0.9);
    let params = EvolveParams::new(1.0, 0.005, Method::default(), 200);
    let run = |s: &SymmetricState| {
        evolve(s, &model, &params, |t, s| {
            wfe_core::dynamics::basic_report(t, s, &model)
        })
        .unwrap()
        .state
    };
    let mut a = run(&s0);
    a.rotate_phase(0.9);
    assert!(max_diff(a.amplitudes(), run(&rotated).amplitudes()) <= 1e-10);
}

#[test]
fn trajectory_records_start_at_the_initial_state() {
    let p = toy(6, 1.0);
    let (model, _) = reduced_model(&p).unwrap();
    let s0 = p.initial_state(1).unwrap();
    let split = p.split();
    let probe = |t, s: &SymmetricState| symmetric_report(t, s, &model, split);
    let ev = evolve(&s0, &model, &EvolveParams::new(1.0, 0.01, Method::default(), 7), probe).unwrap();
    assert_eq!(ev.record.reports[0], probe(0.0, &s0).unwrap());
    assert!(ev.record.times.windows(2).all(|w| w[1] > w[0]));
    assert!((ev.record.times.last().unwrap() - 1.0).abs() <= 1e-12);
    assert_eq!(ev.record.steps, 100);
}

#[test]
fn oversized_steps_fail_numerically() {
    let p = toy(10, 50.0);
    let (model, _) = reduced_model(&p).unwrap();
    let err = evolve(
        &p.initial_state(1).unwrap(),
        &model,
        &EvolveParams::new(20.0, 2.0, Method::default(), 1),
        |t, s| wfe_core::dynamics::basic_report(t, s, &model),
    )
    .err()
    .expect("dt far above the stable range");
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn identical_inputs_do_not_diverge() {
    let p = toy(8, 1.0);
    let (model, _) = reduced_model(&p).unwrap();
    let s = p.initial_state(3).unwrap();
    let readout = SymmetricState::readout_diagonal(8);
    let series = sensitivity_run(
        &s,
        &s,
        &model,
        &EvolveParams::new(1.0, 0.01, Method::default(), 10),
        &readout,
    )
    .unwrap();
    assert!(series
        .distribution_distance
        .iter()
        .chain(&series.delta_mean)
        .all(|v| *v == 0.0));
}

#[test]
fn linear_runs_keep_nearby_states_nearby() {
    let eps = 0.01;
    let a = ToyParams {
        qubit: QubitAmplitudes::biased(eps),
        rho: 0.0,
        ..toy(10, 0.0)
    };
    let b = ToyParams {
        qubit: QubitAmplitudes::biased(-eps),
        ..a.clone()
    };
    let (model, _) = reduced_model(&a).unwrap();
    let (sa, sb) = (a.initial_state(0).unwrap(), b.initial_state(0).unwrap());
    let gap = max_diff(sa.amplitudes(), sb.amplitudes()) * (sa.amplitudes().len() as f64).sqrt();
    let readout = SymmetricState::readout_diagonal(10);
    let series = sensitivity_run(
        &sa,
        &sb,
        &model,
        &EvolveParams::new(3.0, 0.01, Method::default(), 10),
        &readout,
    )
    .unwrap();
    // ‖p_a − p_b‖₂ ≤ ‖p_a − p_b‖₁ ≤ 2 ‖ψ_a − ψ_b‖, and unitarity keeps the latter fixed
    assert!(series.distribution_distance.iter().all(|d| *d <= 2.0 * gap), "{gap}");
}

#[test]
fn small_bias_picks_the_outcome() {
    let run = RunParams::default();
    for seed in [0, 1] {
        for eps in [0.01, -0.01] {
            let p = ToyParams {
                qubit: QubitAmplitudes::biased(eps),
                ..ToyParams::default()
            };
            let m = run_measurement(&p, &run, &Classifier::default(), seed).unwrap();
            assert_eq!(m.final_readout_mean.signum(), eps.signum(), "seed {seed} eps {eps}");
        }
    }
}

#[test]
fn hamiltonians_are_symmetric() {
    let mut r = common::rng(4);
    let ops: Vec<Arc<dyn LinearOp>> = vec![
        Arc::new(ToyHamiltonian::new(&toy(7, 0.0)).unwrap()),
        Arc::new(FullToyHamiltonian::new(&toy(5, 0.0)).unwrap()),
        Arc::new(
            GridHamiltonian::new(
                GridOps::new(GridGeometry::new(2, 2, 8, 4.0, 2).unwrap()).unwrap(),
                1.5,
                ExternalPotential::Harmonic { k: 0.5 },
                0.3,
            )
            .unwrap(),
        ),
    ];
    for h in ops {
        let a = common::random_vec(h.dim(), &mut r);
        let b = common::random_vec(h.dim(), &mut r);
        let hb = h.apply_vec(&b);
        let lhs = inner(&a, &hb, 1.0);
        let rhs = inner(&h.apply_vec(&a), &b, 1.0);
        let scale = (inner(&a, &a, 1.0).re * inner(&hb, &hb, 1.0).re).sqrt();
        assert!((lhs - rhs).norm() <= 1e-10 * scale);
    }
}

/// `d⟨X_0⟩/dt` from a five-point stencil against `⟨P_0⟩/m`.
#[test]
fn ehrenfest_holds_for_admissible_penalties() {
    let g = GridGeometry::new(2, 1, 64, 10.0, 1).unwrap();
    let ops = GridOps::new(g).unwrap();
    let mass = 1.7;
    let h = Arc::new(GridHamiltonian::new(ops.clone(), mass, ExternalPotential::Harmonic { k: 0.4 }, 0.2).unwrap());
    let single = |c: f64, k: f64| {
        let spec = GaussianSpec::at(vec![c], 0.9).with_momentum(vec![k]);
        GridState::sample_single(&g, |x| spec.eval(x))
    };
    let a = single(-1.0, 0.8);
    let b = single(1.5, -0.3);
    let amps: Vec<C64> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
    let cat: Vec<C64> = amps
        .iter()
        .enumerate()
        .map(|(i, z)| z + amps[amps.len() - 1 - i] * 0.5)
        .collect();
    let mut s0 = GridState::new(g, cat).unwrap();
    s0.normalize();
    let models = [
        ModelSpec::linear(h.clone()),
        ModelSpec::with_family(h.clone(), 0.5, &OperatorFamily::all(FamilyKind::PositionX, 2), &s0).unwrap(),
        ModelSpec::with_family(h.clone(), 0.5, &OperatorFamily::all(FamilyKind::MomentumPx, 2), &s0).unwrap(),
    ];
    let dt = 1e-3;
    for model in &models {
        let mut prop = Propagator::new(model, s0.measure(), dt, Method::Rk4, s0.amplitudes());
        let mut s = s0.clone();
        let mut xs = Vec::new();
        let mut p_mid = 0.0;
        for k in 0..5 {
            if k > 0 {
                prop.step(s.amplitudes_mut(), (k - 1) as f64 * dt).unwrap();
            }
            xs.push(term_expectation(&ops, GridTerm::X(0, 0), &s));
            if k == 2 {
                p_mid = term_expectation(&ops, GridTerm::P(0, 0), &s);
            }
        }
        let v = (xs[0] - 8.0 * xs[1] + 8.0 * xs[3] - xs[4]) / (12.0 * dt);
        let want = p_mid / mass;
        assert!((v - want).abs() <= 1e-6 * want.abs(), "w={}: {v} vs {want}", model.w());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rhs_is_tangent_to_the_sphere(n in 2usize..12, seed in any::<u64>(), w in 0.0f64..10.0) {
        let (model, _) = reduced_model(&toy(n, w)).unwrap();
        let s = common::random_symmetric(n, seed);
        let r = rhs(&s, &model).unwrap();
        let z = inner(s.amplitudes(), r.amplitudes(), 1.0);
        prop_assert!(z.re.abs() <= 1e-12 * (1.0 + z.norm()));
    }

    #[test]
    fn rhs_is_phase_covariant(n in 2usize..12, seed in any::<u64>(), theta in -3.2f64..3.2) {
        let (model, _) = reduced_model(&toy(n, 1.0)).unwrap();
        let s = common::random_symmetric(n, seed);
        let mut rotated = s.clone();
        rotated.rotate_phase(theta);
        let mut a = rhs(&s, &model).unwrap();
        a.rotate_phase(theta);
        let b = rhs(&rotated, &model).unwrap();
        prop_assert!(max_diff(a.amplitudes(), b.amplitudes()) <= 1e-12 * (n * n) as f64);
    }
}
