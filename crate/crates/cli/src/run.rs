//! Experiment execution, artifact writing and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use wfe_core::admissibility::admissibility_table;
use wfe_core::ensemble::{crossing_beta, curve_csv, magnetization_curve};
use wfe_core::observables::{com_and_momentum, macro_estimate, magnetization, MacroMode, SpinValues};
use wfe_core::state::{
    build_cat_state, build_initial_toy, build_momentum_cat, build_mqp_state, build_spin_cat, AnyState, InitialToySpec,
    FORMAT_VERSION,
};
use wfe_core::toy::{cat_sweep, run_measurement_with};
use wfe_core::WfeError;

use crate::config::{Experiment, ExperimentConfig, OutputFormat, StateSpec};
use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub wfe_cli: &'static str,
    pub wfe_core: &'static str,
    pub state_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            wfe_cli: env!("CARGO_PKG_VERSION"),
            wfe_core: wfe_core::VERSION,
            state_format: FORMAT_VERSION,
        }
    }
}

/// Written next to every set of artifacts. `config` is the fully resolved
/// configuration, so `wfe run` on it repeats the run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: &'static str,
    pub seed: u64,
    pub status: &'static str,
    pub outputs: Vec<String>,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub summary: Value,
    pub config: ExperimentConfig,
    pub versions: Versions,
    pub threads: usize,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
}

struct Artifacts {
    dir: PathBuf,
    outputs: Vec<String>,
    failures: Vec<String>,
    warnings: Vec<String>,
    summary: Value,
}

impl Artifacts {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// Input problems are configuration errors; failures of the numerics are
/// reported as such.
pub(crate) fn classify(e: WfeError) -> CliError {
    if e.is_numerical() {
        CliError::Numerical(e.to_string())
    } else {
        CliError::Config(vec![e.to_string()])
    }
}

/// Runs the experiment, writes its artifacts and the manifest into
/// `cfg.output`. On a numerical failure whatever was produced is kept, the
/// manifest is flagged and [`CliError::Numerical`] is returned.
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    let started = Instant::now();
    let started_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::create_dir_all(&cfg.output).map_err(|e| CliError::io(&cfg.output, e))?;
    let mut art = Artifacts {
        dir: cfg.output.clone(),
        outputs: Vec::new(),
        failures: Vec::new(),
        warnings: Vec::new(),
        summary: Value::Null,
    };
    let result = match cfg.experiment {
        Experiment::Toy => run_toy(cfg, &mut art),
        Experiment::Sweep => run_sweep(cfg, &mut art),
        Experiment::Ensemble => run_ensemble(cfg, &mut art),
        Experiment::Operators => run_operators(cfg, &mut art),
        Experiment::Estimate => run_estimate(cfg, &mut art),
        Experiment::State => run_state(cfg, &mut art),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Numerical(msg)) => art.failures.push(msg),
        Err(e) => return Err(e),
    }
    let manifest = Manifest {
        experiment: cfg.experiment.name(),
        seed: cfg.seed,
        status: if art.failures.is_empty() {
            "ok"
        } else {
            "numerical_failure"
        },
        outputs: art.outputs,
        failures: art.failures,
        warnings: art.warnings,
        summary: art.summary,
        config: cfg.clone(),
        versions: Versions::default(),
        threads: rayon::current_num_threads(),
        started_unix_s,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let path = cfg.output.join(MANIFEST_NAME);
    fs::write(&path, to_json(&manifest)).map_err(|e| CliError::io(&path, e))?;
    if manifest.failures.is_empty() {
        Ok(manifest)
    } else {
        Err(CliError::Numerical(manifest.failures.join("; ")))
    }
}

fn run_toy(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let b = cfg.toy.as_ref().expect("validated config has its block");
    let counter = AtomicUsize::new(0);
    let snapshots = Mutex::new(Vec::new());
    let m = run_measurement_with(&b.model, &b.run, &b.classifier, cfg.seed, |t, s| {
        let i = counter.fetch_add(1, Ordering::Relaxed);
        if b.snapshot_every > 0 && i.is_multiple_of(b.snapshot_every) {
            snapshots
                .lock()
                .expect("snapshot lock")
                .push((i, t, AnyState::from(s.clone()).to_json()));
        }
    })
    .map_err(classify)?;
    match cfg.format {
        OutputFormat::Csv => art.write("trajectory.csv", &m.record.to_csv())?,
        OutputFormat::Json => art.write("trajectory.json", &to_json(&m.record))?,
    }
    for (i, _, text) in snapshots.into_inner().expect("snapshot lock") {
        art.write(&format!("snapshots/record_{i:05}.json"), &(text + "\n"))?;
    }
    art.summary = json!({
        "outcome": m.outcome,
        "p_left": m.p_left,
        "p_right": m.p_right,
        "final_readout_mean": m.final_readout_mean,
        "max_e_wfe": m.max_e_wfe,
        "e_min": m.e_min,
        "method": m.record.method,
        "dt": m.record.dt,
        "steps": m.record.steps,
    });
    if let Some(f) = m.failure {
        art.failures.push(f);
    }
    Ok(())
}

fn run_sweep(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let sp = cfg.sweep.as_ref().expect("validated config has its block");
    let res = cat_sweep(sp).map_err(classify)?;
    match cfg.format {
        OutputFormat::Csv => {
            art.write("sweep_cells.csv", &res.cells_csv())?;
            art.write("sweep_critical.csv", &res.summary_csv())?;
        }
        OutputFormat::Json => art.write("sweep.json", &to_json(&res))?,
    }
    for c in res.cells.iter().filter(|c| c.failures > 0) {
        art.failures.push(format!(
            "N={} w={}: {} of {} trials failed",
            c.n_spins, c.w, c.failures, c.trials
        ));
    }
    art.summary = json!({ "critical": res.critical, "slope": res.slope });
    Ok(())
}

fn run_ensemble(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let p = cfg.ensemble.as_ref().expect("validated config has its block");
    let rows = magnetization_curve(p).map_err(classify)?;
    match cfg.format {
        OutputFormat::Csv => art.write("magnetization.csv", &curve_csv(&rows))?,
        OutputFormat::Json => art.write("magnetization.json", &to_json(&rows))?,
    }
    for r in &rows {
        if r.estimate.degenerate {
            art.warnings.push(format!(
                "N={} beta={} omega={}: {} estimate is weight-degenerate (ESS {:.1})",
                r.n,
                r.beta,
                r.omega,
                r.estimate.sampler.name(),
                r.estimate.effective_sample_size
            ));
        }
        if !r.estimate.m2_mean.is_finite() {
            art.failures.push(format!(
                "N={} beta={} omega={}: non-finite estimate",
                r.n, r.beta, r.omega
            ));
        }
    }
    let mut crossings = Vec::new();
    for &n in &p.n_list {
        for &omega in &p.omega_list {
            crossings.push(json!({
                "N": n,
                "omega": omega,
                "beta": crossing_beta(&rows, n, omega, p.base.epsilon),
            }));
        }
    }
    art.summary = json!({ "epsilon": p.base.epsilon, "first_beta_above_epsilon": crossings });
    Ok(())
}

fn run_operators(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let p = cfg.operators.as_ref().expect("validated config has its block");
    let reports = admissibility_table(p).map_err(classify)?;
    match cfg.format {
        OutputFormat::Csv => {
            let mut s = String::from("candidate,check,value_re,value_im,scale,tolerance,pass,calibration_residual\n");
            for r in &reports {
                for c in &r.checks {
                    s.push_str(&format!(
                        "{},{},{:e},{:e},{:e},{:e},{},{:e}\n",
                        r.candidate,
                        c.name,
                        c.value_re,
                        c.value_im,
                        c.scale,
                        c.tolerance,
                        c.pass,
                        r.calibration_residual
                    ));
                }
            }
            art.write("admissibility.csv", &s)?;
        }
        OutputFormat::Json => art.write("admissibility.json", &to_json(&reports))?,
    }
    let verdicts: serde_json::Map<String, Value> = reports
        .iter()
        .map(|r| (r.candidate.to_string(), Value::Bool(r.verdict())))
        .collect();
    art.summary = json!({ "admissible": verdicts });
    Ok(())
}

fn run_estimate(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let b = cfg.estimate.expect("validated config has its block");
    let e = macro_estimate(b.w, b.n, b.r, b.mode).map_err(classify)?;
    let mode = match b.mode {
        MacroMode::Cat => "cat",
        MacroMode::Product => "product",
    };
    match cfg.format {
        OutputFormat::Csv => art.write(
            "estimate.csv",
            &format!("mode,w,N,R,E_wfe_J\n{mode},{:e},{:e},{:e},{:e}\n", b.w, b.n, b.r, e),
        )?,
        OutputFormat::Json => art.write(
            "estimate.json",
            &to_json(&json!({ "mode": mode, "w": b.w, "N": b.n, "R": b.r, "E_wfe_J": e })),
        )?,
    }
    art.summary = json!({ "E_wfe_J": e });
    Ok(())
}

fn run_state(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let spec = cfg.state.as_ref().expect("validated config has its block");
    let state = build_state(spec, cfg.seed)?;
    art.write("state.json", &(state.to_json() + "\n"))?;
    art.summary = inspect(&state);
    Ok(())
}

/// Builds the state described by `spec`; `seed` drives any randomization.
pub fn build_state(spec: &StateSpec, seed: u64) -> Result<AnyState, CliError> {
    let state: AnyState = match spec {
        StateSpec::SpinCat {
            n_spins,
            qubit,
            correlated,
        } => build_spin_cat(*n_spins, *qubit, *correlated).map_err(classify)?.into(),
        StateSpec::InitialToy {
            n_spins,
            qubit,
            center,
            rho,
        } => {
            let spec = InitialToySpec {
                n_spins: *n_spins,
                qubit: *qubit,
                center: *center,
                rho: *rho,
            };
            build_initial_toy(&spec, &mut ChaCha8Rng::seed_from_u64(seed))
                .map_err(classify)?
                .into()
        }
        StateSpec::Mqp(b) => build_mqp_state(b).map_err(classify)?.into(),
        StateSpec::Cat(b) => build_cat_state(b).map_err(classify)?.into(),
        StateSpec::MomentumCat {
            geometry,
            q,
            p0,
            amplitudes,
        } => build_momentum_cat(*geometry, *q, *p0, *amplitudes)
            .map_err(classify)?
            .into(),
        StateSpec::TestFamily { geometry, family } => family.build(*geometry).map_err(classify)?.into(),
    };
    Ok(state)
}

/// Shape, norm and the basic observables of a state.
pub fn inspect(state: &AnyState) -> Value {
    let mut v = json!({
        "type": state.type_name(),
        "shape": state.shape_string(),
        "amplitudes": state.len(),
        "norm": state.norm(),
    });
    let m = match state {
        AnyState::Spin(s) => magnetization(s, SpinValues::Half).ok(),
        AnyState::Symmetric(s) => magnetization(s, SpinValues::Half).ok(),
        AnyState::Grid(s) => magnetization(s, SpinValues::Half).ok(),
    };
    if let Some(m) = m {
        v["magnetization"] = json!(m);
    }
    if let AnyState::Grid(s) = state {
        if let Ok((com, mom)) = com_and_momentum(s) {
            v["center_of_mass"] = json!(com);
            v["momentum"] = json!(mom);
        }
        if !s.notes.is_empty() {
            v["notes"] = json!(s.notes);
        }
    }
    v
}

/// Reads and parses a state file.
pub fn read_state(path: &Path) -> Result<AnyState, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    AnyState::from_json(&text).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))
}
