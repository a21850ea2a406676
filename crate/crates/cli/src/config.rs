//! Experiment configuration: parsing, `--set` overrides and range checks.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use wfe_core::admissibility::{TableParams, TestFamily};
use wfe_core::ensemble::CurveParams;
use wfe_core::observables::{macro_estimate, MacroMode};
use wfe_core::state::{GridBranches, GridGeometry, QubitAmplitudes};
use wfe_core::toy::{Classifier, RunParams, SweepParams, ToyParams};
use wfe_core::WfeError;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Toy,
    Sweep,
    Ensemble,
    Operators,
    Estimate,
    State,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Toy => "toy",
            Experiment::Sweep => "sweep",
            Experiment::Ensemble => "ensemble",
            Experiment::Operators => "operators",
            Experiment::Estimate => "estimate",
            Experiment::State => "state",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// A single toy-model measurement run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBlock {
    pub model: ToyParams,
    pub run: RunParams,
    pub classifier: Classifier,
    /// Write the full state every this many records (0 = never).
    pub snapshot_every: usize,
}

/// Inputs of the order-of-magnitude energy estimate, in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateBlock {
    pub w: f64,
    pub n: f64,
    pub r: f64,
    pub mode: MacroMode,
}

impl Default for EstimateBlock {
    fn default() -> Self {
        Self {
            w: 1e-25,
            n: 1e20,
            r: 1e-2,
            mode: MacroMode::Cat,
        }
    }
}

/// Recipe for a state file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    /// Qubit plus an `n_spins − 1` spin apparatus in a two-branch cat.
    SpinCat {
        n_spins: usize,
        #[serde(default)]
        qubit: QubitAmplitudes,
        #[serde(default)]
        correlated: bool,
    },
    /// The banded toy initial state; randomized from the run seed.
    InitialToy {
        n_spins: usize,
        #[serde(default)]
        qubit: QubitAmplitudes,
        center: f64,
        #[serde(default)]
        rho: f64,
    },
    /// Product of single-particle two-bump superpositions.
    Mqp(GridBranches),
    /// Two-branch cat of all particles.
    Cat(GridBranches),
    MomentumCat {
        geometry: GridGeometry,
        q: f64,
        p0: f64,
        #[serde(default)]
        amplitudes: QubitAmplitudes,
    },
    /// Correlated Gaussian used by the commutator checks.
    TestFamily {
        geometry: GridGeometry,
        #[serde(default)]
        family: TestFamily,
    },
}

impl Default for StateSpec {
    fn default() -> Self {
        StateSpec::SpinCat {
            n_spins: 8,
            qubit: QubitAmplitudes::balanced(),
            correlated: true,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("wfe-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<CurveParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operators: Option<TableParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSpec>,
}

/// Sets `path` (dot separated) in `doc` to `raw`, read as JSON when it
/// parses and as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("--set {assignment}: expected key=value"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("--set {assignment}: empty key in `{path}`"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            _ => return Err(format!("{}: not an object", keys[..i].join("."))),
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one key")
}

fn range_error(block: &str, e: WfeError) -> String {
    match e {
        WfeError::InvalidParameter { name, reason } => format!("{block}.{name}: {reason}"),
        other => format!("{block}: {other}"),
    }
}

/// Parses, applies overrides and range-checks a configuration. Every error
/// names the key path it concerns.
pub fn validate_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Config(vec![format!("syntax: {e}")]))?;
    let errors: Vec<String> = overrides
        .iter()
        .filter_map(|o| apply_override(&mut doc, o).err())
        .collect();
    if !errors.is_empty() {
        return Err(CliError::Config(errors));
    }
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().to_string();
        CliError::Config(vec![if path == "." { msg } else { format!("{path}: {msg}") }])
    })?;
    let errors = cfg.check();
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(errors))
    }
}

impl ExperimentConfig {
    /// Fills the selected block with defaults and returns every range error.
    fn check(&mut self) -> Vec<String> {
        let mut errors = Vec::new();
        let selected = self.experiment.name();
        let present = [
            ("toy", self.toy.is_some()),
            ("sweep", self.sweep.is_some()),
            ("ensemble", self.ensemble.is_some()),
            ("operators", self.operators.is_some()),
            ("estimate", self.estimate.is_some()),
            ("state", self.state.is_some()),
        ];
        for (name, here) in present {
            if here && name != selected {
                errors.push(format!("{name}: block given but experiment is `{selected}`"));
            }
        }
        let seed = self.seed;
        let mut seed_clash = |block: &str, inner: &mut u64| {
            if *inner != 0 && *inner != seed {
                errors.push(format!("{block}.seed: set the seed at the top level"));
            }
            *inner = seed;
        };
        match self.experiment {
            Experiment::Toy => {
                let b = self.toy.get_or_insert_with(Default::default);
                let mut errs = Vec::new();
                if let Err(e) = b.model.validate() {
                    errs.push(range_error("toy.model", e));
                }
                errs.extend(check_run("toy.run", &b.run));
                errs.extend(check_classifier("toy.classifier", &b.classifier));
                errors.extend(errs);
            }
            Experiment::Sweep => {
                let b = self.sweep.get_or_insert_with(Default::default);
                seed_clash("sweep", &mut b.seed);
                let b = self.sweep.as_ref().expect("just filled");
                if b.trials == 0 {
                    errors.push("sweep.trials: must be positive".into());
                }
                if b.n_list.is_empty() {
                    errors.push("sweep.n_list: must not be empty".into());
                }
                if b.w_list.is_empty() {
                    errors.push("sweep.w_list: must not be empty".into());
                }
                for (i, &n) in b.n_list.iter().enumerate() {
                    let p = ToyParams {
                        n_spins: n,
                        center: b.base.center.min((n.max(2) - 1) as f64 / 2.0),
                        ..b.base.clone()
                    };
                    if let Err(e) = p.validate() {
                        errors.push(range_error(&format!("sweep.n_list[{i}]"), e));
                    }
                }
                for (i, &w) in b.w_list.iter().enumerate() {
                    if !(w >= 0.0 && w.is_finite()) {
                        errors.push(format!("sweep.w_list[{i}]: must be non-negative"));
                    }
                }
                if let Err(e) = b.base.validate() {
                    errors.push(range_error("sweep.base", e));
                }
                errors.extend(check_run("sweep.run", &b.run));
                errors.extend(check_classifier("sweep.classifier", &b.classifier));
            }
            Experiment::Ensemble => {
                let b = self.ensemble.get_or_insert_with(Default::default);
                seed_clash("ensemble.base", &mut b.base.seed);
                let b = self.ensemble.as_ref().expect("just filled");
                for (name, empty) in [
                    ("n_list", b.n_list.is_empty()),
                    ("beta_grid", b.beta_grid.is_empty()),
                    ("omega_list", b.omega_list.is_empty()),
                ] {
                    if empty {
                        errors.push(format!("ensemble.{name}: must not be empty"));
                    }
                }
                if let Err(e) = b.base.validate() {
                    errors.push(range_error("ensemble.base", e));
                }
                for (i, &n) in b.n_list.iter().enumerate() {
                    if n == 0 {
                        errors.push(format!("ensemble.n_list[{i}]: N must be at least 1"));
                    }
                }
                for (i, &beta) in b.beta_grid.iter().enumerate() {
                    if !(beta >= 0.0 && beta.is_finite()) {
                        errors.push(format!("ensemble.beta_grid[{i}]: beta must be non-negative and finite"));
                    }
                }
                for (i, &omega) in b.omega_list.iter().enumerate() {
                    if !(omega >= 0.0 && omega.is_finite()) {
                        errors.push(format!(
                            "ensemble.omega_list[{i}]: omega must be non-negative and finite"
                        ));
                    }
                }
            }
            Experiment::Operators => {
                let b = self.operators.get_or_insert_with(Default::default);
                if b.candidates.is_empty() {
                    errors.push("operators.candidates: must not be empty".into());
                }
                if b.points < 8 || !b.points.is_multiple_of(2) {
                    errors.push("operators.points: must be even and at least 8".into());
                }
                if !(b.half_width > 0.0 && b.half_width.is_finite()) {
                    errors.push("operators.half_width: must be positive".into());
                }
                let f = &b.family;
                if !(f.width > 0.0 && f.width.is_finite()) {
                    errors.push("operators.family.width: must be positive".into());
                }
                if !(f.correlation.abs() < 1.0) {
                    errors.push("operators.family.correlation: must lie in (-1, 1)".into());
                }
                if f.spin_angles.len() != 2 {
                    errors.push("operators.family.spin_angles: need one angle per particle (2)".into());
                }
            }
            Experiment::Estimate => {
                let b = self.estimate.get_or_insert_with(Default::default);
                if let Err(e) = macro_estimate(b.w, b.n, b.r, b.mode) {
                    errors.push(range_error("estimate", e));
                }
            }
            Experiment::State => {
                self.state.get_or_insert_with(Default::default);
            }
        }
        errors
    }
}

fn check_run(block: &str, r: &RunParams) -> Vec<String> {
    let mut errors = Vec::new();
    if !(r.dt > 0.0 && r.dt.is_finite()) {
        errors.push(format!("{block}.dt: must be positive"));
    }
    if !(r.t_final > 0.0 && r.t_final.is_finite()) {
        errors.push(format!("{block}.t_final: must be positive"));
    }
    if r.record_every == 0 {
        errors.push(format!("{block}.record_every: must be positive"));
    }
    errors
}

fn check_classifier(block: &str, c: &Classifier) -> Vec<String> {
    let mut errors = Vec::new();
    for (name, v) in [
        ("cat_min", c.cat_min),
        ("decided_min", c.decided_min),
        ("split_fraction", c.split_fraction),
    ] {
        if !(0.0..=1.0).contains(&v) {
            errors.push(format!("{block}.{name}: must lie in [0, 1]"));
        }
    }
    errors
}
