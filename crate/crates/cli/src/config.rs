//! Run configuration: a TOML document with `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use ethplan_core::planner::PlannerConfig;
use ethplan_core::prediction::{NetworkConfig, Stencil, TrainConfig};
use ethplan_core::risk::{HarmModel, RiskConfig};
use ethplan_core::simulation::{ConstantVelocityConfig, SimConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    #[default]
    ConstantVelocity,
    AttentionLstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub history_len: usize,
    pub horizon: usize,
    pub log_candidates: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self { history_len: s.history_len, horizon: s.horizon, log_candidates: s.log_candidates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Dataset document listing (scenario, agent, anchor) entries.
    pub dataset: Option<PathBuf>,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: Option<usize>,
    /// Uniform init range is `init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { dataset: None, lr: t.lr, steps: t.steps, batch_size: t.batch_size, init_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub points: usize,
    pub eps: f64,
    pub neighbors: usize,
    pub tolerance: f64,
    pub stencil: Stencil,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self { points: 5, eps: 2e-3, neighbors: 3, tolerance: 1e-4, stencil: Stencil::FivePoint }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Config key to list of values; the sweep runs the Cartesian product.
    pub grid: Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub predictor: PredictorKind,
    /// Trained forecaster weights, required for `attention-lstm`.
    pub params: Option<PathBuf>,
    /// Scenario files or directories of `*.json` scenario files.
    pub suite: Vec<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    /// Name of the configured variant; defaults to `baseline` when
    /// `planner.omega_u` is zero and `ethical` otherwise.
    pub variant: Option<String>,
    /// Also run a copy with `planner.omega_u = 0` named `baseline`.
    pub compare_baseline: bool,
    pub planner: PlannerConfig,
    pub harm: HarmModel,
    pub risk: RiskConfig,
    pub constant_velocity: ConstantVelocityConfig,
    pub simulation: SimulationSection,
    pub network: NetworkConfig,
    pub train: TrainSection,
    pub gradcheck: GradcheckSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            predictor: PredictorKind::default(),
            params: None,
            suite: Vec::new(),
            seed: 0,
            out: PathBuf::from("out"),
            variant: None,
            compare_baseline: false,
            planner: PlannerConfig::default(),
            harm: HarmModel::default(),
            risk: RiskConfig::default(),
            constant_velocity: ConstantVelocityConfig::default(),
            simulation: SimulationSection::default(),
            network: NetworkConfig::default(),
            train: TrainSection::default(),
            gradcheck: GradcheckSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            planner: self.planner.clone(),
            harm: self.harm.clone(),
            risk: self.risk.clone(),
            history_len: self.simulation.history_len,
            horizon: self.simulation.horizon,
            log_candidates: self.simulation.log_candidates,
        }
    }

    pub fn variant_name(&self) -> String {
        self.variant.clone().unwrap_or_else(|| if self.planner.omega_u == 0.0 { "baseline" } else { "ethical" }.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Command-line adjustments applied on top of the config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `KEY=VALUE` assignments.
    pub set: Vec<String>,
    pub seed: Option<u64>,
    /// Taken relative to the working directory.
    pub out: Option<PathBuf>,
    /// Extra sweep axes.
    pub grid: Vec<(String, Vec<Value>)>,
}

/// Parses the document at `path`, applies overrides, and resolves relative
/// paths against the document's directory. Also returns the raw table the
/// config was deserialized from.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<(RunConfig, Table), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut table: Table = text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for o in &overrides.set {
        apply_override(&mut table, o)?;
    }
    if let Some(seed) = overrides.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::Config(format!("seed {seed} is out of range")))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    let cwd = std::env::current_dir().map_err(|e| CliError::Config(format!("working directory: {e}")))?;
    if let Some(out) = &overrides.out {
        table.insert("out".into(), Value::String(cwd.join(out).display().to_string()));
    }
    for (key, values) in &overrides.grid {
        let existing = table.get("sweep").and_then(|s| s.get("grid")).cloned();
        let mut grid = match existing {
            None => Table::new(),
            Some(Value::Table(t)) => t,
            Some(_) => return Err(CliError::Config("`sweep.grid` is not a table".into())),
        };
        grid.insert(key.clone(), Value::Array(values.clone()));
        set_key(&mut table, "sweep.grid", Value::Table(grid))?;
    }
    let mut config = from_table(table.clone())?;
    let base = path.parent().map(|p| cwd.join(p)).unwrap_or(cwd);
    config.resolve_paths(&base);
    Ok((config, table))
}

pub fn from_table(table: Table) -> Result<RunConfig, CliError> {
    RunConfig::deserialize(Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
}

impl RunConfig {
    pub(crate) fn resolve_paths(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.params.as_mut().map(abs);
        self.suite.iter_mut().for_each(abs);
        abs(&mut self.out);
        self.train.dataset.as_mut().map(abs);
    }
}

/// Splits `KEY=VALUE` and parses the value as TOML, falling back to a bare
/// string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Config(format!("override `{s}` is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{s}` has an empty key")));
    }
    Ok((key.to_string(), parse_value(raw.trim())))
}

pub fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = parse_assignment(assignment)?;
    set_key(table, &key, value)
}

/// Sets a dotted key, creating intermediate tables. Whether the key exists in
/// the schema is checked when the table is deserialized.
pub fn set_key(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("`{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
