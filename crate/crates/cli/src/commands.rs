use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ethplan_core::par::Parallelism;
use ethplan_core::planner::CANDIDATE_LOG_HEADER;
use ethplan_core::prediction::{
    build_dataset, check_gradients_with, load_dataset_spec, random_gradcheck_sample, train, GradientMutation, Params,
    TrainConfig, TrainError,
};
use ethplan_core::rng::substream;
use ethplan_core::scenario::{load_scenario, Scenario};
use ethplan_core::simulation::{evaluate_suite, write_comparison_csv, write_trace_csv, Predictor, SimError, SuiteMetrics, SuiteReport, Variant};
use ethplan_core::synth::{synthetic_suite, toy_dataset, write_scenarios};
use toml::{Table, Value};

use crate::config::{from_table, parse_value, set_key, PredictorKind, RunConfig};
use crate::CliError;

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const SWEEP_HEADER: &str = "omega_u,omega_o,completed_rate,total_harm,harm_ego,harm_third_party,harm_vru";

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn write_effective(config: &RunConfig) -> Result<(), CliError> {
    write_file(&config.out.join(EFFECTIVE_CONFIG), config.to_toml().as_bytes())
}

/// Expands directories to their `*.json` files (sorted) and loads every
/// scenario.
pub fn load_suite(paths: &[PathBuf]) -> Result<Vec<Scenario>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("`suite` lists no scenario paths".into()));
    }
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Scenario(format!("cannot list {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(CliError::Scenario(format!("scenario path {} does not exist", p.display())));
        }
    }
    let scenarios = files
        .iter()
        .map(|f| load_scenario(f).map_err(|e| CliError::Scenario(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if scenarios.is_empty() {
        return Err(CliError::Config("`suite` contains no scenario files".into()));
    }
    let mut ids = BTreeSet::new();
    for s in &scenarios {
        if !ids.insert(s.id.as_str()) {
            return Err(CliError::Scenario(format!("duplicate scenario id `{}`", s.id)));
        }
    }
    Ok(scenarios)
}

pub fn build_predictor(config: &RunConfig) -> Result<Predictor, CliError> {
    match config.predictor {
        PredictorKind::ConstantVelocity => Ok(Predictor::ConstantVelocity(config.constant_velocity.clone())),
        PredictorKind::AttentionLstm => {
            let path = config.params.as_ref().ok_or_else(|| CliError::Config("`params` is required for predictor `attention-lstm`".into()))?;
            if !path.exists() {
                return Err(CliError::Config(format!("`params`: file {} does not exist", path.display())));
            }
            Params::load(path).map(Predictor::AttentionLstm).map_err(|e| CliError::Config(format!("`params`: {e}")))
        }
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Config(_) | SimError::Planner(_) | SimError::Harm(_) => CliError::Config(e.to_string()),
        SimError::Track { .. } | SimError::Prediction { .. } | SimError::Path { .. } => CliError::Scenario(e.to_string()),
    }
}

fn variants(config: &RunConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    let sim = config.sim_config();
    if config.compare_baseline {
        let mut base = sim.clone();
        base.planner.omega_u = 0.0;
        out.push(Variant { name: "baseline".into(), config: base });
    }
    let name = config.variant_name();
    if !out.iter().any(|v| v.name == name) {
        out.push(Variant { name, config: sim });
    }
    out
}

fn evaluate(config: &RunConfig, variants: &[Variant], mode: Parallelism) -> Result<SuiteReport, CliError> {
    let scenarios = load_suite(&config.suite)?;
    let predictor = build_predictor(config)?;
    evaluate_suite(&scenarios, variants, &predictor, config.seed, mode).map_err(sim_error)
}

/// Evaluates the suite and writes `comparison.csv`, `results/<variant>/<id>.json`,
/// `traces/<variant>/<id>.csv` and, when enabled, candidate logs.
pub fn cmd_run(config: &RunConfig, mode: Parallelism) -> Result<Vec<SuiteMetrics>, CliError> {
    let variants = variants(config);
    // Validate before touching the output directory.
    build_predictor(config)?;
    for v in &variants {
        v.config.validate().map_err(sim_error)?;
    }
    let report = evaluate(config, &variants, mode)?;

    write_effective(config)?;
    let mut csv = Vec::new();
    write_comparison_csv(&mut csv, &report.metrics).expect("writing to memory");
    write_file(&config.out.join("comparison.csv"), &csv)?;
    for (v, results) in variants.iter().zip(&report.results) {
        for r in results {
            let json = serde_json::to_string_pretty(r).expect("result serializes");
            write_file(&config.out.join("results").join(&v.name).join(format!("{}.json", r.scenario_id)), json.as_bytes())?;
            let mut trace = Vec::new();
            write_trace_csv(&mut trace, &r.trace).expect("writing to memory");
            write_file(&config.out.join("traces").join(&v.name).join(format!("{}.csv", r.scenario_id)), &trace)?;
            if config.simulation.log_candidates {
                let mut log = format!("{CANDIDATE_LOG_HEADER}\n").into_bytes();
                log.extend_from_slice(&r.candidate_log);
                write_file(&config.out.join("candidates").join(&v.name).join(format!("{}.csv", r.scenario_id)), &log)?;
            }
        }
    }
    Ok(report.metrics)
}

/// Trains the forecaster on the configured dataset and writes `params.json`
/// and `loss_trace.csv`.
pub fn cmd_train(config: &RunConfig, mode: Parallelism) -> Result<Vec<f64>, CliError> {
    let dataset = config.train.dataset.as_ref().ok_or_else(|| CliError::Config("`train.dataset` is required".into()))?;
    config.network.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let spec = load_dataset_spec(dataset).map_err(|e| CliError::Config(format!("`train.dataset`: {e}")))?;
    let base = dataset.parent().unwrap_or(Path::new("."));
    let samples = build_dataset(&spec, base, config.network.history_len, config.network.horizon)
        .map_err(|e| CliError::Scenario(e.to_string()))?;

    let params = Params::random(&config.network, config.train.init_scale, &mut substream(config.seed, "init"));
    let tc = TrainConfig { lr: config.train.lr, steps: config.train.steps, seed: config.seed, batch_size: config.train.batch_size };
    let outcome = train(params, &samples, &tc, mode).map_err(|e| match e {
        TrainError::EmptyDataset => CliError::Config(e.to_string()),
        TrainError::Diverged { .. } => CliError::Divergence(format!("{e} (lr {})", tc.lr)),
        TrainError::Prediction(_) => CliError::Scenario(e.to_string()),
    })?;

    write_effective(config)?;
    write_file(&config.out.join("params.json"), outcome.params.to_json().as_bytes())?;
    let mut csv = String::from("step,loss\n");
    for (k, l) in outcome.losses.iter().enumerate() {
        csv.push_str(&format!("{k},{l}\n"));
    }
    write_file(&config.out.join("loss_trace.csv"), csv.as_bytes())?;
    Ok(outcome.losses)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    /// Overrides `gradcheck.eps`.
    pub eps: Option<f64>,
    /// Breaks the attention backward pass; the check must then fail.
    pub mutate_attention: bool,
}

/// Checks analytic against numeric gradients at `gradcheck.points` random
/// parameter points and writes `gradcheck.csv`. Returns the worst error.
pub fn cmd_gradcheck(config: &RunConfig, options: GradcheckOptions, mode: Parallelism) -> Result<f64, CliError> {
    let g = &config.gradcheck;
    let eps = options.eps.unwrap_or(g.eps);
    if !(eps > 0.0) || g.points == 0 {
        return Err(CliError::Config("`gradcheck.eps` must be > 0 and `gradcheck.points` >= 1".into()));
    }
    config.network.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mutation = options.mutate_attention.then_some(GradientMutation::DropNormalizerTerm);

    let mut csv = String::from("point,seed,eps,max_relative_error,worst_block,worst_index,analytic,numeric\n");
    let mut worst: f64 = 0.0;
    for k in 0..g.points {
        let seed = config.seed + k as u64;
        let (params, sample) = random_gradcheck_sample(&config.network, seed, g.neighbors);
        let r = check_gradients_with(&params, &sample, eps, g.stencil, mutation, mode).map_err(|e| CliError::Config(e.to_string()))?;
        csv.push_str(&format!(
            "{k},{seed},{eps},{:e},{},{},{:e},{:e}\n",
            r.max_relative_error, r.worst_block, r.worst_index, r.analytic, r.numeric
        ));
        worst = worst.max(r.max_relative_error);
    }
    write_effective(config)?;
    write_file(&config.out.join("gradcheck.csv"), csv.as_bytes())?;
    println!("max relative error {worst:e} over {} points (eps {eps:e}, tolerance {:e})", g.points, g.tolerance);
    if worst > g.tolerance {
        return Err(CliError::Gradcheck { max_error: worst, tolerance: g.tolerance });
    }
    Ok(worst)
}

/// Parses `KEY=V1,V2,...` into a grid axis.
pub fn parse_grid_axis(s: &str) -> Result<(String, Vec<Value>), CliError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Config(format!("grid axis `{s}` is not KEY=V1,V2")))?;
    let values: Vec<Value> = raw.split(',').map(str::trim).filter(|v| !v.is_empty()).map(parse_value).collect();
    Ok((key.trim().to_string(), values))
}

/// Runs the configured variant at every point of the Cartesian product of
/// `sweep.grid` and writes one row per point to `sweep.csv`. `base` is the
/// raw configuration table the points are applied to.
pub fn cmd_sweep(config: &RunConfig, base: &Table, mode: Parallelism) -> Result<Vec<SuiteMetrics>, CliError> {
    let mut axes: Vec<(String, Vec<Value>)> = Vec::new();
    for (key, values) in &config.sweep.grid {
        let values = match values {
            Value::Array(a) => a.clone(),
            v => vec![v.clone()],
        };
        if values.is_empty() {
            return Err(CliError::Config(format!("sweep axis `{key}` has no values")));
        }
        axes.push((key.clone(), values));
    }
    if axes.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }

    let mut points: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| values.iter().map(move |v| {
                let mut q = p.clone();
                q.push((key.clone(), v.clone()));
                q
            }))
            .collect();
    }
    // Resolve every point before running any of them so a bad key fails fast.
    let configs = points
        .iter()
        .map(|p| {
            let mut t = base.clone();
            for (k, v) in p {
                set_key(&mut t, k, v.clone())?;
            }
            let mut c = from_table(t)?;
            c.suite = config.suite.clone();
            c.params = config.params.clone();
            c.out = config.out.clone();
            c.train.dataset = config.train.dataset.clone();
            Ok(c)
        })
        .collect::<Result<Vec<RunConfig>, CliError>>()?;

    let scenarios = load_suite(&config.suite)?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut all = Vec::with_capacity(configs.len());
    for c in &configs {
        let variant = Variant { name: c.variant_name(), config: c.sim_config() };
        let predictor = build_predictor(c)?;
        let report = evaluate_suite(&scenarios, std::slice::from_ref(&variant), &predictor, c.seed, mode).map_err(sim_error)?;
        let m = report.metrics.into_iter().next().expect("one variant");
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.planner.omega_u, c.planner.omega_o, m.completed_rate, m.total_harm, m.harm_ego, m.harm_third_party, m.harm_vru
        ));
        all.push(m);
    }
    write_effective(config)?;
    write_file(&config.out.join("sweep.csv"), csv.as_bytes())?;
    Ok(all)
}

/// Writes the bundled data: `<out>/suite` (synthetic evaluation scenarios)
/// and `<out>/toy` (forecaster training scenarios plus `dataset.json`).
pub fn cmd_gen_suite(out: &Path, seed: u64, count: usize) -> Result<(), CliError> {
    let suite_dir = out.join("suite");
    write_scenarios(&suite_dir, &synthetic_suite(seed, count)).map_err(CliError::io(&suite_dir))?;
    let toy_dir = out.join("toy");
    let (scenarios, spec) = toy_dataset(seed, 8, 32, 8, 12);
    write_scenarios(&toy_dir, &scenarios).map_err(CliError::io(&toy_dir))?;
    let json = serde_json::to_string_pretty(&spec).expect("dataset serializes");
    let path = toy_dir.join("dataset.json");
    let mut f = fs::File::create(&path).map_err(CliError::io(&path))?;
    writeln!(f, "{json}").map_err(CliError::io(&path))
}
