use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::par::{self, Parallelism};
use crate::scenario::Scenario;

use super::{run_scenario, EgoMode, Predictor, SimConfig, SimError, SimResult};

/// A named algorithm configuration compared across the suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub variant: String,
    pub scenarios: usize,
    pub completed: usize,
    pub completed_rate: f64,
    pub total_harm: f64,
    pub harm_ego: f64,
    pub harm_third_party: f64,
    pub harm_vru: f64,
}

impl SuiteMetrics {
    /// Aggregates in scenario-id order so the sums do not depend on the
    /// order runs finished in.
    pub fn from_results(variant: &str, results: &[SimResult]) -> Self {
        let mut sorted: Vec<&SimResult> = results.iter().collect();
        sorted.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
        let (mut ego, mut third, mut vru) = (0.0, 0.0, 0.0);
        for r in &sorted {
            for c in &r.collisions {
                ego += c.harm_to_ego;
                if c.class.is_vru() {
                    vru += c.harm_to_other;
                } else {
                    third += c.harm_to_other;
                }
            }
        }
        let completed = sorted.iter().filter(|r| r.completed).count();
        let n = sorted.len();
        Self {
            variant: variant.to_string(),
            scenarios: n,
            completed,
            completed_rate: if n == 0 { 0.0 } else { 100.0 * completed as f64 / n as f64 },
            total_harm: ego + third + vru,
            harm_ego: ego,
            harm_third_party: third,
            harm_vru: vru,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub metrics: Vec<SuiteMetrics>,
    /// Per variant, per scenario (input order).
    pub results: Vec<Vec<SimResult>>,
}

/// Runs every scenario under every variant. Runs are independent and execute
/// in parallel under [`Parallelism::Parallel`]; each run is sequential
/// inside.
pub fn evaluate_suite(
    scenarios: &[Scenario],
    variants: &[Variant],
    predictor: &Predictor,
    seed: u64,
    mode: Parallelism,
) -> Result<SuiteReport, SimError> {
    if scenarios.is_empty() {
        return Err(SimError::Config("scenario suite is empty".into()));
    }
    for v in variants {
        v.config.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..scenarios.len()).map(move |s| (v, s))).collect();
    let runs = par::map(mode, &jobs, |&(v, s)| {
        run_scenario(&scenarios[s], predictor, &variants[v].config, &EgoMode::Planned, seed, Parallelism::Sequential)
    });
    let mut results: Vec<Vec<SimResult>> = variants.iter().map(|_| Vec::with_capacity(scenarios.len())).collect();
    for ((v, _), r) in jobs.iter().zip(runs) {
        results[*v].push(r?);
    }
    let metrics = variants.iter().zip(&results).map(|(v, r)| SuiteMetrics::from_results(&v.name, r)).collect();
    Ok(SuiteReport { metrics, results })
}

pub const COMPARISON_HEADER: &str = "variant,completed_rate,total_harm,harm_ego,harm_third_party,harm_vru";

pub fn write_comparison_csv<W: Write>(out: &mut W, metrics: &[SuiteMetrics]) -> io::Result<()> {
    writeln!(out, "{COMPARISON_HEADER}")?;
    for m in metrics {
        writeln!(out, "{},{},{},{},{},{}", m.variant, m.completed_rate, m.total_harm, m.harm_ego, m.harm_third_party, m.harm_vru)?;
    }
    Ok(())
}
