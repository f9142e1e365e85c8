//! Acceptance criteria, one pass/fail line each. Every check recomputes its
//! expectation independently of the library code under test.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ethplan_cli::{cmd_run, cmd_train, load_config, Overrides, RunConfig};
use ethplan_core::geometry::Vec2;
use ethplan_core::par::Parallelism;
use ethplan_core::planner::{
    cost_j, cost_j_mean, cost_total, cost_utility, select_trajectory, CostBreakdown, JMeanMode, PlannerConfig,
    PlannerError, ScoredCandidate, UtilityMode,
};
use ethplan_core::prediction::{
    attention_weights, build_dataset, check_gradients, load_dataset_spec, random_gradcheck_sample, sample_loss_and_grad,
    NetworkConfig, Params,
};
use ethplan_core::risk::{rectangle_probability, GaussLegendre, RiskProfile};
use ethplan_core::simulation::{write_comparison_csv, SimResult, SuiteMetrics};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    if elapsed <= limit {
        Ok(format!("{detail}; {:.2}s", elapsed.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.2}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
    }
}

fn cost_stack() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for case in 0..1000 {
        let n = rng.random_range(0..7usize);
        let m = if n == 0 && case % 2 == 0 { 0 } else { rng.random_range(0..7usize) };
        let draw = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
            (0..k).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..0.5) }).collect()
        };
        let ego = draw(&mut rng, n);
        let imposed = draw(&mut rng, m);
        let c = rng.random_range(0..8usize);
        let cohort = draw(&mut rng, c);
        let cfg = PlannerConfig {
            omega_o: rng.random_range(0.0..3.0),
            omega_u: if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..3.0) },
            ..PlannerConfig::default()
        };
        let j_origin: f64 = rng.random_range(0.0..2.0);
        let profile = RiskProfile::from_vectors(ego.clone(), imposed.clone());

        // Sum of ego-side risks plus sum of imposed risks, in that grouping.
        let (mut sum_ego, mut sum_imposed) = (0.0, 0.0);
        for r in &ego {
            sum_ego += r;
        }
        for r in &imposed {
            sum_imposed += r;
        }
        let j = sum_ego + sum_imposed;
        let got_j = cost_j(&profile);
        if !rel_eq(got_j, j, 1e-12) {
            return Err(format!("case {case}: J {got_j} vs {j}"));
        }

        let per_user = if n == 0 { if j == 0.0 { Some(0.0) } else { None } } else { Some(j / n as f64) };
        match (cost_j_mean(&profile, JMeanMode::PerRoadUser, None), per_user) {
            (Ok(a), Some(b)) if rel_eq(a, b, 1e-12) => {}
            (Err(PlannerError::EmptyEgoRiskVector { .. }), None) => {}
            (got, want) => return Err(format!("case {case}: per-road-user J_mean {got:?} vs {want:?}")),
        }
        let cohort_mean = if cohort.is_empty() { 0.0 } else { cohort.iter().sum::<f64>() / cohort.len() as f64 };
        let got_cm = cost_j_mean(&profile, JMeanMode::CohortMean, Some(&cohort)).map_err(|e| e.to_string())?;
        if !rel_eq(got_cm, cohort_mean, 1e-12) {
            return Err(format!("case {case}: cohort J_mean {got_cm} vs {cohort_mean}"));
        }

        for j_mean in per_user.into_iter().chain([cohort_mean]) {
            for mode in [UtilityMode::Total, UtilityMode::Reference] {
                let want_u = if j > j_mean {
                    if mode == UtilityMode::Total { j } else { j_mean }
                } else {
                    0.0
                };
                let got_u = cost_utility(j, j_mean, mode);
                let want_r = cfg.omega_o * j_origin + cfg.omega_u * want_u;
                let got_r = cost_total(j_origin, got_u, &cfg);
                if !rel_eq(got_u, want_u, 1e-12) || !rel_eq(got_r, want_r, 1e-12) {
                    return Err(format!("case {case}: utility {got_u} vs {want_u}, risk {got_r} vs {want_r}"));
                }
                checked += 1;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(5), format!("1000 profiles, {checked} utility/total evaluations agree"))
}

fn selection() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut agree = 0;
    for set in 0..200 {
        let n = rng.random_range(5..=50usize);
        let mut ids: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
        ids.shuffle(&mut rng);
        // Coarse cost levels make ties on both keys common.
        let scored: Vec<ScoredCandidate> = ids
            .iter()
            .map(|&id| ScoredCandidate {
                id,
                feasible: set % 50 == 7 || rng.random_bool(0.7),
                cost: CostBreakdown {
                    j_risk: rng.random_range(0..4) as f64 * 0.5,
                    j_origin: rng.random_range(0..3) as f64 * 0.25,
                    ..CostBreakdown::default()
                },
            })
            .collect();
        let scored: Vec<ScoredCandidate> = if set % 50 == 7 {
            scored.into_iter().map(|s| ScoredCandidate { feasible: false, ..s }).collect()
        } else {
            scored
        };

        let mut best: Option<usize> = None;
        for (i, c) in scored.iter().enumerate() {
            if !c.feasible {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let o = &scored[b];
                    (c.cost.j_risk, c.cost.j_origin, c.id) < (o.cost.j_risk, o.cost.j_origin, o.id)
                }
            };
            if better {
                best = Some(i);
            }
        }
        match (select_trajectory(&scored), best) {
            (Ok(s), Some(b)) if s.chosen == b => agree += 1,
            (Err(PlannerError::NoFeasibleTrajectory), None) => agree += 1,
            (got, want) => return Err(format!("set {set}: {got:?} vs oracle {want:?}")),
        }
    }
    within(start.elapsed(), Duration::from_secs(5), format!("{agree}/200 sets agree"))
}

fn attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for draw in 0..1000 {
        let d = rng.random_range(2..=16usize);
        let m = rng.random_range(1..=8usize);
        let vec = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> { (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect() };
        let (x, hs): (Vec<f64>, Vec<Vec<f64>>) = match draw % 5 {
            // Near-zero query.
            0 => (vec(&mut rng, 1e-13), (0..m).map(|_| vec(&mut rng, 1.0)).collect()),
            // Near-zero neighbor among regular ones.
            1 => {
                let mut hs: Vec<Vec<f64>> = (0..m).map(|_| vec(&mut rng, 1.0)).collect();
                hs[0] = vec(&mut rng, 1e-14);
                (vec(&mut rng, 1.0), hs)
            }
            // Neighbors orthogonal to the query.
            2 => {
                let k = rng.random_range(0..d);
                let mut x = vec![0.0; d];
                x[k] = rng.random_range(0.5..2.0);
                let hs = (0..m)
                    .map(|_| {
                        let mut h = vec(&mut rng, 1.0);
                        h[k] = 0.0;
                        h
                    })
                    .collect();
                (x, hs)
            }
            _ => (vec(&mut rng, 1.0), (0..m).map(|_| vec(&mut rng, 1.0)).collect()),
        };
        let refs: Vec<&[f64]> = hs.iter().map(Vec::as_slice).collect();
        let a = attention_weights(&x, &refs).map_err(|e| e.to_string())?;
        let sum: f64 = a.weights.iter().sum();
        if a.weights.len() != m || !sum.is_finite() {
            return Err(format!("draw {draw}: {a:?}"));
        }
        worst = worst.max((sum - 1.0).abs());
    }
    if worst > 1e-9 {
        return Err(format!("max |sum A - 1| = {worst:e}"));
    }
    let a = attention_weights(&[1.0, 1.0], &[&[1.0, 0.0], &[0.0, 1.0]]).map_err(|e| e.to_string())?;
    if a.weights.len() != 2 || a.weights.iter().any(|w| (w - 0.5).abs() > 1e-12) {
        return Err(format!("worked example gave {:?}", a.weights));
    }
    Ok(format!("1000 draws, max |sum A - 1| = {worst:e}; worked example (0.5, 0.5)"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let config = NetworkConfig { hidden: 16, history_len: 8, horizon: 10, ..NetworkConfig::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (p, s) = random_gradcheck_sample(&config, seed, 3);
        let r = check_gradients(&p, &s, 2e-3).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_relative_error);
    }
    if worst > 1e-4 {
        return Err(format!("max relative error {worst:e} > 1e-4"));
    }
    within(start.elapsed(), Duration::from_secs(60), format!("5 seeds, max relative error {worst:e}"))
}

fn collision_probability() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rule = GaussLegendre::default_rule();
    let samples = 1_000_000;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let half_len = rng.random_range(0.5..3.0);
        let half_wid = rng.random_range(0.3..1.5);
        let sx = rng.random_range(0.2..2.5);
        let sy = rng.random_range(0.2..2.5);
        let rho = rng.random_range(-0.9..0.9);
        let mean = Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0));
        let quad = rectangle_probability(mean, sx, sy, rho, half_len, half_wid, rule);

        let mut mc = ChaCha8Rng::seed_from_u64(1000 + case);
        let c = (1.0 - rho * rho).sqrt();
        let mut hits = 0u64;
        for _ in 0..samples {
            let z1: f64 = mc.sample(StandardNormal);
            let z2: f64 = mc.sample(StandardNormal);
            let x = mean.x + sx * z1;
            let y = mean.y + sy * (rho * z1 + c * z2);
            if x.abs() <= half_len && y.abs() <= half_wid {
                hits += 1;
            }
        }
        let p = hits as f64 / samples as f64;
        let err = (quad - p).abs();
        if err > 0.02 {
            return Err(format!("case {case}: quadrature {quad} vs Monte-Carlo {p}"));
        }
        worst = worst.max(err);
    }
    within(start.elapsed(), Duration::from_secs(60), format!("20 configurations, max |quad - MC| = {worst:.4}"))
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn config(file: &str, out: &Path) -> Result<RunConfig, String> {
    let overrides = Overrides { out: Some(out.to_path_buf()), ..Overrides::default() };
    load_config(&root().join("configs").join(file), &overrides).map(|(c, _)| c).map_err(|e| e.to_string())
}

fn training() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for k in 0..2 {
        let cfg = config("train_toy.toml", &tmp.path().join(format!("run{k}")))?;
        let losses = cmd_train(&cfg, Parallelism::default()).map_err(|e| e.to_string())?;
        runs.push((cfg, losses));
    }
    let (cfg, losses) = &runs[0];
    let dataset = cfg.train.dataset.as_ref().ok_or("no dataset")?;
    let spec = load_dataset_spec(dataset).map_err(|e| e.to_string())?;
    if spec.entries.len() != 32 || losses.len() != 500 {
        return Err(format!("{} samples, {} steps", spec.entries.len(), losses.len()));
    }
    let samples = build_dataset(&spec, dataset.parent().unwrap(), cfg.network.history_len, cfg.network.horizon)
        .map_err(|e| e.to_string())?;
    let trained = Params::load(cfg.out.join("params.json")).map_err(|e| e.to_string())?;
    let mut scratch = trained.zeros_like();
    let mut final_loss = 0.0;
    for s in &samples {
        final_loss += sample_loss_and_grad(&trained, s, &mut scratch, 1.0, None).map_err(|e| e.to_string())? / samples.len() as f64;
    }
    let initial = losses[0];
    if final_loss.is_nan() || final_loss > 0.5 * initial {
        return Err(format!("loss {initial} -> {final_loss}"));
    }
    let a = tree(&runs[0].0.out);
    let b = tree(&runs[1].0.out);
    let key = |f: &str| PathBuf::from(f);
    if a[&key("loss_trace.csv")] != b[&key("loss_trace.csv")] || a[&key("params.json")] != b[&key("params.json")] {
        return Err("repeated runs differ".into());
    }
    Ok(format!("32 samples, 500 steps: loss {initial:.4} -> {final_loss:.4} ({:.1}%); repeat bit-identical", 100.0 * final_loss / initial))
}

fn parse_comparison(text: &str) -> Vec<(String, [f64; 5])> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let v = |i: usize| f[i].parse::<f64>().unwrap();
            (f[0].to_string(), [v(1), v(2), v(3), v(4), v(5)])
        })
        .collect()
}

fn suite_direction(out: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = config("suite.toml", out)?;
    if cfg.planner.j_mean_mode != JMeanMode::CohortMean || cfg.planner.omega_u != 1.0 || !cfg.compare_baseline {
        return Err("suite config is not the cohort-mean ethical/baseline comparison".into());
    }
    let metrics = cmd_run(&cfg, Parallelism::Sequential).map_err(|e| e.to_string())?;
    let get = |name: &str| metrics.iter().find(|m| m.variant == name).cloned();
    let (Some(base), Some(eth)) = (get("baseline"), get("ethical")) else {
        return Err(format!("variants {:?}", metrics.iter().map(|m| &m.variant).collect::<Vec<_>>()));
    };
    if base.scenarios != 50 {
        return Err(format!("{} scenarios", base.scenarios));
    }
    let detail = format!(
        "baseline {:.0}% / harm {:.3}, ethical {:.0}% / harm {:.3}",
        base.completed_rate, base.total_harm, eth.completed_rate, eth.total_harm
    );
    if eth.total_harm >= base.total_harm || eth.total_harm.is_nan() || eth.completed_rate < base.completed_rate - 5.0 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(300), detail)
}

fn accounting(out: &Path) -> Outcome {
    let csv = fs::read_to_string(out.join("comparison.csv")).map_err(|e| e.to_string())?;
    let rows = parse_comparison(&csv);
    let mut metrics = Vec::new();
    for (variant, [_, total, ego, third, vru]) in &rows {
        if (total - (ego + third + vru)).abs() > 1e-9 {
            return Err(format!("{variant}: {total} != {ego} + {third} + {vru}"));
        }
        let dir = out.join("results").join(variant);
        let mut results = Vec::new();
        for e in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let text = fs::read_to_string(e.map_err(|e| e.to_string())?.path()).map_err(|e| e.to_string())?;
            results.push(serde_json::from_str::<SimResult>(&text).map_err(|e| e.to_string())?);
        }
        metrics.push(SuiteMetrics::from_results(variant, &results));
    }
    let mut again = Vec::new();
    write_comparison_csv(&mut again, &metrics).unwrap();
    if again != csv.as_bytes() {
        return Err(format!("re-aggregated:\n{}\nemitted:\n{csv}", String::from_utf8_lossy(&again)));
    }
    Ok(format!("{} variants: totals add up, re-aggregation from per-scenario results matches byte for byte", rows.len()))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let cfg = config("suite.toml", &out)?;
    cmd_run(&cfg, Parallelism::default()).map_err(|e| e.to_string())?;
    let first = tree(&out);
    fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    cmd_run(&cfg, Parallelism::default()).map_err(|e| e.to_string())?;
    let second = tree(&out);
    if first != second {
        let differing: Vec<_> = first.keys().filter(|k| first.get(*k) != second.get(*k)).take(3).collect();
        return Err(format!("trees differ, e.g. {differing:?}"));
    }
    Ok(format!("{} files byte-identical across two runs", first.len()))
}

fn main() -> ExitCode {
    let suite_out = tempfile::tempdir().expect("temp dir");
    let suite_dir = suite_out.path().join("suite");
    let criteria: Vec<Criterion> = vec![
        ("cost-stack oracle equivalence", Box::new(cost_stack)),
        ("selection oracle", Box::new(selection)),
        ("attention properties", Box::new(attention)),
        ("gradient check", Box::new(gradient_check)),
        ("collision-probability accuracy", Box::new(collision_probability)),
        ("training sanity", Box::new(training)),
        ("directional suite comparison", Box::new(|| suite_direction(&suite_dir))),
        ("suite accounting", Box::new(|| accounting(&suite_dir))),
        ("end-to-end determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
