use std::path::{Path, PathBuf};

use ethplan_core::par::Parallelism;
use ethplan_core::prediction::{build_dataset, load_dataset_spec, predict, NetworkConfig, Params};
use ethplan_core::rng::substream;
use ethplan_core::scenario::{load_scenario, validate_scenario};
use ethplan_core::simulation::{run_scenario, EgoMode, Predictor, SimConfig};
use ethplan_core::synth::synthetic_suite;

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn bundled_suite_is_the_seeded_suite() {
    let generated = synthetic_suite(2024, 50);
    for s in &generated {
        let loaded = load_scenario(data().join("suite").join(format!("{}.json", s.id))).unwrap();
        assert!(validate_scenario(&loaded).is_empty(), "{}", s.id);
        assert_eq!(&loaded, s);
    }
}

#[test]
fn toy_dataset_resolves() {
    let path = data().join("toy/dataset.json");
    let spec = load_dataset_spec(&path).unwrap();
    assert_eq!(spec.entries.len(), 32);
    let samples = build_dataset(&spec, path.parent().unwrap(), 8, 12).unwrap();
    assert!(samples.iter().all(|s| s.truth.len() == 12 && s.scene.target.states.len() == 8 && s.scene.neighbors.len() == 2));
    let params = Params::random(&NetworkConfig::default(), 1.0, &mut substream(0, "init"));
    for s in &samples {
        let pred = predict(&params, &s.scene).unwrap();
        assert!(pred.steps.iter().all(|g| g.check().is_ok()));
    }
}

#[test]
fn learned_predictor_closes_the_loop() {
    let scenario = load_scenario(data().join("suite/pedestrian_crossing_01.json")).unwrap();
    let config = NetworkConfig { hidden: 8, ..NetworkConfig::default() };
    let predictor = Predictor::AttentionLstm(Params::random(&config, 0.5, &mut substream(1, "init")));
    let sim = SimConfig::default();
    let a = run_scenario(&scenario, &predictor, &sim, &EgoMode::Planned, 0, Parallelism::Parallel).unwrap();
    let b = run_scenario(&scenario, &predictor, &sim, &EgoMode::Planned, 0, Parallelism::Sequential).unwrap();
    assert_eq!(a, b);
    assert!(a.steps_executed > 0);
}
