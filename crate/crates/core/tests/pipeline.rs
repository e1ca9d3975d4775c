//! End-to-end check of the public API: freeze a snapshot, search it, and
//! replay every claim the result makes against direct environment calls.

use beamopt::locenv::{EnvSnapshot, LocalizationEnv, SnapshotParams};
use beamopt::search::{
    epsilon_greedy_search, exhaustive_search, random_search, Environment, PredictorConfig,
    SearchParams, TableFeatures,
};
use beamopt::sim::{SceneParams, ScannerSpec};
use beamopt::space::SolutionSpace;
use std::sync::Arc;

fn snapshot() -> Arc<EnvSnapshot> {
    let space = SolutionSpace::new(8, 2, 1).unwrap();
    let scanner = ScannerSpec {
        num_beams: 8,
        azimuth_steps: 120,
        max_range: 50.0,
        ..Default::default()
    };
    let params = SnapshotParams {
        scene: SceneParams {
            num_route_poses: 10,
            num_buildings: 8,
            num_vegetation: 8,
            num_dynamic: 3,
            num_poles: 8,
            ..Default::default()
        },
        num_eval_poses: 6,
        num_stats_scans: 4,
        ..SnapshotParams::new(space, scanner, 19)
    };
    Arc::new(EnvSnapshot::build(params).unwrap())
}

#[test]
fn search_results_replay_against_the_environment() {
    let snapshot = snapshot();
    let space = snapshot.params.space;
    let env = LocalizationEnv::new(snapshot.clone());
    let features = TableFeatures {
        table: &snapshot.stats,
    };
    let params = SearchParams {
        epsilon: 0.3,
        budget: 14,
        initial_size: 5,
        seed: 2,
    };
    let guided =
        epsilon_greedy_search(&env, &space, &params, &features, &PredictorConfig::default())
            .unwrap();
    assert_eq!(guided.env_calls, 14);
    assert_eq!(guided.env_descriptor, env.descriptor());

    // every recorded value replays exactly, and the best is the history max
    let mut best = f64::NEG_INFINITY;
    for record in &guided.history {
        let replayed = env.value(&record.config).unwrap();
        assert_eq!(replayed.to_bits(), record.value.to_bits());
        best = best.max(record.value);
    }
    assert_eq!(guided.best_value, best);
    assert_eq!(guided.rewards, guided.recompute_rewards());

    // the exhaustive oracle dominates both search methods
    let table = exhaustive_search(&env, &space, None).unwrap();
    assert_eq!(table.entries.len() as u128, space.config_count());
    let baseline = random_search(&env, &space, 14, 2).unwrap();
    assert!(table.best().1 >= guided.best_value);
    assert!(table.best().1 >= baseline.best_value);

    // the guided result's best value agrees with the oracle's entry
    let from_table = table
        .entries
        .iter()
        .find(|(c, _)| c == &guided.best)
        .map(|(_, v)| *v)
        .unwrap();
    assert_eq!(from_table.to_bits(), guided.best_value.to_bits());
}
