use space_lab::datastore::make_task;
use space_lab::report::{compare, compare_configs, sweep, RankTable};
use space_lab::*;

fn default_task() -> TaskSpec {
    make_task(7, 3, 3, 4).unwrap()
}

#[test]
fn four_way_comparison_on_frozen_seed() {
    let c = compare(
        &RunConfig::default(),
        &default_task(),
        &ObjectiveSpec::self_play_defaults(),
        0,
    )
    .unwrap();
    assert_eq!(c.labels, vec!["SPACE", "SPIN", "S-IPO", "S-SimPO"]);
    assert_eq!(c.ranks.best_final(), vec!["SPACE"]);
    let finals: Vec<f64> = c.runs.iter().map(|m| m.final_post_kl().unwrap()).collect();
    let pinned = [
        0.0889763803446327,
        0.09637618703517326,
        0.09233694888846405,
        0.1787987768899506,
    ];
    for (a, p) in finals.iter().zip(pinned) {
        assert!((a - p).abs() <= 1e-9, "{finals:?}");
    }
    let csv = c.combined_csv().unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 5);
    assert!(csv.starts_with("method,iteration,pre_kl,post_kl,"));
}

#[test]
fn comparison_matches_standalone_runs_and_thread_counts() {
    let task = default_task();
    let objectives = [ObjectiveSpec::space(1.0), ObjectiveSpec::sipo(0.5)];
    let base = RunConfig {
        iterations: 2,
        ..RunConfig::default()
    };
    let serial = compare(&base, &task, &objectives, 1).unwrap();
    let parallel = compare(&base, &task, &objectives, 4).unwrap();
    for (a, b) in serial.runs.iter().zip(&parallel.runs) {
        assert_eq!(a.without_wall_time(), b.without_wall_time());
    }
    let alone = run_with_task(
        &base.clone().with_objective(ObjectiveSpec::sipo(0.5)),
        &task,
    )
    .unwrap();
    assert_eq!(
        alone.without_wall_time(),
        serial.runs[1].without_wall_time()
    );
}

#[test]
fn identical_configs_tie() {
    let config = RunConfig {
        iterations: 2,
        ..RunConfig::default()
    };
    let c = compare_configs(&[config.clone(), config], &default_task(), 2).unwrap();
    assert_eq!(c.labels, vec!["SPACE", "SPACE#2"]);
    assert_eq!(
        c.runs[0].without_wall_time().iterations,
        c.runs[1].without_wall_time().iterations
    );
    for m in &c.ranks.methods {
        assert_eq!(m.ranks, vec![1.5, 1.5]);
    }
}

#[test]
fn single_objective_is_rejected() {
    assert!(compare(
        &RunConfig::default(),
        &default_task(),
        &[ObjectiveSpec::space(1.0)],
        0
    )
    .is_err());
}

#[test]
fn aborted_runs_rank_last() {
    let task = default_task();
    let base = RunConfig {
        iterations: 2,
        ..RunConfig::default()
    };
    let good = run_with_task(&base, &task).unwrap();
    let mut short = good.clone();
    short.iterations.truncate(1);
    short.iterations[0].post_kl = 0.0;
    short.status = RunStatus::Aborted;
    let table = RankTable::from_runs(&["a".into(), "b".into()], &[good, short]).unwrap();
    assert_eq!(table.methods[1].ranks, vec![1.0, 2.0]);
    assert!(table.methods[1].aborted);
    assert_eq!(table.best_final(), vec!["a"]);
}

#[test]
fn sweep_over_generation_ratios() {
    let task = default_task();
    let base = RunConfig {
        iterations: 2,
        ..RunConfig::default()
    };
    let s = sweep(&base, &task, &[1.0, 3.0, 7.0], 1).unwrap();
    assert_eq!(s.runs.len(), 3);
    for (mu, m) in s.mus.iter().zip(&s.runs) {
        assert_eq!(m.config.generation_ratio, *mu);
        assert_eq!(m.config.objective, ObjectiveSpec::space(*mu));
    }
    let wall: Vec<f64> = s
        .runs
        .iter()
        .map(|m| m.iterations.iter().map(|r| r.wall_time_s).sum())
        .collect();
    assert!(wall[0] < wall[1] && wall[1] < wall[2], "{wall:?}");
    let csv = s.summary_csv().unwrap();
    assert!(csv.starts_with("mu,iteration,post_kl,wall_time_s\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    let single = sweep(&base, &task, &[1.0], 0).unwrap();
    assert_eq!(
        single.runs[0].without_wall_time(),
        run_with_task(&base, &task).unwrap().without_wall_time()
    );
    assert!(sweep(&base, &task, &[1.0, 0.0], 0).is_err());
}

#[test]
fn written_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let task = default_task();
    let base = RunConfig {
        iterations: 2,
        ..RunConfig::default()
    };
    let c = compare(
        &base,
        &task,
        &[
            ObjectiveSpec::space(1.0),
            ObjectiveSpec::spin(1.0, SpinForm::LossOfMargin),
        ],
        0,
    )
    .unwrap();
    c.write(dir.path(), true).unwrap();
    for f in [
        "combined.csv",
        "ranks.csv",
        "kl.svg",
        "space/manifest.json",
        "space/metrics.csv",
        "space/rewards.svg",
        "spin/kl.svg",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let manifest: RunManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("spin/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest, c.runs[1]);
}
