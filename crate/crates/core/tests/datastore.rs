use std::collections::HashMap;

use space_lab::datastore::{
    load_dataset, make_task, make_task_with, sample_dataset, sample_dataset_range, save_dataset,
    TaskOptions,
};
use space_lab::task_model::enumerate_support;
use space_lab::*;

fn response_ratios(task: &TaskSpec) -> Vec<f64> {
    let support = enumerate_support(task.vocab(), task.length()).unwrap();
    (0..task.prompt_count())
        .map(|x| {
            let probs: Vec<f64> = support
                .iter()
                .map(|y| task.target.log_prob(Prompt(x), y).unwrap().exp())
                .collect();
            probs.iter().cloned().fold(0.0, f64::max) / probs.iter().cloned().fold(1.0, f64::min)
        })
        .collect()
}

#[test]
fn default_task_is_far_from_uniform() {
    let ratios = response_ratios(&make_task(7, 3, 3, 4).unwrap());
    assert!(ratios.iter().all(|&r| r > 10.0), "{ratios:?}");
    let pinned = [
        101.74842074181704,
        1097.6335050294551,
        1607.0388035933088,
        199.64453129263788,
    ];
    for (r, p) in ratios.iter().zip(pinned) {
        assert!((r / p - 1.0).abs() <= 1e-9, "{ratios:?}");
    }
}

#[test]
fn zero_logit_debug_task_is_uniform() {
    let task = make_task_with(7, 2, 1, 3, TaskOptions { zero_logits: true }).unwrap();
    assert!(response_ratios(&task)
        .iter()
        .all(|&r| (r - 1.0).abs() <= 1e-15));
}

#[test]
fn dataset_frequencies_within_binomial_bounds() {
    let task = make_task(7, 3, 3, 4).unwrap();
    let data = sample_dataset(&task, 512, 7).unwrap();
    let mut by_prompt: HashMap<usize, Vec<&Response>> = HashMap::new();
    for item in &data.items {
        by_prompt
            .entry(item.prompt.0)
            .or_default()
            .push(&item.response);
    }
    let support = enumerate_support(task.vocab(), task.length()).unwrap();
    let mut checked = 0;
    for (x, responses) in &by_prompt {
        let n_x = responses.len();
        if n_x < 50 {
            continue;
        }
        for y in &support {
            let p = task.target.log_prob(Prompt(*x), y).unwrap().exp();
            let freq = responses.iter().filter(|r| **r == y).count() as f64 / n_x as f64;
            assert!(
                (freq - p).abs() <= 4.0 * (p * (1.0 - p) / n_x as f64).sqrt(),
                "x={x} {y:?}"
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn partitioned_generation_matches_sequential() {
    let task = make_task(7, 3, 3, 4).unwrap();
    let whole = sample_dataset(&task, 300, 42).unwrap();
    let mut parts = Vec::new();
    for range in [0..17, 17..150, 150..151, 151..300] {
        parts.extend(sample_dataset_range(&task, range, 42).unwrap());
    }
    assert_eq!(parts, whole.items);
    let threaded: Vec<Vec<Item>> = std::thread::scope(|s| {
        let handles: Vec<_> = [0..100, 100..200, 200..300]
            .into_iter()
            .map(|r| {
                let task = &task;
                s.spawn(move || sample_dataset_range(task, r, 42).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(threaded.concat(), whole.items);
}

#[test]
fn large_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let task = make_task(7, 3, 3, 4).unwrap();
    let data = sample_dataset(&task, 512, 9).unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&data, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), data);
}

#[test]
fn task_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let task = make_task(123, 4, 2, 3).unwrap();
    let path = dir.path().join("task.json");
    space_lab::datastore::save_task(&task, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"format_version\": 1") || text.contains("\"format_version\":1"));
    assert_eq!(space_lab::datastore::load_task(&path).unwrap(), task);
}
