//! Task and dataset generation plus their on-disk formats.
//!
//! Datasets are JSONL: a header line carrying `format_version`, then one
//! `{"prompt", "response", "label"}` object per item.

use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, LabError, Result};
use crate::objectives::Item;
use crate::rng::{domain, substream};
use crate::task_model::{
    support_size, AutoregressiveTable, Prompt, PromptDistribution, Response, TaskSpec, Vocab,
    DEFAULT_SUPPORT_CAP,
};

pub const DATASET_FORMAT_VERSION: u64 = 1;

/// Half-width of the interval target logits are drawn from.
pub const TARGET_LOGIT_RANGE: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default)]
pub struct TaskOptions {
    /// Force every target logit to zero (uniform target).
    pub zero_logits: bool,
}

/// Seeded task: uniform prompt weights, target logits i.i.d. uniform on `[-2, 2]`.
pub fn make_task(seed: u64, vocab: usize, length: usize, prompts: usize) -> Result<TaskSpec> {
    make_task_with(seed, vocab, length, prompts, TaskOptions::default())
}

pub fn make_task_with(
    seed: u64,
    vocab: usize,
    length: usize,
    prompts: usize,
    opts: TaskOptions,
) -> Result<TaskSpec> {
    let vocab = Vocab::new(vocab)?;
    if length == 0 {
        return Err(contract("length must be >= 1"));
    }
    if prompts == 0 {
        return Err(contract("prompt count must be >= 1"));
    }
    let size = support_size(vocab, length);
    if size > DEFAULT_SUPPORT_CAP as u128 {
        return Err(LabError::SupportTooLarge {
            size,
            cap: DEFAULT_SUPPORT_CAP,
        });
    }
    let target = if opts.zero_logits {
        AutoregressiveTable::uniform(vocab, length, prompts)?
    } else {
        let mut rng = substream(seed, &[domain::TASK]);
        AutoregressiveTable::random(
            vocab,
            length,
            prompts,
            -TARGET_LOGIT_RANGE,
            TARGET_LOGIT_RANGE,
            &mut rng,
        )?
    };
    TaskSpec::new(PromptDistribution::uniform(prompts)?, target, seed)
}

pub fn save_task(task: &TaskSpec, path: &Path) -> Result<()> {
    std::fs::write(path, task.to_json()? + "\n")?;
    Ok(())
}

pub fn load_task(path: &Path) -> Result<TaskSpec> {
    TaskSpec::from_json(&std::fs::read_to_string(path)?)
}

/// Whether items are annotated or opponent-generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Real,
    Synthetic,
}

/// The annotated set `{x_i, y_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedDataset {
    pub items: Vec<Item>,
    pub task_seed: u64,
    pub label: Origin,
}

impl AnnotatedDataset {
    pub fn n(&self) -> usize {
        self.items.len()
    }
}

fn sample_item(task: &TaskSpec, seed: u64, index: usize) -> Result<Item> {
    let mut rng = substream(seed, &[domain::DATASET, index as u64]);
    let x = task.prompt_dist.sample(&mut rng);
    let y = task.target.sample(x, &mut rng)?;
    Ok(Item::new(x, y))
}

/// `n` i.i.d. draws `x ~ q`, `y ~ p_data(.|x)`. Item `i` comes from its own
/// substream, so any partition of `0..n` reproduces the same items.
pub fn sample_dataset(task: &TaskSpec, n: usize, seed: u64) -> Result<AnnotatedDataset> {
    if n == 0 {
        return Err(contract("dataset size must be >= 1"));
    }
    let items = sample_dataset_range(task, 0..n, seed)?;
    Ok(AnnotatedDataset {
        items,
        task_seed: task.seed,
        label: Origin::Real,
    })
}

/// Items `range` of the dataset that [`sample_dataset`] would produce.
pub fn sample_dataset_range(task: &TaskSpec, range: Range<usize>, seed: u64) -> Result<Vec<Item>> {
    range.map(|i| sample_item(task, seed, i)).collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u64,
    task_seed: u64,
    n: usize,
    label: Origin,
}

#[derive(Serialize, Deserialize)]
struct Line {
    prompt: usize,
    response: Vec<usize>,
    label: Origin,
}

pub fn save_dataset(dataset: &AnnotatedDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = Header {
        format_version: DATASET_FORMAT_VERSION,
        task_seed: dataset.task_seed,
        n: dataset.n(),
        label: dataset.label,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for item in &dataset.items {
        let line = Line {
            prompt: item.prompt.0,
            response: item.response.tokens().to_vec(),
            label: dataset.label,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<AnnotatedDataset> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(text) if text.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });

    let (line_no, text) = match lines.next() {
        None => return Err(LabError::EmptyDataset),
        Some((no, text)) => (no, text?),
    };
    let header: Header = serde_json::from_str(&text).map_err(|e| LabError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(LabError::Version {
            found: header.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }

    let mut items = Vec::with_capacity(header.n);
    let mut last_line = line_no;
    for (no, text) in lines {
        let text = text?;
        last_line = no;
        let line: Line = serde_json::from_str(&text).map_err(|e| LabError::Parse {
            line: no,
            message: e.to_string(),
        })?;
        if line.label != header.label {
            return Err(LabError::Parse {
                line: no,
                message: format!("label {:?} != header label {:?}", line.label, header.label),
            });
        }
        items.push(Item::new(Prompt(line.prompt), Response::new(line.response)));
    }
    if items.is_empty() {
        return Err(LabError::EmptyDataset);
    }
    if items.len() != header.n {
        return Err(LabError::Parse {
            line: last_line + 1,
            message: format!(
                "truncated: header declares {} items, found {}",
                header.n,
                items.len()
            ),
        });
    }
    Ok(AnnotatedDataset {
        items,
        task_seed: header.task_seed,
        label: header.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::enumerate_support;

    #[test]
    fn same_seed_same_task() {
        assert_eq!(
            make_task(7, 3, 3, 4).unwrap(),
            make_task(7, 3, 3, 4).unwrap()
        );
        assert_ne!(
            make_task(7, 3, 3, 4).unwrap(),
            make_task(8, 3, 3, 4).unwrap()
        );
    }

    #[test]
    fn task_logits_in_range() {
        let t = make_task(1, 3, 3, 4).unwrap();
        assert!(t.target.logits().iter().all(|l| l.abs() <= 2.0));
    }

    #[test]
    fn zero_logit_task_is_uniform() {
        let t = make_task_with(1, 2, 1, 1, TaskOptions { zero_logits: true }).unwrap();
        for y in enumerate_support(t.vocab(), 1).unwrap() {
            assert!((t.target.log_prob(Prompt(0), &y).unwrap().exp() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn task_validation() {
        assert!(make_task(1, 1, 3, 4).is_err());
        assert!(make_task(1, 3, 0, 4).is_err());
        assert!(make_task(1, 3, 3, 0).is_err());
        assert!(matches!(
            make_task(1, 4, 9, 1),
            Err(LabError::SupportTooLarge { .. })
        ));
    }

    #[test]
    fn dataset_determinism_and_single_item() {
        let t = make_task(7, 3, 3, 4).unwrap();
        assert_eq!(
            sample_dataset(&t, 50, 3).unwrap(),
            sample_dataset(&t, 50, 3).unwrap()
        );
        let one = sample_dataset(&t, 1, 3).unwrap();
        assert_eq!(one.n(), 1);
        assert!(t.target.check_response(&one.items[0].response).is_ok());
        assert!(sample_dataset(&t, 0, 3).is_err());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = make_task(7, 3, 3, 4).unwrap();
        let d = sample_dataset(&t, 512, 9).unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&d, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), d);

        let tp = dir.path().join("task.json");
        save_task(&t, &tp).unwrap();
        assert_eq!(load_task(&tp).unwrap(), t);
    }

    #[test]
    fn empty_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_dataset(&path), Err(LabError::EmptyDataset)));
        std::fs::write(
            &path,
            r#"{"format_version":1,"task_seed":1,"n":0,"label":"real"}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(&path), Err(LabError::EmptyDataset)));
    }

    #[test]
    fn truncated_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let t = make_task(7, 3, 3, 4).unwrap();
        let d = sample_dataset(&t, 10, 9).unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // cut mid-way through the sixth line
        let cut = text.match_indices('\n').nth(5).unwrap().0 - 4;
        std::fs::write(&path, &text[..cut]).unwrap();
        match load_dataset(&path) {
            Err(LabError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
        // cut cleanly at a line boundary: the count check catches it
        let cut = text.match_indices('\n').nth(5).unwrap().0 + 1;
        std::fs::write(&path, &text[..cut]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, LabError::Parse { line: 7, .. }), "{err}");
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"format_version\":2,\"task_seed\":1,\"n\":1,\"label\":\"real\"}\n{\"prompt\":0,\"response\":[0],\"label\":\"real\"}\n").unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(LabError::Version {
                found: 2,
                expected: 1
            })
        ));
    }
}
