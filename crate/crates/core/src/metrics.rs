//! Reward and classification metrics over a labeled batch.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::objectives::link::{posterior_real, posterior_synth};
use crate::objectives::{Item, LabeledBatch};
use crate::task_model::AutoregressiveTable;

/// Mean implicit rewards `log p_theta(u|x) - log p_opponent(u|x)` per origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSummary {
    pub mean_reward_real: f64,
    pub mean_reward_synth: f64,
    pub reward_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub real_rewards: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub synth_rewards: Option<Vec<f64>>,
}

impl RewardSummary {
    pub fn from_means(mean_reward_real: f64, mean_reward_synth: f64) -> Self {
        RewardSummary {
            mean_reward_real,
            mean_reward_synth,
            reward_gap: mean_reward_real - mean_reward_synth,
            real_rewards: None,
            synth_rewards: None,
        }
    }

    pub fn without_samples(mut self) -> Self {
        self.real_rewards = None;
        self.synth_rewards = None;
        self
    }
}

fn rewards(
    items: &[Item],
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|it| {
            Ok(main.log_prob(it.prompt, &it.response)?
                - opponent.log_prob(it.prompt, &it.response)?)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn reward_summary(
    batch: &LabeledBatch,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
) -> Result<RewardSummary> {
    main.check_same_shape(opponent)?;
    if batch.real_items.is_empty() || batch.synth_items.is_empty() {
        return Err(contract(
            "reward summary needs nonempty annotated and synthetic lists",
        ));
    }
    let real = rewards(&batch.real_items, main, opponent)?;
    let synth = rewards(&batch.synth_items, main, opponent)?;
    let mut summary = RewardSummary::from_means(mean(&real), mean(&synth));
    summary.real_rewards = Some(real);
    summary.synth_rewards = Some(synth);
    Ok(summary)
}

/// Fraction of items whose posterior under the 1 : mu mixture favours their
/// true origin. A posterior of exactly 0.5 counts as wrong.
pub fn classifier_accuracy(
    batch: &LabeledBatch,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    mu: f64,
) -> Result<f64> {
    main.check_same_shape(opponent)?;
    let total = batch.real_items.len() + batch.synth_items.len();
    if total == 0 {
        return Err(contract("classifier accuracy needs a nonempty batch"));
    }
    let mut correct = 0usize;
    for r in rewards(&batch.real_items, main, opponent)? {
        if posterior_real(mu, r)? > 0.5 {
            correct += 1;
        }
    }
    for r in rewards(&batch.synth_items, main, opponent)? {
        if posterior_synth(mu, r)? > 0.5 {
            correct += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
