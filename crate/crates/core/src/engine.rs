//! The self-play loop.
//!
//! Each iteration samples synthetic responses from the frozen opponent,
//! optimizes the main model against annotated and synthetic data for a few
//! epochs, and records metrics. The outer loop then copies main into the
//! opponent. Monte-Carlo mode trains on a finite dataset with minibatches;
//! exact mode swaps batches for enumeration-weighted expectations and uses
//! plain gradient descent.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datastore::{make_task, sample_dataset, AnnotatedDataset};
use crate::error::{contract, LabError, Result};
use crate::metrics::{classifier_accuracy, reward_summary, RewardSummary};
use crate::objectives::link::{posterior_real, posterior_synth};
use crate::objectives::{
    exact_loss_and_grad, loss_and_grad, ExactSynth, Item, LabeledBatch, ObjectiveSpec,
};
use crate::optimizer::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::rng::{domain, substream};
use crate::task_model::{enumerate_support, AutoregressiveTable, Prompt, TaskSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    MonteCarlo,
    Exact,
}

/// Whether synthetic responses are resampled every iteration or drawn once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegenPolicy {
    #[default]
    Fresh,
    Fixed,
}

/// Starting point for main and opponent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    #[default]
    Uniform,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task_seed: u64,
    pub run_seed: u64,
    pub vocab_size: usize,
    pub length: usize,
    pub prompt_count: usize,
    pub objective: ObjectiveSpec,
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub generation_ratio: f64,
    pub optimizer: OptimizerConfig,
    pub mode: Mode,
    pub regen_policy: RegenPolicy,
    pub init: InitPolicy,
    /// Replace every synthetic response with a copy of an annotated one.
    pub force_synthetic_equals_real: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task_seed: 7,
            run_seed: 1,
            vocab_size: 3,
            length: 3,
            prompt_count: 4,
            objective: ObjectiveSpec::default(),
            iterations: 5,
            epochs_per_iteration: 2,
            batch_size: 64,
            dataset_size: 512,
            generation_ratio: 1.0,
            optimizer: OptimizerConfig::default(),
            mode: Mode::MonteCarlo,
            regen_policy: RegenPolicy::Fresh,
            init: InitPolicy::Uniform,
            force_synthetic_equals_real: false,
        }
    }
}

/// Plain-descent learning rate used by [`RunConfig::exact_default`].
pub const EXACT_MODE_LR: f64 = 2.0;

impl RunConfig {
    /// Defaults for exact mode: plain gradient descent.
    pub fn exact_default() -> Self {
        RunConfig {
            mode: Mode::Exact,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::PlainGd,
                learning_rate: EXACT_MODE_LR,
                ..OptimizerConfig::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn with_objective(mut self, objective: ObjectiveSpec) -> Self {
        if let ObjectiveSpec::Space { mu } = objective {
            self.generation_ratio = mu;
        }
        self.objective = objective;
        self
    }

    /// `m = round(mu n)`.
    pub fn synthetic_count(&self) -> usize {
        (self.generation_ratio * self.dataset_size as f64).round() as usize
    }

    /// Optimizer steps per iteration: `epochs * ceil(n / batch_size)`.
    pub fn steps_per_iteration(&self) -> usize {
        self.epochs_per_iteration * self.dataset_size.div_ceil(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.optimizer.validate()?;
        if self.iterations == 0 {
            return Err(contract("iterations must be >= 1"));
        }
        if self.epochs_per_iteration == 0 {
            return Err(contract("epochs_per_iteration must be >= 1"));
        }
        if self.dataset_size == 0 {
            return Err(contract("dataset_size must be >= 1"));
        }
        if self.batch_size == 0 || self.batch_size > self.dataset_size {
            return Err(contract(format!(
                "batch_size must lie in 1..={}, got {}",
                self.dataset_size, self.batch_size
            )));
        }
        if !(self.generation_ratio > 0.0 && self.generation_ratio.is_finite()) {
            return Err(contract(format!(
                "generation_ratio must be positive, got {}",
                self.generation_ratio
            )));
        }
        if self.synthetic_count() == 0 {
            return Err(contract(
                "generation_ratio * dataset_size rounds to zero synthetic samples",
            ));
        }
        if let ObjectiveSpec::Space { mu } = self.objective {
            if mu != self.generation_ratio {
                return Err(contract(format!(
                    "SPACE mu ({mu}) must equal generation_ratio ({})",
                    self.generation_ratio
                )));
            }
        }
        if self.objective.is_paired() && self.synthetic_count() != self.dataset_size {
            return Err(contract(format!(
                "{} pairs each annotated item with one synthetic item; generation_ratio must give m = n",
                self.objective.name()
            )));
        }
        if self.mode == Mode::Exact && self.regen_policy == RegenPolicy::Fixed {
            return Err(contract(
                "fixed regeneration applies to Monte-Carlo mode only",
            ));
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }
}

/// Metrics for one self-play iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pre_kl: f64,
    pub post_kl: f64,
    pub mean_reward_real: f64,
    pub mean_reward_synth: f64,
    pub reward_gap: f64,
    pub mean_loss: f64,
    pub grad_norm: f64,
    pub classifier_accuracy: f64,
    pub wall_time_s: f64,
    /// Rewards at the start of the iteration, on the same samples.
    pub start_reward_real: f64,
    pub start_reward_synth: f64,
    pub start_reward_gap: f64,
    /// Largest per-step parameter change (sup norm) during the iteration.
    pub max_update: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub task_seed: u64,
    pub run_seed: u64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub abort_reason: Option<String>,
    pub iterations: Vec<IterationRecord>,
}

impl RunManifest {
    pub fn final_post_kl(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.post_kl)
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_wall_time(&self) -> Self {
        let mut copy = self.clone();
        for r in copy.iterations.iter_mut() {
            r.wall_time_s = 0.0;
        }
        copy
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// CSV header of the per-iteration metrics file.
pub const METRICS_HEADER: [&str; 10] = [
    "iteration",
    "pre_kl",
    "post_kl",
    "mean_reward_real",
    "mean_reward_synth",
    "reward_gap",
    "mean_loss",
    "grad_norm",
    "classifier_accuracy",
    "wall_time_s",
];

fn metrics_row(r: &IterationRecord) -> [String; 10] {
    [
        r.iteration.to_string(),
        r.pre_kl.to_string(),
        r.post_kl.to_string(),
        r.mean_reward_real.to_string(),
        r.mean_reward_synth.to_string(),
        r.reward_gap.to_string(),
        r.mean_loss.to_string(),
        r.grad_norm.to_string(),
        r.classifier_accuracy.to_string(),
        r.wall_time_s.to_string(),
    ]
}

pub fn metrics_csv(records: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record(metrics_row(r))?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_metrics_csv(records: &[IterationRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(records)?)?;
    Ok(())
}

/// `m` synthetic responses from the opponent, one per prompt in `prompts`
/// (cycled when `m` exceeds their number). Response `j` of iteration `t`
/// comes from substream `(seed, t, j)`.
pub fn generate_synthetic(
    opponent: &AutoregressiveTable,
    prompts: &[Prompt],
    m: usize,
    seed: u64,
    iteration: usize,
) -> Result<Vec<Item>> {
    if prompts.is_empty() {
        return Err(contract("synthetic generation needs at least one prompt"));
    }
    (0..m)
        .map(|j| {
            let x = prompts[j % prompts.len()];
            let mut rng = substream(seed, &[domain::SYNTHETIC, iteration as u64, j as u64]);
            Ok(Item::new(x, opponent.sample(x, &mut rng)?))
        })
        .collect()
}

/// Main player, opponent, and data for one self-play run.
pub struct SelfPlay {
    config: RunConfig,
    task: TaskSpec,
    dataset: AnnotatedDataset,
    main: AutoregressiveTable,
    opponent: AutoregressiveTable,
    fixed_synth: Option<Vec<Item>>,
    iteration: usize,
}

impl SelfPlay {
    pub fn new(config: RunConfig, task: TaskSpec) -> Result<Self> {
        let main = match config.init {
            InitPolicy::Uniform => {
                AutoregressiveTable::uniform(task.vocab(), task.length(), task.prompt_count())?
            }
            InitPolicy::Target => task.target.snapshot(),
        };
        Self::with_start(config, task, main)
    }

    /// Start main and opponent from `start` instead of the configured init.
    pub fn with_start(
        config: RunConfig,
        task: TaskSpec,
        start: AutoregressiveTable,
    ) -> Result<Self> {
        config.validate()?;
        start.check_same_shape(&task.target)?;
        let dataset = sample_dataset(&task, config.dataset_size, task.seed)?;
        let opponent = start.snapshot();
        Ok(SelfPlay {
            config,
            task,
            dataset,
            main: start,
            opponent,
            fixed_synth: None,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn dataset(&self) -> &AnnotatedDataset {
        &self.dataset
    }

    pub fn main(&self) -> &AutoregressiveTable {
        &self.main
    }

    pub fn opponent(&self) -> &AutoregressiveTable {
        &self.opponent
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Opponent takes the main player's parameters.
    pub fn sync_opponent(&mut self) {
        self.opponent = self.main.snapshot();
    }

    fn synthetic_items(&mut self) -> Result<Vec<Item>> {
        let m = self.config.synthetic_count();
        if self.config.force_synthetic_equals_real {
            let n = self.dataset.n();
            return Ok((0..m).map(|j| self.dataset.items[j % n].clone()).collect());
        }
        if let Some(fixed) = &self.fixed_synth {
            return Ok(fixed.clone());
        }
        let prompts: Vec<Prompt> = self.dataset.items.iter().map(|it| it.prompt).collect();
        let items = generate_synthetic(
            &self.opponent,
            &prompts,
            m,
            self.config.run_seed,
            self.iteration,
        )?;
        if self.config.regen_policy == RegenPolicy::Fixed {
            self.fixed_synth = Some(items.clone());
        }
        Ok(items)
    }

    /// One iteration of training. Does not touch the opponent.
    pub fn run_iteration(&mut self) -> Result<IterationRecord> {
        let started = Instant::now();
        let record = match self.config.mode {
            Mode::MonteCarlo => self.monte_carlo_iteration(started)?,
            Mode::Exact => self.exact_iteration(started)?,
        };
        self.iteration += 1;
        Ok(record)
    }

    fn classifier_mu(&self) -> f64 {
        match self.config.objective {
            ObjectiveSpec::Space { mu } => mu,
            _ => self.config.generation_ratio,
        }
    }

    fn abort(&self, epoch: usize, batch: usize, reason: impl Into<String>) -> LabError {
        LabError::Aborted {
            iteration: self.iteration,
            epoch,
            batch,
            reason: reason.into(),
        }
    }

    fn monte_carlo_iteration(&mut self, started: Instant) -> Result<IterationRecord> {
        let t = self.iteration;
        let synth = self.synthetic_items()?;
        let full = LabeledBatch::new(self.dataset.items.clone(), synth);
        let start_rewards = reward_summary(&full, &self.main, &self.opponent)?.without_samples();
        let pre_kl = self.task.kl_to(&self.main)?;

        let spec = self.config.objective.clone();
        let (n, m) = (full.real_items.len(), full.synth_items.len());
        let batches = n.div_ceil(self.config.batch_size);
        let mut optimizer =
            Optimizer::new(self.config.optimizer.clone(), self.main.logits().len())?;
        let (mut loss_sum, mut norm_sum, mut max_update, mut steps) = (0.0, 0.0, 0.0f64, 0usize);

        for epoch in 0..self.config.epochs_per_iteration {
            let mut real_order: Vec<usize> = (0..n).collect();
            real_order.shuffle(&mut substream(
                self.config.run_seed,
                &[domain::SHUFFLE, t as u64, epoch as u64, 0],
            ));
            let mut synth_order: Vec<usize> = (0..m).collect();
            synth_order.shuffle(&mut substream(
                self.config.run_seed,
                &[domain::SHUFFLE, t as u64, epoch as u64, 1],
            ));

            for b in 0..batches {
                let real_idx = &real_order
                    [b * self.config.batch_size..((b + 1) * self.config.batch_size).min(n)];
                let real: Vec<Item> = real_idx
                    .iter()
                    .map(|&i| full.real_items[i].clone())
                    .collect();
                let synth: Vec<Item> = match spec {
                    ObjectiveSpec::Sft => Vec::new(),
                    // pairs stay aligned by prompt occurrence
                    _ if spec.is_paired() => real_idx
                        .iter()
                        .map(|&i| full.synth_items[i].clone())
                        .collect(),
                    _ => synth_order[b * m / batches..(b + 1) * m / batches]
                        .iter()
                        .map(|&j| full.synth_items[j].clone())
                        .collect(),
                };
                let batch = LabeledBatch::new(real, synth);
                let (loss, grad) = loss_and_grad(&spec, &batch, &self.main, &self.opponent)
                    .map_err(|e| self.abort(epoch, b, e.to_string()))?;
                if !loss.is_finite() || !grad.is_finite() {
                    return Err(self.abort(
                        epoch,
                        b,
                        format!("non-finite loss or gradient (loss = {loss})"),
                    ));
                }
                let before = self.main.logits().to_vec();
                optimizer
                    .step(self.main.logits_mut(), grad.values())
                    .map_err(|e| self.abort(epoch, b, e.to_string()))?;
                let update = before
                    .iter()
                    .zip(self.main.logits())
                    .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
                max_update = max_update.max(update);
                loss_sum += loss;
                norm_sum += grad.l2_norm();
                steps += 1;
            }
        }

        let post_kl = self.task.kl_to(&self.main)?;
        let end_rewards = reward_summary(&full, &self.main, &self.opponent)?.without_samples();
        let accuracy =
            classifier_accuracy(&full, &self.main, &self.opponent, self.classifier_mu())?;
        Ok(self.record(
            pre_kl,
            post_kl,
            end_rewards,
            start_rewards,
            loss_sum,
            norm_sum,
            max_update,
            steps,
            accuracy,
            started,
        ))
    }

    fn exact_iteration(&mut self, started: Instant) -> Result<IterationRecord> {
        let synth_source = if self.config.force_synthetic_equals_real {
            ExactSynth::CopyReal
        } else {
            ExactSynth::Opponent
        };
        let start_rewards = self.exact_rewards(synth_source)?;
        let pre_kl = self.task.kl_to(&self.main)?;
        let lr = self.config.optimizer.learning_rate;
        let (mut loss_sum, mut norm_sum, mut max_update) = (0.0, 0.0, 0.0f64);
        let steps = self.config.steps_per_iteration();
        let per_epoch = self.config.dataset_size.div_ceil(self.config.batch_size);
        for step in 0..steps {
            let (epoch, b) = (step / per_epoch, step % per_epoch);
            let (loss, grad) = exact_loss_and_grad(
                &self.config.objective,
                &self.task,
                &self.main,
                &self.opponent,
                synth_source,
            )?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(self.abort(
                    epoch,
                    b,
                    format!("non-finite exact loss or gradient (loss = {loss})"),
                ));
            }
            for (p, g) in self.main.logits_mut().iter_mut().zip(grad.values()) {
                *p -= lr * g;
            }
            max_update = max_update.max(lr * grad.sup_norm());
            loss_sum += loss;
            norm_sum += grad.l2_norm();
        }
        let post_kl = self.task.kl_to(&self.main)?;
        let end_rewards = self.exact_rewards(synth_source)?;
        let accuracy = self.exact_accuracy(synth_source)?;
        Ok(self.record(
            pre_kl,
            post_kl,
            end_rewards,
            start_rewards,
            loss_sum,
            norm_sum,
            max_update,
            steps,
            accuracy,
            started,
        ))
    }

    /// Expected rewards under `p_data` and under the synthetic distribution.
    fn exact_rewards(&self, synth: ExactSynth) -> Result<RewardSummary> {
        let (mut real, mut fake) = (0.0, 0.0);
        self.for_each_exact(synth, |_, p_data, p_synth, r| {
            real += p_data * r;
            fake += p_synth * r;
            Ok(())
        })?;
        Ok(RewardSummary::from_means(real, fake))
    }

    fn exact_accuracy(&self, synth: ExactSynth) -> Result<f64> {
        let mu = self.classifier_mu();
        let mut correct = 0.0;
        self.for_each_exact(synth, |_, p_data, p_synth, r| {
            if posterior_real(mu, r)? > 0.5 {
                correct += p_data;
            }
            if posterior_synth(mu, r)? > 0.5 {
                correct += mu * p_synth;
            }
            Ok(())
        })?;
        Ok(correct / (1.0 + mu))
    }

    /// Calls `f(x, q p_data(u|x), q p_synth(u|x), r(u|x))` for every prompt and response.
    fn for_each_exact<F>(&self, synth: ExactSynth, mut f: F) -> Result<()>
    where
        F: FnMut(Prompt, f64, f64, f64) -> Result<()>,
    {
        let support = enumerate_support(self.task.vocab(), self.task.length())?;
        for (x, &qx) in self.task.prompt_dist.weights().iter().enumerate() {
            let x = Prompt(x);
            for u in &support {
                let lp_opp = self.opponent.log_prob(x, u)?;
                let r = self.main.log_prob(x, u)? - lp_opp;
                let p_data = self.task.target.log_prob(x, u)?.exp();
                let p_synth = match synth {
                    ExactSynth::Opponent => lp_opp.exp(),
                    ExactSynth::CopyReal => p_data,
                };
                f(x, qx * p_data, qx * p_synth, r)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        pre_kl: f64,
        post_kl: f64,
        end: RewardSummary,
        start: RewardSummary,
        loss_sum: f64,
        norm_sum: f64,
        max_update: f64,
        steps: usize,
        accuracy: f64,
        started: Instant,
    ) -> IterationRecord {
        IterationRecord {
            iteration: self.iteration,
            pre_kl,
            post_kl,
            mean_reward_real: end.mean_reward_real,
            mean_reward_synth: end.mean_reward_synth,
            reward_gap: end.reward_gap,
            mean_loss: loss_sum / steps as f64,
            grad_norm: norm_sum / steps as f64,
            classifier_accuracy: accuracy,
            wall_time_s: started.elapsed().as_secs_f64(),
            start_reward_real: start.mean_reward_real,
            start_reward_synth: start.mean_reward_synth,
            start_reward_gap: start.reward_gap,
            max_update,
            steps,
        }
    }
}

/// Build the task from the config and run.
pub fn run(config: &RunConfig) -> Result<RunManifest> {
    config.validate()?;
    let task = make_task(
        config.task_seed,
        config.vocab_size,
        config.length,
        config.prompt_count,
    )?;
    run_with_task(config, &task)
}

/// Run self-play on an existing task. Invalid configurations are errors;
/// failures during training produce a manifest with status `aborted`
/// holding every completed iteration.
pub fn run_with_task(config: &RunConfig, task: &TaskSpec) -> Result<RunManifest> {
    let mut config = config.clone();
    config.task_seed = task.seed;
    config.vocab_size = task.vocab().size();
    config.length = task.length();
    config.prompt_count = task.prompt_count();
    drive(SelfPlay::new(config, task.clone())?)
}

/// Run every configured iteration of `selfplay`, syncing the opponent after each.
pub fn drive(mut selfplay: SelfPlay) -> Result<RunManifest> {
    let config = selfplay.config().clone();
    let mut manifest = RunManifest {
        config_hash: config.hash()?,
        task_seed: selfplay.task().seed,
        run_seed: config.run_seed,
        status: RunStatus::Completed,
        abort_reason: None,
        iterations: Vec::with_capacity(config.iterations),
        config,
    };
    for _ in 0..manifest.config.iterations {
        match selfplay.run_iteration() {
            Ok(record) => manifest.iterations.push(record),
            Err(e) => {
                manifest.status = RunStatus::Aborted;
                manifest.abort_reason = Some(e.to_string());
                break;
            }
        }
        selfplay.sync_opponent();
    }
    Ok(manifest)
}
