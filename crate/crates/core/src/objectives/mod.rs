//! The five training objectives and their analytic gradients.
//!
//! Every objective is a weighted sum of per-sample terms that depend on the
//! main model only through `log p_theta(u | x)` for a handful of responses
//! `u`. Losses therefore compute a coefficient `dL / d log p_theta(u|x)` per
//! response and push it through the softmax steps of the table
//! (`d log p / d logit = onehot - softmax` at each visited context).
//!
//! Monte-Carlo batches and exact enumeration share the same term
//! representation ([`WeightedTerms`]); only the weights differ.

pub mod link;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::task_model::{
    enumerate_support_capped, AutoregressiveTable, Prompt, Response, TaskSpec, DEFAULT_SUPPORT_CAP,
};
use link::{log_sigma_mu_unchecked, log_sigmoid, sigmoid, softplus};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_GAMMA: f64 = 0.0;
pub const DEFAULT_MU: f64 = 1.0;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_mu() -> f64 {
    DEFAULT_MU
}

/// How the SPIN logistic loss is applied to the two rewards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpinForm {
    /// `l(lambda r(y)) - l(lambda r(y'))`
    DifferenceOfLosses,
    /// `l(lambda (r(y) - r(y')))`
    #[default]
    LossOfMargin,
}

/// Objective selector with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectiveSpec {
    Sft,
    Spin {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        spin_form: SpinForm,
    },
    Sipo {
        #[serde(default = "default_tau")]
        tau: f64,
    },
    Ssimpo {
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        gamma: f64,
    },
    Space {
        #[serde(default = "default_mu")]
        mu: f64,
    },
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec::Space { mu: DEFAULT_MU }
    }
}

impl ObjectiveSpec {
    pub fn space(mu: f64) -> Self {
        ObjectiveSpec::Space { mu }
    }

    pub fn spin(lambda: f64, spin_form: SpinForm) -> Self {
        ObjectiveSpec::Spin { lambda, spin_form }
    }

    pub fn sipo(tau: f64) -> Self {
        ObjectiveSpec::Sipo { tau }
    }

    pub fn ssimpo(beta: f64, gamma: f64) -> Self {
        ObjectiveSpec::Ssimpo { beta, gamma }
    }

    /// The four self-play objectives with default hyperparameters.
    pub fn self_play_defaults() -> Vec<ObjectiveSpec> {
        vec![
            ObjectiveSpec::space(DEFAULT_MU),
            ObjectiveSpec::spin(DEFAULT_LAMBDA, SpinForm::LossOfMargin),
            ObjectiveSpec::sipo(DEFAULT_TAU),
            ObjectiveSpec::ssimpo(DEFAULT_BETA, DEFAULT_GAMMA),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveSpec::Sft => "SFT",
            ObjectiveSpec::Spin { .. } => "SPIN",
            ObjectiveSpec::Sipo { .. } => "S-IPO",
            ObjectiveSpec::Ssimpo { .. } => "S-SimPO",
            ObjectiveSpec::Space { .. } => "SPACE",
        }
    }

    /// Losses defined on aligned (real, synthetic) pairs.
    pub fn is_paired(&self) -> bool {
        matches!(
            self,
            ObjectiveSpec::Spin { .. } | ObjectiveSpec::Sipo { .. } | ObjectiveSpec::Ssimpo { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(contract(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        match *self {
            ObjectiveSpec::Sft => Ok(()),
            ObjectiveSpec::Spin { lambda, .. } => positive("lambda", lambda),
            ObjectiveSpec::Sipo { tau } => positive("tau", tau),
            ObjectiveSpec::Ssimpo { beta, gamma } => {
                positive("beta", beta)?;
                if gamma.is_finite() {
                    Ok(())
                } else {
                    Err(contract("gamma must be finite"))
                }
            }
            ObjectiveSpec::Space { mu } => positive("mu", mu),
        }
    }
}

/// One `(prompt, response)` sample.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Item {
    pub prompt: Prompt,
    pub response: Response,
}

impl Item {
    pub fn new(prompt: Prompt, response: Response) -> Self {
        Item { prompt, response }
    }
}

/// Annotated (label c = 1) and synthetic (c = 0) samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledBatch {
    pub real_items: Vec<Item>,
    pub synth_items: Vec<Item>,
}

impl LabeledBatch {
    pub fn new(real_items: Vec<Item>, synth_items: Vec<Item>) -> Self {
        LabeledBatch {
            real_items,
            synth_items,
        }
    }

    /// Check real/synthetic alignment for the paired losses.
    pub fn check_paired(&self) -> Result<()> {
        if self.real_items.is_empty() {
            return Err(contract("paired loss needs a nonempty batch"));
        }
        if self.real_items.len() != self.synth_items.len() {
            return Err(contract(format!(
                "unpaired batch: {} real vs {} synthetic items",
                self.real_items.len(),
                self.synth_items.len()
            )));
        }
        if let Some(i) = (0..self.real_items.len())
            .find(|&i| self.real_items[i].prompt != self.synth_items[i].prompt)
        {
            return Err(contract(format!(
                "unpaired batch: prompts differ at index {i}"
            )));
        }
        Ok(())
    }
}

/// `dLoss / dlogit`, laid out like the model's logits.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTable {
    vocab: usize,
    values: Vec<f64>,
}

impl GradientTable {
    pub fn zeros_like(model: &AutoregressiveTable) -> Self {
        GradientTable {
            vocab: model.vocab().size(),
            values: vec![0.0; model.logits().len()],
        }
    }

    pub fn from_values(model: &AutoregressiveTable, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.logits().len() {
            return Err(contract("gradient length does not match model"));
        }
        Ok(GradientTable {
            vocab: model.vocab().size(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Largest absolute per-context sum; zero up to rounding for any softmax gradient.
    pub fn max_row_sum(&self) -> f64 {
        self.values
            .chunks(self.vocab)
            .map(|row| row.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }
}

/// A weighted single-response term.
#[derive(Clone, Debug, PartialEq)]
pub struct Weighted {
    pub prompt: Prompt,
    pub response: Response,
    pub weight: f64,
}

/// A weighted (real, synthetic) pair under one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPair {
    pub prompt: Prompt,
    pub real: Response,
    pub synth: Response,
    pub weight: f64,
}

/// Where synthetic responses come from in exact mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactSynth {
    /// `y' ~ p_opponent(. | x)`, independent of `y`.
    Opponent,
    /// `y' = y`: the synthetic response is a copy of the annotated one.
    CopyReal,
}

/// The weighted terms an objective is summed over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightedTerms {
    pub real: Vec<Weighted>,
    pub synth: Vec<Weighted>,
    pub pairs: Vec<WeightedPair>,
}

impl WeightedTerms {
    /// Monte-Carlo weights for a sampled batch.
    ///
    /// SPACE uses `1/n` on annotated terms and `mu/m` on synthetic terms, so
    /// the estimate is unbiased for any synthetic count `m`.
    pub fn from_batch(spec: &ObjectiveSpec, batch: &LabeledBatch) -> Result<Self> {
        spec.validate()?;
        let n = batch.real_items.len();
        if n == 0 {
            return Err(contract(format!(
                "{} needs a nonempty annotated list",
                spec.name()
            )));
        }
        let single = |items: &[Item], w: f64| {
            items
                .iter()
                .map(|it| Weighted {
                    prompt: it.prompt,
                    response: it.response.clone(),
                    weight: w,
                })
                .collect::<Vec<_>>()
        };
        let mut terms = WeightedTerms::default();
        match *spec {
            ObjectiveSpec::Sft => terms.real = single(&batch.real_items, 1.0 / n as f64),
            ObjectiveSpec::Space { mu } => {
                let m = batch.synth_items.len();
                if m == 0 {
                    return Err(contract("SPACE needs a nonempty synthetic list"));
                }
                terms.real = single(&batch.real_items, 1.0 / n as f64);
                terms.synth = single(&batch.synth_items, mu / m as f64);
            }
            _ => {
                batch.check_paired()?;
                terms.pairs = batch
                    .real_items
                    .iter()
                    .zip(&batch.synth_items)
                    .map(|(r, s)| WeightedPair {
                        prompt: r.prompt,
                        real: r.response.clone(),
                        synth: s.response.clone(),
                        weight: 1.0 / n as f64,
                    })
                    .collect();
            }
        }
        Ok(terms)
    }

    /// Enumeration weights for the exact expected loss: `q(x) p_data(y|x)` on
    /// annotated terms and `mu q(x) p_opponent(y'|x)` on synthetic ones.
    pub fn exact(
        spec: &ObjectiveSpec,
        task: &TaskSpec,
        opponent: &AutoregressiveTable,
        synth: ExactSynth,
    ) -> Result<Self> {
        Self::exact_capped(spec, task, opponent, synth, DEFAULT_SUPPORT_CAP)
    }

    pub fn exact_capped(
        spec: &ObjectiveSpec,
        task: &TaskSpec,
        opponent: &AutoregressiveTable,
        synth: ExactSynth,
        cap: usize,
    ) -> Result<Self> {
        spec.validate()?;
        task.target.check_same_shape(opponent)?;
        let support = enumerate_support_capped(task.vocab(), task.length(), cap)?;
        if spec.is_paired()
            && synth == ExactSynth::Opponent
            && (support.len() as u128).pow(2) > cap as u128
        {
            return Err(crate::error::LabError::SupportTooLarge {
                size: (support.len() as u128).pow(2),
                cap,
            });
        }
        let mut terms = WeightedTerms::default();
        for (x, &qx) in task.prompt_dist.weights().iter().enumerate() {
            let prompt = Prompt(x);
            let p_data: Vec<f64> = support
                .iter()
                .map(|y| task.target.log_prob_unchecked(prompt, y).exp())
                .collect();
            let p_synth: Vec<f64> = match synth {
                ExactSynth::Opponent => support
                    .iter()
                    .map(|y| opponent.log_prob_unchecked(prompt, y).exp())
                    .collect(),
                ExactSynth::CopyReal => p_data.clone(),
            };
            match *spec {
                ObjectiveSpec::Sft => {
                    for (y, pd) in support.iter().zip(&p_data) {
                        terms.real.push(Weighted {
                            prompt,
                            response: y.clone(),
                            weight: qx * pd,
                        });
                    }
                }
                ObjectiveSpec::Space { mu } => {
                    for (y, pd) in support.iter().zip(&p_data) {
                        terms.real.push(Weighted {
                            prompt,
                            response: y.clone(),
                            weight: qx * pd,
                        });
                    }
                    for (y, ps) in support.iter().zip(&p_synth) {
                        terms.synth.push(Weighted {
                            prompt,
                            response: y.clone(),
                            weight: mu * qx * ps,
                        });
                    }
                }
                _ => match synth {
                    ExactSynth::Opponent => {
                        for (y, pd) in support.iter().zip(&p_data) {
                            for (y2, ps) in support.iter().zip(&p_synth) {
                                terms.pairs.push(WeightedPair {
                                    prompt,
                                    real: y.clone(),
                                    synth: y2.clone(),
                                    weight: qx * pd * ps,
                                });
                            }
                        }
                    }
                    ExactSynth::CopyReal => {
                        for (y, pd) in support.iter().zip(&p_data) {
                            terms.pairs.push(WeightedPair {
                                prompt,
                                real: y.clone(),
                                synth: y.clone(),
                                weight: qx * pd,
                            });
                        }
                    }
                },
            }
        }
        Ok(terms)
    }

    fn check_against(&self, model: &AutoregressiveTable) -> Result<()> {
        let check =
            |x: Prompt, y: &Response| model.check_prompt(x).and_then(|_| model.check_response(y));
        for t in self.real.iter().chain(&self.synth) {
            check(t.prompt, &t.response)?;
        }
        for p in &self.pairs {
            check(p.prompt, &p.real)?;
            check(p.prompt, &p.synth)?;
        }
        Ok(())
    }
}

/// Evaluate `spec` over `terms`; the gradient is computed when `with_grad`.
pub fn evaluate_terms(
    spec: &ObjectiveSpec,
    terms: &WeightedTerms,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    with_grad: bool,
) -> Result<(f64, Option<GradientTable>)> {
    spec.validate()?;
    main.check_same_shape(opponent)?;
    terms.check_against(main)?;

    let mut grad = with_grad.then(|| GradientTable::zeros_like(main));
    let mut push = |x: Prompt, y: &Response, coeff: f64| {
        if let Some(g) = grad.as_mut() {
            main.accumulate_log_prob_grad(x, y, coeff, &mut g.values);
        }
    };
    let reward = |x: Prompt, y: &Response| {
        let lp = main.log_prob_unchecked(x, y);
        (lp, lp - opponent.log_prob_unchecked(x, y))
    };
    let length = main.length() as f64;
    let mut value = 0.0;

    match *spec {
        ObjectiveSpec::Sft => {
            for t in &terms.real {
                let lp = main.log_prob_unchecked(t.prompt, &t.response);
                value += t.weight * -lp;
                push(t.prompt, &t.response, -t.weight);
            }
        }
        ObjectiveSpec::Space { mu } => {
            let ln_mu = mu.ln();
            for t in &terms.real {
                let (_, r) = reward(t.prompt, &t.response);
                value += t.weight * -log_sigma_mu_unchecked(mu, r);
                // d/dr [-ln sigma_mu(r)] = -(1 - sigma_mu(r))
                push(t.prompt, &t.response, -t.weight * sigmoid(ln_mu - r));
            }
            for t in &terms.synth {
                let (_, r) = reward(t.prompt, &t.response);
                value += t.weight * -log_sigma_mu_unchecked(1.0 / mu, -r);
                push(t.prompt, &t.response, t.weight * sigmoid(r - ln_mu));
            }
        }
        ObjectiveSpec::Spin { lambda, spin_form } => {
            for p in &terms.pairs {
                let (_, r_real) = reward(p.prompt, &p.real);
                let (_, r_synth) = reward(p.prompt, &p.synth);
                match spin_form {
                    SpinForm::LossOfMargin => {
                        let margin = r_real - r_synth;
                        value += p.weight * softplus(-lambda * margin);
                        let d = -lambda * sigmoid(-lambda * margin);
                        push(p.prompt, &p.real, p.weight * d);
                        push(p.prompt, &p.synth, -p.weight * d);
                    }
                    SpinForm::DifferenceOfLosses => {
                        value +=
                            p.weight * (softplus(-lambda * r_real) - softplus(-lambda * r_synth));
                        push(
                            p.prompt,
                            &p.real,
                            -p.weight * lambda * sigmoid(-lambda * r_real),
                        );
                        push(
                            p.prompt,
                            &p.synth,
                            p.weight * lambda * sigmoid(-lambda * r_synth),
                        );
                    }
                }
            }
        }
        ObjectiveSpec::Sipo { tau } => {
            let target_margin = 1.0 / (2.0 * tau);
            for p in &terms.pairs {
                let (_, r_real) = reward(p.prompt, &p.real);
                let (_, r_synth) = reward(p.prompt, &p.synth);
                let resid = r_real - r_synth - target_margin;
                value += p.weight * resid * resid;
                push(p.prompt, &p.real, 2.0 * p.weight * resid);
                push(p.prompt, &p.synth, -2.0 * p.weight * resid);
            }
        }
        ObjectiveSpec::Ssimpo { beta, gamma } => {
            let scale = beta / length;
            for p in &terms.pairs {
                let lp_real = main.log_prob_unchecked(p.prompt, &p.real);
                let lp_synth = main.log_prob_unchecked(p.prompt, &p.synth);
                let z = scale * lp_real - scale * lp_synth - gamma;
                value += p.weight * -log_sigmoid(z);
                let d = -sigmoid(-z);
                push(p.prompt, &p.real, p.weight * d * scale);
                push(p.prompt, &p.synth, -p.weight * d * scale);
            }
        }
    }
    Ok((value, grad))
}

pub fn sft_loss(batch: &LabeledBatch, main: &AutoregressiveTable) -> Result<f64> {
    let spec = ObjectiveSpec::Sft;
    let terms = WeightedTerms::from_batch(&spec, batch)?;
    Ok(evaluate_terms(&spec, &terms, main, main, false)?.0)
}

pub fn spin_loss(
    batch: &LabeledBatch,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    lambda: f64,
    form: SpinForm,
) -> Result<f64> {
    let spec = ObjectiveSpec::spin(lambda, form);
    let terms = WeightedTerms::from_batch(&spec, batch)?;
    Ok(evaluate_terms(&spec, &terms, main, opponent, false)?.0)
}

pub fn sipo_loss(
    batch: &LabeledBatch,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    tau: f64,
) -> Result<f64> {
    let spec = ObjectiveSpec::sipo(tau);
    let terms = WeightedTerms::from_batch(&spec, batch)?;
    Ok(evaluate_terms(&spec, &terms, main, opponent, false)?.0)
}

pub fn ssimpo_loss(
    batch: &LabeledBatch,
    main: &AutoregressiveTable,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    let spec = ObjectiveSpec::ssimpo(beta, gamma);
    let terms = WeightedTerms::from_batch(&spec, batch)?;
    Ok(evaluate_terms(&spec, &terms, main, main, false)?.0)
}

/// Monte-Carlo SPACE loss on a labeled batch.
pub fn space_loss(
    batch: &LabeledBatch,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    mu: f64,
) -> Result<f64> {
    let spec = ObjectiveSpec::space(mu);
    let terms = WeightedTerms::from_batch(&spec, batch)?;
    Ok(evaluate_terms(&spec, &terms, main, opponent, false)?.0)
}

/// SPACE loss written with the standard log-sigmoid and a shifted argument:
/// `ln sigma_mu(x) = ln sigma(x - ln mu)`.
pub fn space_loss_shifted_logsigmoid(
    batch: &LabeledBatch,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    mu: f64,
) -> Result<f64> {
    ObjectiveSpec::space(mu).validate()?;
    main.check_same_shape(opponent)?;
    let (n, m) = (batch.real_items.len(), batch.synth_items.len());
    if n == 0 || m == 0 {
        return Err(contract(
            "SPACE needs nonempty annotated and synthetic lists",
        ));
    }
    let ln_mu = mu.ln();
    let mut real = 0.0;
    for it in &batch.real_items {
        let r =
            main.log_prob(it.prompt, &it.response)? - opponent.log_prob(it.prompt, &it.response)?;
        real += log_sigmoid(r - ln_mu);
    }
    let mut synth = 0.0;
    for it in &batch.synth_items {
        let r_opp =
            opponent.log_prob(it.prompt, &it.response)? - main.log_prob(it.prompt, &it.response)?;
        synth += log_sigmoid(r_opp + ln_mu);
    }
    Ok(-real / n as f64 - mu * synth / m as f64)
}

/// Where a SPACE gradient is taken: a sampled batch, or the exact
/// expectation under a task.
#[derive(Clone, Copy, Debug)]
pub enum GradSource<'a> {
    Batch(&'a LabeledBatch),
    Exact(&'a TaskSpec),
}

/// Per-response coefficients on `grad log p_theta(u|x)` of the exact SPACE
/// gradient: `-q(x) sigma_{1/mu}(-r(x,u)) (p_data(u|x) - p_theta(u|x))`.
/// Indexed `[prompt][support position]`.
pub fn space_exact_coefficients(
    task: &TaskSpec,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    mu: f64,
) -> Result<Vec<Vec<f64>>> {
    ObjectiveSpec::space(mu).validate()?;
    task.target.check_same_shape(main)?;
    main.check_same_shape(opponent)?;
    let support = enumerate_support_capped(task.vocab(), task.length(), DEFAULT_SUPPORT_CAP)?;
    let ln_mu = mu.ln();
    Ok(task
        .prompt_dist
        .weights()
        .iter()
        .enumerate()
        .map(|(x, &qx)| {
            support
                .iter()
                .map(|u| {
                    let lp = main.log_prob_unchecked(Prompt(x), u);
                    let r = lp - opponent.log_prob_unchecked(Prompt(x), u);
                    let p_data = task.target.log_prob_unchecked(Prompt(x), u).exp();
                    // sigma_{1/mu}(-r) = 1 / (1 + e^{r} / mu)
                    -qx * sigmoid(ln_mu - r) * (p_data - lp.exp())
                })
                .collect()
        })
        .collect())
}

/// Gradient of the SPACE loss with respect to the main model's logits.
pub fn space_grad(
    source: GradSource<'_>,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    mu: f64,
) -> Result<GradientTable> {
    let spec = ObjectiveSpec::space(mu);
    match source {
        GradSource::Batch(batch) => {
            let terms = WeightedTerms::from_batch(&spec, batch)?;
            Ok(evaluate_terms(&spec, &terms, main, opponent, true)?
                .1
                .expect("gradient requested"))
        }
        GradSource::Exact(task) => {
            let coeffs = space_exact_coefficients(task, main, opponent, mu)?;
            let support =
                enumerate_support_capped(task.vocab(), task.length(), DEFAULT_SUPPORT_CAP)?;
            let mut grad = GradientTable::zeros_like(main);
            for (x, row) in coeffs.iter().enumerate() {
                for (u, &c) in support.iter().zip(row) {
                    main.accumulate_log_prob_grad(Prompt(x), u, c, &mut grad.values);
                }
            }
            Ok(grad)
        }
    }
}

/// Loss value and gradient for any objective on a sampled batch.
/// SFT and S-SimPO ignore `opponent`.
pub fn loss_and_grad(
    spec: &ObjectiveSpec,
    batch: &LabeledBatch,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
) -> Result<(f64, GradientTable)> {
    let terms = WeightedTerms::from_batch(spec, batch)?;
    let (value, grad) = evaluate_terms(spec, &terms, main, opponent, true)?;
    Ok((value, grad.expect("gradient requested")))
}

/// Exact expected loss and gradient. SPACE with opponent-sampled synthetic
/// responses takes its gradient from the closed-form per-response
/// coefficients; everything else goes through the enumerated terms.
pub fn exact_loss_and_grad(
    spec: &ObjectiveSpec,
    task: &TaskSpec,
    main: &AutoregressiveTable,
    opponent: &AutoregressiveTable,
    synth: ExactSynth,
) -> Result<(f64, GradientTable)> {
    let terms = WeightedTerms::exact(spec, task, opponent, synth)?;
    match (spec, synth) {
        (ObjectiveSpec::Space { mu }, ExactSynth::Opponent) => {
            let (value, _) = evaluate_terms(spec, &terms, main, opponent, false)?;
            Ok((
                value,
                space_grad(GradSource::Exact(task), main, opponent, *mu)?,
            ))
        }
        _ => {
            let (value, grad) = evaluate_terms(spec, &terms, main, opponent, true)?;
            Ok((value, grad.expect("gradient requested")))
        }
    }
}
