//! Advantage actor-critic training.
//!
//! Every episode is a single dispatch, so generalized advantage estimation
//! collapses to `r - V(s)`; the general estimator is still what computes it.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    backward, forward, sample_action, LossTargets, LossWeights, PolicyParams, DEFAULT_EMBED_DIM,
};
use crate::atlas::TravelTimeAtlas;
use crate::env::{step, EnvConfig, Episode};
use crate::error::{Error, Result};
use crate::par;
use crate::scenario::Incident;

pub const ROLLING_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub critic_weight: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub optimizer: Optimizer,
    /// Stop once the full-window rolling mean reward reaches this value.
    pub stop_at_reward: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3500,
            batch_size: 32,
            learning_rate: 1e-4,
            entropy_coef: 0.01,
            critic_weight: 1.0,
            gae_lambda: 0.95,
            gamma: 0.99,
            seed: 0,
            embed_dim: DEFAULT_EMBED_DIM,
            optimizer: Optimizer::Sgd,
            stop_at_reward: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("critic_weight", self.critic_weight),
            ("gae_lambda", self.gae_lambda),
            ("gamma", self.gamma),
            ("embed_dim", self.embed_dim as f64),
        ];
        for (what, value) in positive {
            if !(value > 0.0) {
                return Err(Error::NonPositive { what, value });
            }
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::Config(format!(
                "entropy_coef must be >= 0, got {}",
                self.entropy_coef
            )));
        }
        Ok(())
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            actor: 1.0,
            critic: self.critic_weight,
            entropy: self.entropy_coef,
        }
    }
}

/// Generalized advantage estimates for one trajectory. `values` has one
/// more entry than `rewards` (the bootstrap value after the last step);
/// `dones[t]` cuts the bootstrap after step `t`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    adv
}

/// Advantage of a terminal single-step episode. Equal to `reward - value`
/// for every `gamma` and `gae_lambda`.
pub fn advantage(reward: f64, value: f64, cfg: &TrainConfig) -> f64 {
    gae(&[reward], &[value, 0.0], &[true], cfg.gamma, cfg.gae_lambda)[0]
}

/// One transition fed to [`a2c_update`].
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub id: &'a str,
    pub episode: &'a Episode,
    pub action: usize,
    pub reward: f64,
}

/// Batch means of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub total: f64,
}

/// First and second moment state for the adaptive optimizer.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    first: PolicyParams,
    second: PolicyParams,
    steps: u64,
}

impl OptimizerState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: Optimizer, d: usize) -> Self {
        Self {
            kind,
            first: PolicyParams::zeros(d),
            second: PolicyParams::zeros(d),
            steps: 0,
        }
    }

    pub fn apply(&mut self, params: &mut PolicyParams, grad: &PolicyParams, lr: f64) {
        self.steps += 1;
        match self.kind {
            Optimizer::Sgd => params.add_scaled(grad, -lr),
            Optimizer::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - Self::BETA1.powi(t);
                let c2 = 1.0 - Self::BETA2.powi(t);
                let blocks = params.blocks_mut().into_iter().zip(grad.blocks()).zip(
                    self.first
                        .blocks_mut()
                        .into_iter()
                        .zip(self.second.blocks_mut()),
                );
                for (((_, p), (_, g)), ((_, m), (_, v))) in blocks {
                    for i in 0..p.len() {
                        m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                        v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                    }
                }
            }
        }
    }
}

/// Mean loss over the batch and its gradient, without touching parameters.
pub fn batch_gradient(
    params: &PolicyParams,
    batch: &[Transition<'_>],
    cfg: &TrainConfig,
) -> Result<(LossComponents, PolicyParams)> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let weights = cfg.weights();
    let per_sample = par::map(batch, |tr| {
        let out = forward(params, &tr.episode.state)?;
        let targets = LossTargets {
            action: tr.action,
            reward: tr.reward,
            advantage: advantage(tr.reward, out.value, cfg),
            weights,
        };
        let (loss, grad) = backward(params, &tr.episode.state, &targets)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss(tr.id.to_string()));
        }
        Ok((loss, grad))
    });

    let scale = 1.0 / batch.len() as f64;
    let mut grad = PolicyParams::zeros(params.d);
    let mut comps = LossComponents::default();
    for result in per_sample {
        let (loss, g) = result?;
        grad.add_scaled(&g, scale);
        comps.actor += loss.actor * scale;
        comps.critic += loss.critic * scale;
        comps.entropy += loss.entropy * scale;
        comps.total += loss.total * scale;
    }
    grad.check_finite()?;
    Ok((comps, grad))
}

/// One A2C step: mean of `-A log π(a|s) + c_v (r - V)² - c_e H(π)` over the
/// batch, then an optimizer update.
pub fn a2c_update(
    params: &mut PolicyParams,
    optimizer: &mut OptimizerState,
    batch: &[Transition<'_>],
    cfg: &TrainConfig,
) -> Result<LossComponents> {
    let (comps, grad) = batch_gradient(params, batch, cfg)?;
    optimizer.apply(params, &grad, cfg.learning_rate);
    Ok(comps)
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurve {
    pub mean_reward: Vec<f64>,
    pub actor_loss: Vec<f64>,
    pub critic_loss: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Trailing mean over up to [`ROLLING_WINDOW`] epochs.
    pub rolling_mean_reward: Vec<f64>,
}

impl TrainingCurve {
    pub fn len(&self) -> usize {
        self.mean_reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_reward.is_empty()
    }

    fn push(&mut self, reward: f64, loss: LossComponents) {
        self.mean_reward.push(reward);
        self.actor_loss.push(loss.actor);
        self.critic_loss.push(loss.critic);
        self.entropy.push(loss.entropy);
        let start = self.mean_reward.len().saturating_sub(ROLLING_WINDOW);
        let window = &self.mean_reward[start..];
        self.rolling_mean_reward
            .push(window.iter().sum::<f64>() / window.len() as f64);
    }

    /// First epoch (0-based) whose full-window rolling mean reaches `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<usize> {
        (ROLLING_WINDOW - 1..self.len()).find(|&e| self.rolling_mean_reward[e] >= target)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_reward,actor_loss,critic_loss,entropy\n");
        for e in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e + 1,
                self.mean_reward[e],
                self.actor_loss[e],
                self.critic_loss[e],
                self.entropy[e]
            );
        }
        out
    }
}

/// A solvable incident ready for training.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub episode: Episode,
}

/// Builds episodes for every solvable incident; unsolvable ones are dropped.
pub fn training_examples(
    incidents: &[Incident],
    atlas: &TravelTimeAtlas,
    env: &EnvConfig,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for inc in incidents {
        let episode = Episode::for_incident(inc, atlas, &env.norms)?;
        if episode.state.is_solvable() {
            out.push(TrainingExample {
                id: inc.id.clone(),
                episode,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curve: TrainingCurve,
}

/// Trains from freshly initialized parameters.
pub fn train(
    examples: &[TrainingExample],
    env: &EnvConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = PolicyParams::init(cfg.embed_dim, cfg.seed);
    train_from(init, examples, env, cfg)
}

/// One epoch is a seeded shuffle of all examples split into batches.
pub fn train_from(
    mut params: PolicyParams,
    examples: &[TrainingExample],
    env: &EnvConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_shapes()?;
    let mut curve = TrainingCurve::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, curve });
    }
    if examples.is_empty() {
        return Err(Error::NoSolvableIncidents);
    }
    // sampling stream is separate from the initialization stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a2c0_0000_0001);
    let mut optimizer = OptimizerState::new(cfg.optimizer, params.d);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut reward_sum = 0.0;
        let mut epoch_loss = LossComponents::default();
        for chunk in order.chunks(cfg.batch_size) {
            let outputs = par::map(chunk, |&i| forward(&params, &examples[i].episode.state));
            let mut batch = Vec::with_capacity(chunk.len());
            for (&i, out) in chunk.iter().zip(outputs) {
                let out = out?;
                let ex = &examples[i];
                let action = sample_action(&out, &mut rng);
                let outcome = step(&ex.episode, action, &env.reward)?;
                reward_sum += outcome.reward;
                batch.push(Transition {
                    id: &ex.id,
                    episode: &ex.episode,
                    action,
                    reward: outcome.reward,
                });
            }
            let comps = a2c_update(&mut params, &mut optimizer, &batch, cfg)?;
            let w = chunk.len() as f64 / examples.len() as f64;
            epoch_loss.actor += comps.actor * w;
            epoch_loss.critic += comps.critic * w;
            epoch_loss.entropy += comps.entropy * w;
            epoch_loss.total += comps.total * w;
        }
        curve.push(reward_sum / examples.len() as f64, epoch_loss);
        if let Some(target) = cfg.stop_at_reward {
            if curve.len() >= ROLLING_WINDOW && curve.rolling_mean_reward[curve.len() - 1] >= target
            {
                break;
            }
        }
    }
    Ok(TrainOutcome { params, curve })
}
