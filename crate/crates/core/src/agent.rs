//! Attention actor-critic.
//!
//! The incident category is embedded and projected into a query; every
//! feasible facility's feature row is embedded and projected into a key.
//! Scaled dot products between query and keys are the policy logits. The
//! softmax of those logits weights the keys into a context vector, and a
//! one-hidden-layer head maps the context to the state value.
//!
//! Gradients are written out by hand; `backward` returns them in a
//! [`PolicyParams`] of the same shape.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::DispatchState;
use crate::error::{Error, Result};
use crate::geo::Category;

pub const DEFAULT_EMBED_DIM: usize = 64;
/// Logit reported for masked-out facilities.
pub const MASKED_LOGIT: f64 = f64::MIN;
pub const FEATURE_DIM: usize = 3;

pub const CHECKPOINT_FORMAT: &str = "dispatch-attention-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Every learnable tensor, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub d: usize,
    /// 4 × d; row `c` embeds category `c`.
    pub category_embed: Vec<f64>,
    /// 3 × d; `h = f · facility_embed + facility_bias`.
    pub facility_embed: Vec<f64>,
    pub facility_bias: Vec<f64>,
    /// d × d; `q = query_proj · e`.
    pub query_proj: Vec<f64>,
    /// d × d; `k = key_proj · h`.
    pub key_proj: Vec<f64>,
    /// d × d hidden layer of the critic head.
    pub critic_hidden: Vec<f64>,
    pub critic_hidden_bias: Vec<f64>,
    pub critic_out: Vec<f64>,
    /// Length 1.
    pub critic_out_bias: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 9] = [
    "category_embed",
    "facility_embed",
    "facility_bias",
    "query_proj",
    "key_proj",
    "critic_hidden",
    "critic_hidden_bias",
    "critic_out",
    "critic_out_bias",
];

impl PolicyParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            category_embed: vec![0.0; Category::COUNT * d],
            facility_embed: vec![0.0; FEATURE_DIM * d],
            facility_bias: vec![0.0; d],
            query_proj: vec![0.0; d * d],
            key_proj: vec![0.0; d * d],
            critic_hidden: vec![0.0; d * d],
            critic_hidden_bias: vec![0.0; d],
            critic_out: vec![0.0; d],
            critic_out_bias: vec![0.0; 1],
        }
    }

    /// Uniform in ±1/√fan_in per block, seeded.
    pub fn init(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(d);
        let fan_in = [Category::COUNT, FEATURE_DIM, FEATURE_DIM, d, d, d, d, d, d];
        for ((_, block), fan) in p.blocks_mut().into_iter().zip(fan_in) {
            let bound = 1.0 / (fan as f64).sqrt();
            block
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-bound..bound));
        }
        p
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 9] {
        [
            (BLOCK_NAMES[0], &self.category_embed),
            (BLOCK_NAMES[1], &self.facility_embed),
            (BLOCK_NAMES[2], &self.facility_bias),
            (BLOCK_NAMES[3], &self.query_proj),
            (BLOCK_NAMES[4], &self.key_proj),
            (BLOCK_NAMES[5], &self.critic_hidden),
            (BLOCK_NAMES[6], &self.critic_hidden_bias),
            (BLOCK_NAMES[7], &self.critic_out),
            (BLOCK_NAMES[8], &self.critic_out_bias),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 9] {
        [
            (BLOCK_NAMES[0], &mut self.category_embed),
            (BLOCK_NAMES[1], &mut self.facility_embed),
            (BLOCK_NAMES[2], &mut self.facility_bias),
            (BLOCK_NAMES[3], &mut self.query_proj),
            (BLOCK_NAMES[4], &mut self.key_proj),
            (BLOCK_NAMES[5], &mut self.critic_hidden),
            (BLOCK_NAMES[6], &mut self.critic_hidden_bias),
            (BLOCK_NAMES[7], &mut self.critic_out),
            (BLOCK_NAMES[8], &mut self.critic_out_bias),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, block) in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// `self += scale * other`, block by block.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += scale * b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, block) in self.blocks_mut() {
            block.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self
            .blocks()
            .iter()
            .find(|(_, b)| b.iter().any(|x| !x.is_finite()))
        {
            Some((name, _)) => Err(Error::NonFiniteGradient(name)),
            None => Ok(()),
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.d;
        let expected = [
            Category::COUNT * d,
            FEATURE_DIM * d,
            d,
            d * d,
            d * d,
            d * d,
            d,
            d,
            1,
        ];
        for ((name, block), want) in self.blocks().iter().zip(expected) {
            if block.len() != want {
                return Err(Error::Shape(format!(
                    "{name} has {} entries, expected {want}",
                    block.len()
                )));
            }
        }
        if d == 0 {
            return Err(Error::Shape("embedding width must be positive".into()));
        }
        Ok(())
    }
}

/// Policy and value for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Masked entries hold [`MASKED_LOGIT`].
    pub logits: Vec<f64>,
    /// Masked entries hold negative infinity.
    pub log_probs: Vec<f64>,
    /// Masked entries are exactly zero.
    pub probs: Vec<f64>,
    pub value: f64,
    pub context: Vec<f64>,
    pub entropy: f64,
}

/// Intermediate values kept for the backward pass.
struct Trace {
    feasible: Vec<usize>,
    embed: Vec<f64>,
    query: Vec<f64>,
    hidden_in: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    critic_act: Vec<f64>,
}

fn matvec(m: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|i| {
            m[i * cols..(i + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn forward_trace(p: &PolicyParams, state: &DispatchState) -> Result<(ForwardOutput, Trace)> {
    let d = p.d;
    let n = state.n_facilities();
    let feasible: Vec<usize> = (0..n).filter(|&j| state.mask[j]).collect();
    if feasible.is_empty() {
        return Err(Error::EmptyMask);
    }
    let c = state.category.index();
    let embed = p.category_embed[c * d..(c + 1) * d].to_vec();
    let query = matvec(&p.query_proj, &embed, d);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let mut hidden_in = Vec::with_capacity(feasible.len());
    let mut keys = Vec::with_capacity(feasible.len());
    let mut scores = Vec::with_capacity(feasible.len());
    for &j in &feasible {
        let f = &state.features[j];
        let h: Vec<f64> = (0..d)
            .map(|t| {
                p.facility_bias[t]
                    + (0..FEATURE_DIM)
                        .map(|m| f[m] * p.facility_embed[m * d + t])
                        .sum::<f64>()
            })
            .collect();
        let k = matvec(&p.key_proj, &h, d);
        scores.push(dot(&query, &k) * inv_sqrt_d);
        hidden_in.push(h);
        keys.push(k);
    }

    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let mut logits = vec![MASKED_LOGIT; n];
    let mut log_probs = vec![f64::NEG_INFINITY; n];
    let mut probs = vec![0.0; n];
    let mut entropy = 0.0;
    let mut context = vec![0.0; d];
    for (slot, &j) in feasible.iter().enumerate() {
        logits[j] = scores[slot];
        log_probs[j] = scores[slot] - log_norm;
        probs[j] = log_probs[j].exp();
        entropy -= probs[j] * log_probs[j];
        for t in 0..d {
            context[t] += probs[j] * keys[slot][t];
        }
    }

    let pre: Vec<f64> = matvec(&p.critic_hidden, &context, d)
        .into_iter()
        .zip(&p.critic_hidden_bias)
        .map(|(z, b)| z + b)
        .collect();
    let critic_act: Vec<f64> = pre.iter().map(|z| z.tanh()).collect();
    let value = dot(&p.critic_out, &critic_act) + p.critic_out_bias[0];

    Ok((
        ForwardOutput {
            logits,
            log_probs,
            probs,
            value,
            context,
            entropy,
        },
        Trace {
            feasible,
            embed,
            query,
            hidden_in,
            keys,
            critic_act,
        },
    ))
}

pub fn forward(params: &PolicyParams, state: &DispatchState) -> Result<ForwardOutput> {
    forward_trace(params, state).map(|(out, _)| out)
}

/// Draws from the masked categorical distribution.
pub fn sample_action<R: Rng + ?Sized>(out: &ForwardOutput, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (j, &p) in out.probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(j);
            if u < acc {
                return j;
            }
        }
    }
    last.expect("forward output has at least one feasible action")
}

/// Highest masked-in logit; ties go to the lowest index.
pub fn greedy_action(out: &ForwardOutput) -> usize {
    let mut best: Option<usize> = None;
    for (j, &p) in out.probs.iter().enumerate() {
        if p == 0.0 && out.logits[j] == MASKED_LOGIT {
            continue;
        }
        if best.is_none_or(|b| out.logits[j] > out.logits[b]) {
            best = Some(j);
        }
    }
    best.expect("forward output has at least one feasible action")
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
}

/// What a single sample is trained toward. `advantage` is held constant:
/// no gradient flows from the actor term into the value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTargets {
    pub action: usize,
    pub reward: f64,
    pub advantage: f64,
    pub weights: LossWeights,
}

/// Unweighted loss components plus the weighted total for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// `-A · log π(a|s)`
    pub actor: f64,
    /// `(r - V(s))²`
    pub critic: f64,
    pub entropy: f64,
    pub total: f64,
}

fn breakdown(out: &ForwardOutput, t: &LossTargets) -> LossBreakdown {
    let actor = -t.advantage * out.log_probs[t.action];
    let critic = (t.reward - out.value).powi(2);
    LossBreakdown {
        actor,
        critic,
        entropy: out.entropy,
        total: t.weights.actor * actor + t.weights.critic * critic
            - t.weights.entropy * out.entropy,
    }
}

fn check_action(state: &DispatchState, action: usize) -> Result<()> {
    let n = state.n_facilities();
    if action >= n {
        return Err(Error::ActionOutOfRange { action, n });
    }
    if !state.mask[action] {
        return Err(Error::MaskedAction(action));
    }
    Ok(())
}

/// Loss value without gradients.
pub fn loss(
    params: &PolicyParams,
    state: &DispatchState,
    targets: &LossTargets,
) -> Result<LossBreakdown> {
    check_action(state, targets.action)?;
    Ok(breakdown(&forward(params, state)?, targets))
}

/// Loss and its gradient with respect to every parameter block.
pub fn backward(
    params: &PolicyParams,
    state: &DispatchState,
    targets: &LossTargets,
) -> Result<(LossBreakdown, PolicyParams)> {
    check_action(state, targets.action)?;
    let (out, tr) = forward_trace(params, state)?;
    let d = params.d;
    let w = targets.weights;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut g = PolicyParams::zeros(d);

    // critic head
    let g_value = -2.0 * w.critic * (targets.reward - out.value);
    g.critic_out_bias[0] = g_value;
    let mut g_pre = vec![0.0; d];
    for i in 0..d {
        g.critic_out[i] = g_value * tr.critic_act[i];
        g_pre[i] = g_value * params.critic_out[i] * (1.0 - tr.critic_act[i] * tr.critic_act[i]);
        g.critic_hidden_bias[i] = g_pre[i];
        for t in 0..d {
            g.critic_hidden[i * d + t] = g_pre[i] * out.context[t];
        }
    }
    let mut g_context = vec![0.0; d];
    for i in 0..d {
        for t in 0..d {
            g_context[t] += params.critic_hidden[i * d + t] * g_pre[i];
        }
    }

    // gradients reaching each feasible logit and key
    let probs: Vec<f64> = tr.feasible.iter().map(|&j| out.probs[j]).collect();
    let logps: Vec<f64> = tr.feasible.iter().map(|&j| out.log_probs[j]).collect();
    let g_prob_ctx: Vec<f64> = tr.keys.iter().map(|k| dot(&g_context, k)).collect();
    let mean_ctx: f64 = probs.iter().zip(&g_prob_ctx).map(|(p, g)| p * g).sum();
    let mut g_keys: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| g_context.iter().map(|g| p * g).collect())
        .collect();
    let mut g_query = vec![0.0; d];
    for (slot, &j) in tr.feasible.iter().enumerate() {
        let p = probs[slot];
        let chosen = if j == targets.action { 1.0 } else { 0.0 };
        let g_score = -w.actor * targets.advantage * (chosen - p)
            + w.entropy * p * (logps[slot] + out.entropy)
            + p * (g_prob_ctx[slot] - mean_ctx);
        let s = g_score * inv_sqrt_d;
        for t in 0..d {
            g_query[t] += s * tr.keys[slot][t];
            g_keys[slot][t] += s * tr.query[t];
        }
    }

    // keys -> key projection -> facility embedding
    for (slot, &j) in tr.feasible.iter().enumerate() {
        let h = &tr.hidden_in[slot];
        let gk = &g_keys[slot];
        let mut g_h = vec![0.0; d];
        for i in 0..d {
            let row = &params.key_proj[i * d..(i + 1) * d];
            let g_row = &mut g.key_proj[i * d..(i + 1) * d];
            for t in 0..d {
                g_row[t] += gk[i] * h[t];
                g_h[t] += row[t] * gk[i];
            }
        }
        let f = &state.features[j];
        for t in 0..d {
            g.facility_bias[t] += g_h[t];
            for m in 0..FEATURE_DIM {
                g.facility_embed[m * d + t] += f[m] * g_h[t];
            }
        }
    }

    // query -> query projection -> category embedding
    let c = state.category.index();
    for i in 0..d {
        for t in 0..d {
            g.query_proj[i * d + t] = g_query[i] * tr.embed[t];
            g.category_embed[c * d + t] += params.query_proj[i * d + t] * g_query[i];
        }
    }

    g.check_finite()?;
    Ok((breakdown(&out, targets), g))
}

/// On-disk model: versioned JSON with every block row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(params: PolicyParams, config_hash: impl Into<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            params,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format `{}`",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        ck.params.check_shapes()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
