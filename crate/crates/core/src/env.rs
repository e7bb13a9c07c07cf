//! Single-step dispatch environment: state construction, action masking
//! and the linear precision reward.

use serde::{Deserialize, Serialize};

use crate::atlas::{best_in_row, BestChoice, Minutes, TravelTimeAtlas};
use crate::error::{Error, Result};
use crate::geo::{Category, Facility};
use crate::scenario::Incident;

pub const DEFAULT_T_MAX: Minutes = 120.0;
pub const DEFAULT_D_MAX: Minutes = 60.0;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const REWARD_MAX: f64 = 1.0;

/// Feature row given to infeasible facilities: slowest, unreachable, worst delta.
pub const FILLER_ROW: [f64; 3] = [1.0, 0.0, 1.0];

/// Fixed normalization horizons, shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub t_max: Minutes,
    pub d_max: Minutes,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T_MAX,
            d_max: DEFAULT_D_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Reward lost per minute of delay against the best feasible facility.
    pub alpha: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Environment constants shared by training, evaluation and dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvConfig {
    pub norms: Normalization,
    pub reward: RewardParams,
}

/// Observation for one incident: category one-hot, one
/// `[tau_norm, reach_flag, delta_norm]` row per facility, and the mask of
/// facilities that match the category and are reachable.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchState {
    pub category: Category,
    pub category_onehot: [f64; Category::COUNT],
    pub features: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

impl DispatchState {
    pub fn n_facilities(&self) -> usize {
        self.features.len()
    }

    pub fn n_feasible(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_solvable(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    /// The flat state vector: one-hot followed by every facility row.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.category_onehot.to_vec();
        v.extend(self.features.iter().flatten());
        v
    }
}

pub fn onehot(category: Category) -> [f64; Category::COUNT] {
    let mut v = [0.0; Category::COUNT];
    v[category.index()] = 1.0;
    v
}

/// Builds the state from one atlas row. An unsolvable incident yields an
/// all-false mask rather than an error.
pub fn build_state(
    category: Category,
    row: &[Option<Minutes>],
    facilities: &[Facility],
    norms: &Normalization,
) -> DispatchState {
    let t_star = best_in_row(row, facilities, category).map(|b| b.t_star);
    let mut features = Vec::with_capacity(row.len());
    let mut mask = Vec::with_capacity(row.len());
    for (t, f) in row.iter().zip(facilities) {
        match (t, t_star) {
            (Some(t), Some(best)) if f.category == category => {
                features.push([
                    (t / norms.t_max).min(1.0),
                    1.0,
                    ((t - best) / norms.d_max).min(1.0),
                ]);
                mask.push(true);
            }
            _ => {
                features.push(FILLER_ROW);
                mask.push(false);
            }
        }
    }
    DispatchState {
        category,
        category_onehot: onehot(category),
        features,
        mask,
    }
}

/// Reward for dispatching a facility `t_chosen` minutes away when the best
/// feasible one is `t_star` minutes away. Not clamped below zero.
pub fn reward(t_chosen: Minutes, t_star: Minutes, params: &RewardParams) -> Result<f64> {
    if t_chosen < t_star {
        return Err(Error::InconsistentTimes {
            chosen: t_chosen,
            best: t_star,
        });
    }
    Ok(REWARD_MAX - params.alpha * (t_chosen - t_star))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub chosen_time: Minutes,
    pub t_star: Minutes,
    pub optimal: bool,
}

impl StepOutcome {
    pub fn delta(&self) -> Minutes {
        self.chosen_time - self.t_star
    }
}

/// One incident paired with its atlas row: everything `step` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub state: DispatchState,
    pub times: Vec<Option<Minutes>>,
    pub best: Option<BestChoice>,
}

impl Episode {
    pub fn new(
        category: Category,
        row: &[Option<Minutes>],
        facilities: &[Facility],
        norms: &Normalization,
    ) -> Self {
        Self {
            state: build_state(category, row, facilities, norms),
            times: row.to_vec(),
            best: best_in_row(row, facilities, category),
        }
    }

    pub fn for_incident(
        incident: &Incident,
        atlas: &TravelTimeAtlas,
        norms: &Normalization,
    ) -> Result<Self> {
        let i = atlas
            .row_index(incident.node)
            .ok_or_else(|| Error::UnknownNode(incident.node.to_string()))?;
        Ok(Self::new(
            incident.category,
            atlas.row(i),
            atlas.facilities(),
            norms,
        ))
    }
}

/// Applies `action` and terminates the episode.
pub fn step(episode: &Episode, action: usize, params: &RewardParams) -> Result<StepOutcome> {
    let n = episode.state.n_facilities();
    if action >= n {
        return Err(Error::ActionOutOfRange { action, n });
    }
    if !episode.state.mask[action] {
        return Err(Error::MaskedAction(action));
    }
    let best = episode.best.ok_or(Error::EmptyMask)?;
    let chosen_time = episode.times[action].ok_or(Error::MaskedAction(action))?;
    Ok(StepOutcome {
        reward: reward(chosen_time, best.t_star, params)?,
        chosen_time,
        t_star: best.t_star,
        optimal: chosen_time == best.t_star,
    })
}
