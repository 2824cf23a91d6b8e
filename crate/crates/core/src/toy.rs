//! Tiny analytically solvable environments for exercising the optimizer:
//! a constrained bandit, a two-state chain with a closed-form value
//! function, and a one-dimensional reach task.

use crate::env::{RolloutEnv, Transition};
use crate::rng::{self, Rng};
use rand::Rng as _;

/// Continuing two-armed bandit. The action's sign picks an arm each step:
/// positive takes the high-reward arm and incurs one unit of constraint
/// cost, non-positive takes the safe arm for half the reward at zero cost.
/// The stream never ends, so the discounted cost return is p/(1 - gamma)
/// for arm-A probability p; a tight threshold forces p near zero while an
/// unconstrained maximizer drives it to one.
pub struct ConstrainedBandit {
    pub pulls: u64,
    pub violations: u64,
}

impl ConstrainedBandit {
    pub fn new() -> Self {
        ConstrainedBandit { pulls: 0, violations: 0 }
    }

    pub fn violation_rate(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.violations as f64 / self.pulls as f64
        }
    }
}

impl Default for ConstrainedBandit {
    fn default() -> Self {
        Self::new()
    }
}

impl RolloutEnv for ConstrainedBandit {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn cost_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, obs: &mut [f64]) {
        obs[0] = 1.0;
    }

    fn step(&mut self, action: &[f64], obs: &mut [f64], costs: &mut [f64]) -> Transition {
        obs[0] = 1.0;
        self.pulls += 1;
        let reward = if action[0] > 0.0 {
            self.violations += 1;
            costs[0] = 1.0;
            1.0
        } else {
            costs[0] = 0.0;
            0.5
        };
        Transition { reward, ..Transition::default() }
    }
}

/// Deterministic two-state alternator. Leaving state 0 pays one unit,
/// leaving state 1 pays nothing, and the episode never ends, so the
/// discounted values are V(0) = 1/(1 - g^2) and V(1) = g/(1 - g^2).
pub struct TwoStateChain {
    pub state: usize,
}

impl TwoStateChain {
    pub fn new() -> Self {
        TwoStateChain { state: 0 }
    }

    /// Closed-form state values under discount `gamma`.
    pub fn values(gamma: f64) -> [f64; 2] {
        let denom = 1.0 - gamma * gamma;
        [1.0 / denom, gamma / denom]
    }

    fn write_obs(&self, obs: &mut [f64]) {
        obs[0] = if self.state == 0 { 1.0 } else { 0.0 };
        obs[1] = if self.state == 1 { 1.0 } else { 0.0 };
    }
}

impl Default for TwoStateChain {
    fn default() -> Self {
        Self::new()
    }
}

impl RolloutEnv for TwoStateChain {
    fn obs_dim(&self) -> usize {
        2
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, obs: &mut [f64]) {
        self.state = 0;
        self.write_obs(obs);
    }

    fn step(&mut self, _action: &[f64], obs: &mut [f64], _costs: &mut [f64]) -> Transition {
        let reward = if self.state == 0 { 1.0 } else { 0.0 };
        self.state = 1 - self.state;
        self.write_obs(obs);
        Transition { reward, ..Transition::default() }
    }
}

/// Double-integrator reach task: drive a point mass to the origin with a
/// bounded force. Quadratic state and effort penalty, fixed-length episodes.
pub struct ReachEnv {
    pub x: f64,
    pub v: f64,
    steps: usize,
    rng: Rng,
}

pub const REACH_DT: f64 = 0.1;
pub const REACH_HORIZON: usize = 50;
pub const REACH_FORCE_MAX: f64 = 2.0;

impl ReachEnv {
    pub fn new(seed: u64) -> Self {
        ReachEnv { x: 0.0, v: 0.0, steps: 0, rng: rng::stream(seed, 0x7ea) }
    }

    /// A decent hand-tuned controller, used as a stand-in expert.
    pub fn pd_expert(x: f64, v: f64) -> f64 {
        (-1.2 * x - 1.8 * v).clamp(-REACH_FORCE_MAX, REACH_FORCE_MAX)
    }

    pub fn state(&self) -> (f64, f64) {
        (self.x, self.v)
    }
}

impl RolloutEnv for ReachEnv {
    fn obs_dim(&self) -> usize {
        2
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, obs: &mut [f64]) {
        self.x = self.rng.gen_range(-1.0..=1.0);
        self.v = 0.0;
        self.steps = 0;
        obs[0] = self.x;
        obs[1] = self.v;
    }

    fn step(&mut self, action: &[f64], obs: &mut [f64], _costs: &mut [f64]) -> Transition {
        let a = action[0].clamp(-REACH_FORCE_MAX, REACH_FORCE_MAX);
        self.v += a * REACH_DT;
        self.x += self.v * REACH_DT;
        self.steps += 1;
        obs[0] = self.x;
        obs[1] = self.v;
        let reward = -self.x * self.x - 0.01 * a * a;
        let done = self.steps >= REACH_HORIZON;
        Transition { reward, done, timeout: done, ..Transition::default() }
    }
}
