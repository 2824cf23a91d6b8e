//! Training pipeline: rollout collection, the constrained policy update and
//! teacher/student loops.

pub mod checkpoint;
pub mod distill;
pub mod ppo;
pub mod rollout;

use std::io::{self, Write};
use std::path::Path;

use crate::env::{EnvConfig, LadderEnv};
use crate::nn::policy::{CostCritic, PolicyNet, PolicySpec};
use crate::nn::Arena;
use crate::rng;
use crate::robot::RobotModel;
use checkpoint::{Checkpoint, Role};
use ppo::{ppo_ipo_update, Optimizer, PpoConfig, ThresholdSchedule, UpdateStats};
use rollout::Rollouts;

/// Teacher run parameters. The learning rate decays linearly to zero over
/// the run; constraint thresholds follow [`ThresholdSchedule`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_envs: usize,
    /// Policy steps gathered per environment between updates.
    pub steps_per_batch: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Final constraint bounds for the position, velocity and torque cost
    /// families, in discounted-return units.
    pub final_thresholds: Vec<f64>,
    pub threshold_start_factor: f64,
    pub threshold_anneal_frac: f64,
    pub adaptive_thresholds: bool,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    /// Swap the ball feet for hooks on all four legs.
    pub hook_feet: bool,
    pub seed: u64,
    /// Checkpoint period in iterations; the final iteration always saves.
    pub ckpt_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Sized for a workstation: small fleet, full episode horizon.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            num_envs: 256,
            steps_per_batch: 48,
            epochs: 1500,
            lr: 3e-4,
            final_thresholds: vec![1.0, 1.0, 1.0],
            threshold_start_factor: 4.0,
            threshold_anneal_frac: 0.3,
            adaptive_thresholds: false,
            ppo: PpoConfig::default(),
            env: EnvConfig::default(),
            hook_feet: false,
            seed: 0,
            ckpt_every: 100,
        }
    }

    /// Full-scale run matching the published budget.
    pub fn paper() -> TrainConfig {
        TrainConfig { num_envs: 4096, epochs: 15000, ckpt_every: 500, ..TrainConfig::desk() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.num_envs == 0 || self.steps_per_batch == 0 || self.epochs == 0 {
            return Err("environment count, batch length and epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("learning rate must be positive and finite, got {}", self.lr));
        }
        if self.final_thresholds.len() != 3 {
            return Err(format!(
                "expected one threshold per cost family (3), got {}",
                self.final_thresholds.len()
            ));
        }
        if self.final_thresholds.iter().any(|d| !(*d >= 0.0)) {
            return Err("constraint thresholds must be non-negative".into());
        }
        if self.threshold_start_factor < 1.0 {
            return Err("threshold start factor must be at least 1".into());
        }
        if !(self.threshold_anneal_frac > 0.0 && self.threshold_anneal_frac <= 1.0) {
            return Err("threshold anneal fraction must lie in (0,1]".into());
        }
        if self.ckpt_every == 0 {
            return Err("checkpoint period must be positive".into());
        }
        self.ppo.validate()
    }
}

/// Teacher parameter block: policy and cost critic in one arena, in the
/// fixed construction order checkpoints rely on.
pub fn teacher_arena(seed: u64) -> (Arena, PolicyNet, CostCritic) {
    let mut arena = Arena::new();
    let mut init = rng::root(seed);
    let policy = PolicyNet::new(&mut arena, "teacher", PolicySpec::teacher(), &mut init);
    let critic = CostCritic::new(
        &mut arena,
        "cost",
        PolicySpec::teacher().obs_dim,
        &[128, 128],
        3,
        &mut init,
    );
    (arena, policy, critic)
}

/// One metrics row; serialized as one CSV line per update.
#[derive(Debug, Clone)]
pub struct IterMetrics {
    pub iter: usize,
    /// Undiscounted reward collected in the window, per environment.
    pub window_return: f64,
    pub term_rate: f64,
    pub timeout_rate: f64,
    pub success_rate: f64,
    /// Batch mean discounted cost returns, one per family.
    pub constraint_j: Vec<f64>,
    pub level_mean: f64,
    pub update: UpdateStats,
    pub lr: f64,
}

impl IterMetrics {
    pub const CSV_HEADER: &'static str = "iter,return,term_rate,timeout_rate,success_rate,\
        j_pos,j_vel,j_torque,level_mean,loss,surrogate,value_loss,cost_value_loss,entropy,\
        barrier,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.window_return,
            self.term_rate,
            self.timeout_rate,
            self.success_rate,
            self.constraint_j[0],
            self.constraint_j[1],
            self.constraint_j[2],
            self.level_mean,
            self.update.loss,
            self.update.surrogate,
            self.update.value_loss,
            self.update.cost_value_loss,
            self.update.entropy,
            self.update.barrier,
            self.lr,
        )
    }
}

/// Privileged-policy trainer: a fleet of simulated climbers, the shared
/// parameter arena and the constrained update loop.
pub struct TeacherTrainer {
    pub cfg: TrainConfig,
    pub arena: Arena,
    pub policy: PolicyNet,
    pub critic: CostCritic,
    pub opt: Optimizer,
    pub schedule: ThresholdSchedule,
    pub envs: Vec<LadderEnv>,
    roll: Rollouts,
    /// Completed update count; the next update is `iter + 1`.
    pub iter: usize,
}

impl TeacherTrainer {
    pub fn new(cfg: TrainConfig) -> Result<TeacherTrainer, String> {
        cfg.validate()?;
        let model =
            if cfg.hook_feet { RobotModel::with_hook() } else { RobotModel::default() };
        let mut envs: Vec<LadderEnv> = (0..cfg.num_envs)
            .map(|i| LadderEnv::new(model.clone(), cfg.env.clone(), cfg.seed, i as u64))
            .collect();

        let (arena, policy, critic) = teacher_arena(cfg.seed);
        let opt = Optimizer::new(arena.len());
        let schedule = ThresholdSchedule::new(
            cfg.final_thresholds.clone(),
            cfg.threshold_start_factor,
            cfg.threshold_anneal_frac,
            cfg.adaptive_thresholds,
        );
        let roll = Rollouts::new(&mut envs, cfg.seed);
        Ok(TeacherTrainer { cfg, arena, policy, critic, opt, schedule, envs, roll, iter: 0 })
    }

    /// Run one collect-and-update iteration.
    pub fn step(&mut self) -> IterMetrics {
        let frac = self.iter as f64 / self.cfg.epochs as f64;
        let lr = self.cfg.lr * (1.0 - frac);

        let batch = self.roll.collect(
            &mut self.envs,
            &self.arena,
            &self.policy,
            Some(&self.critic),
            self.cfg.steps_per_batch,
            self.cfg.ppo.gamma,
            self.cfg.ppo.lam,
            false,
        );

        let j = batch.mean_cost_return();
        let feasible =
            j.iter().zip(self.schedule.thresholds()).all(|(ji, di)| ji <= di);
        self.schedule.update(self.iter, self.cfg.epochs, feasible);

        let update = ppo_ipo_update(
            &mut self.arena,
            &self.policy,
            Some(&self.critic),
            &mut self.opt,
            &batch,
            self.schedule.thresholds(),
            &self.cfg.ppo,
            lr,
            self.cfg.seed.wrapping_add(self.iter as u64),
        );
        self.iter += 1;

        let s = batch.stats;
        let ended = (s.episodes_reached + s.episodes_terminated + s.episodes_timed_out) as f64;
        let rate = |n: u64| if ended > 0.0 { n as f64 / ended } else { 0.0 };
        let level_mean = self.envs.iter().map(|e| e.curriculum.level as f64).sum::<f64>()
            / self.envs.len() as f64;
        IterMetrics {
            iter: self.iter,
            window_return: s.mean_window_return,
            term_rate: rate(s.episodes_terminated),
            timeout_rate: rate(s.episodes_timed_out),
            success_rate: rate(s.episodes_reached),
            constraint_j: j,
            level_mean,
            update,
            lr,
        }
    }

    /// Weights, optimizer moments and run position, ready to save.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_arena(&self.arena, Role::Teacher);
        ck.push_adam(&self.opt.adam);
        ck.push("meta.iter", &[1], &[self.iter as f64]);
        let levels: Vec<f64> =
            self.envs.iter().map(|e| e.curriculum.level as f64).collect();
        ck.push("meta.level", &[levels.len()], &levels);
        ck
    }

    /// Drive the loop to completion, streaming one CSV row per iteration and
    /// checkpointing into `ckpt_dir` every `ckpt_every` updates.
    pub fn run<W: Write>(&mut self, mut metrics: W, ckpt_dir: Option<&Path>) -> io::Result<()> {
        writeln!(metrics, "{}", IterMetrics::CSV_HEADER)?;
        while self.iter < self.cfg.epochs {
            let m = self.step();
            writeln!(metrics, "{}", m.csv_row())?;
            if m.update.skipped_minibatches > 0 {
                eprintln!(
                    "iter {}: skipped {} minibatch(es) on a non-finite loss, lr scale {}",
                    m.iter, m.update.skipped_minibatches, self.opt.lr_scale
                );
            }
            if let Some(dir) = ckpt_dir {
                if self.iter % self.cfg.ckpt_every == 0 || self.iter == self.cfg.epochs {
                    let path = dir.join(format!("teacher_{:06}.ckpt", self.iter));
                    self.checkpoint().save(&path).map_err(io::Error::other)?;
                }
            }
        }
        metrics.flush()
    }
}
