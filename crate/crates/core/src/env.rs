//! Episode-level environment: terrain sampling with the adaptive curriculum,
//! spawn/goal management, observation assembly, rewards, constraint costs and
//! the success/termination bookkeeping shared by training and evaluation.

use crate::obs::{
    self, GoalCommand, HeightScan, NoiseModel, ProprioHistory, PRIV_DIM, STUDENT_OBS_DIM,
    TEACHER_OBS_DIM,
};
use crate::reward::{compute_rewards, constraint_costs, RewardBreakdown, RewardConfig};
use crate::rng::{self, Rng};
use crate::robot::{DisturbanceConfig, RobotModel};
use crate::sim::{apply_randomization, RobotState, Sim, SimParams, StepInfo};
use crate::terrain::{
    curriculum_sample, curriculum_update, generate_ladder, generate_rough, CurriculumState,
    EpisodeOutcome, TerrainConfig, TerrainInstance,
};
use rand::Rng as _;

/// Flags and reward for one environment step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Transition {
    pub reward: f64,
    pub done: bool,
    /// The episode ended by running out of time rather than by reaching a
    /// terminal state, so a value bootstrap should use the critic, not zero.
    pub timeout: bool,
    pub diverged: bool,
    pub reached: bool,
}

/// Minimal stepping surface the on-policy trainer needs. Observations and
/// costs are written into caller buffers so rollout collection allocates
/// nothing per step.
pub trait RolloutEnv {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Number of constraint-cost channels (zero for unconstrained tasks).
    fn cost_dim(&self) -> usize {
        0
    }
    fn reset(&mut self, obs: &mut [f64]);
    fn step(&mut self, action: &[f64], obs: &mut [f64], costs: &mut [f64]) -> Transition;
}

/// Mix of terrain kinds drawn on reset, normalized on use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainMix {
    pub ladder: f64,
    pub rough: f64,
    pub flat: f64,
}

impl Default for TerrainMix {
    fn default() -> Self {
        TerrainMix { ladder: 0.6, rough: 0.2, flat: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub sim: SimParams,
    pub terrain: TerrainConfig,
    pub mix: TerrainMix,
    pub disturbances: DisturbanceConfig,
    pub noise: NoiseModel,
    pub reward: RewardConfig,
    /// Episode length bound.
    pub max_time_s: f64,
    /// Time the base must dwell within the goal radius to count as success.
    pub success_dwell_s: f64,
    /// Probability of keeping the previous terrain instance on reset, which
    /// lets an agent retry a configuration it just failed.
    pub terrain_reuse: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            sim: SimParams::default(),
            terrain: TerrainConfig::default(),
            mix: TerrainMix::default(),
            disturbances: DisturbanceConfig::default(),
            noise: NoiseModel::default(),
            reward: RewardConfig::default(),
            max_time_s: 20.0,
            success_dwell_s: 0.5,
            terrain_reuse: 0.5,
        }
    }
}

/// Everything a richer consumer may want from one step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub reward: RewardBreakdown,
    pub costs: [f64; 3],
    pub done: bool,
    pub outcome: Option<EpisodeOutcome>,
    pub diverged: bool,
}

/// One independently steppable training environment.
pub struct LadderEnv {
    pub cfg: EnvConfig,
    pub model: RobotModel,
    pub sim: Sim,
    pub curriculum: CurriculumState,
    pub rng: Rng,
    hist: ProprioHistory,
    last_info: StepInfo,
    time_s: f64,
    dwell_s: f64,
    reached: bool,
    terminated: bool,
    steps_in_episode: u64,
    /// Terrain pinned by the evaluator; disables curriculum resampling.
    fixed_terrain: Option<TerrainInstance>,
    pub episodes: u64,
    pub diverged_episodes: u64,
}

impl LadderEnv {
    pub fn new(model: RobotModel, cfg: EnvConfig, seed: u64, env_id: u64) -> LadderEnv {
        let rng = rng::stream(seed, env_id);
        let curriculum = CurriculumState::new(&cfg.terrain);
        let terrain = generate_rough(0.0, &cfg.terrain, seed ^ env_id, &mut rng.clone());
        let sim = Sim::new(model.clone(), cfg.sim.clone(), terrain);
        let mut env = LadderEnv {
            cfg,
            model,
            sim,
            curriculum,
            rng,
            hist: ProprioHistory::default(),
            last_info: StepInfo::default(),
            time_s: 0.0,
            dwell_s: 0.0,
            reached: false,
            terminated: false,
            steps_in_episode: 0,
            fixed_terrain: None,
            episodes: 0,
            diverged_episodes: 0,
        };
        env.reset_episode();
        env
    }

    /// Pin the terrain (evaluation mode): every reset reuses this instance
    /// and the curriculum is left untouched.
    pub fn set_fixed_terrain(&mut self, terrain: TerrainInstance) {
        self.fixed_terrain = Some(terrain);
        self.reset_episode();
    }

    fn outcome_now(&self) -> Option<EpisodeOutcome> {
        if self.steps_in_episode == 0 {
            return None;
        }
        Some(if self.reached {
            EpisodeOutcome::ReachedGoal
        } else if self.terminated {
            EpisodeOutcome::Terminated
        } else {
            EpisodeOutcome::TimedOut
        })
    }

    fn sample_terrain(&mut self) -> TerrainInstance {
        let seed = self.rng.gen::<u64>();
        let mix = self.cfg.mix;
        let total = (mix.ladder + mix.rough + mix.flat).max(1e-12);
        let draw = self.rng.gen_range(0.0..total);
        let level = self.curriculum.level;
        if draw < mix.ladder {
            let spec = curriculum_sample(&self.curriculum, &self.cfg.terrain, &mut self.rng);
            generate_ladder(&spec, &self.cfg.terrain, level as u32, seed, &mut self.rng)
                .expect("curriculum samples satisfy the spec invariants")
        } else if draw < mix.ladder + mix.rough {
            let difficulty = level as f64 / self.curriculum.max_level().max(1) as f64;
            generate_rough(difficulty, &self.cfg.terrain, seed, &mut self.rng)
        } else {
            generate_rough(0.0, &self.cfg.terrain, seed, &mut self.rng)
        }
    }

    /// Finish the current episode (feeding the curriculum) and start a new
    /// one: sample or reuse terrain, respawn, re-randomize.
    pub fn reset_episode(&mut self) {
        if let Some(outcome) = self.outcome_now() {
            if self.fixed_terrain.is_none() {
                self.curriculum = curriculum_update(self.curriculum.clone(), outcome);
            }
            self.episodes += 1;
        }

        let terrain = match &self.fixed_terrain {
            Some(t) => t.clone(),
            None => {
                let reuse = self.steps_in_episode > 0
                    && self.rng.gen_range(0.0..1.0) < self.cfg.terrain_reuse;
                if reuse {
                    self.sim.terrain.clone()
                } else {
                    self.sample_terrain()
                }
            }
        };

        let spawn_x = {
            let r = &terrain.spawn_region;
            if r.max.x > r.min.x {
                self.rng.gen_range(r.min.x..=r.max.x)
            } else {
                r.min.x
            }
        };
        self.sim.set_terrain(terrain);
        let state = RobotState::standing(&self.model, &self.sim.terrain, spawn_x);
        self.sim.set_state(state);
        let record = apply_randomization(&self.cfg.disturbances, &mut self.rng);
        self.sim.set_randomization(record);

        self.hist = ProprioHistory::default();
        self.last_info = StepInfo::default();
        self.time_s = 0.0;
        self.dwell_s = 0.0;
        self.reached = false;
        self.terminated = false;
        self.steps_in_episode = 0;
    }

    fn goal_command(&self) -> GoalCommand {
        let scan = HeightScan::build(&self.sim.terrain, &self.sim.state);
        GoalCommand::compute(&self.sim.state, &self.sim.terrain.goal_pose, scan.is_flat())
    }

    pub fn teacher_obs(&self) -> Vec<f64> {
        let goal = self.goal_command();
        let proprio = obs::build_proprio(&self.sim.state, &goal, &self.hist);
        let imu = obs::imu_history(&self.last_info);
        let scan = HeightScan::build(&self.sim.terrain, &self.sim.state);
        let privileged = self.privileged();
        obs::build_teacher_obs(&proprio, &imu, &scan, &privileged)
    }

    pub fn privileged(&self) -> [f64; PRIV_DIM] {
        let kin = self.sim.kinematics_now();
        obs::build_privileged(
            &self.sim.state,
            &self.sim.contact,
            &self.sim.terrain,
            &self.sim.rand,
            &kin.foot,
        )
    }

    /// Noisy student observation; draws noise from the environment stream.
    pub fn student_obs(&mut self) -> Vec<f64> {
        let goal = self.goal_command();
        let proprio = obs::build_proprio(&self.sim.state, &goal, &self.hist);
        let imu = obs::imu_history(&self.last_info);
        let ls = obs::ladder_state(&self.sim.terrain);
        let lp = obs::ladder_pose(&self.sim.terrain, &self.sim.state);
        let mut o = obs::build_student_obs(&proprio, &imu, &ls, &lp);
        obs::add_noise(&mut o, &self.cfg.noise, &mut self.rng);
        o
    }

    /// Advance one policy step with joint-target deltas around the default
    /// pose. Divergence terminates the episode instead of crashing.
    pub fn step_targets(&mut self, action: &[f64; 8]) -> StepRecord {
        let mut targets = [0.0; 8];
        for j in 0..8 {
            targets[j] = self.model.default_pose[j] + action[j];
        }

        let diverged =
            match self.sim.step(Some(&targets), &self.cfg.disturbances, &mut self.rng) {
                Ok(info) => {
                    self.last_info = info;
                    false
                }
                Err(_) => true,
            };
        self.steps_in_episode += 1;
        self.time_s += self.cfg.sim.policy_dt();
        self.hist.push(&self.sim.state.q, &self.sim.state.qd);

        let goal = self.goal_command();
        if goal.at_goal {
            self.dwell_s += self.cfg.sim.policy_dt();
            if self.dwell_s >= self.cfg.success_dwell_s {
                self.reached = true;
            }
        } else {
            self.dwell_s = 0.0;
        }

        let reward;
        if diverged {
            self.terminated = true;
            self.diverged_episodes += 1;
            reward = RewardBreakdown::default();
        } else {
            if crate::sim::check_termination(&self.sim.state) {
                self.terminated = true;
            }
            reward = compute_rewards(
                &self.model,
                &self.sim.state,
                &self.sim.contact,
                &goal,
                &self.cfg.reward,
            );
        }
        let costs = constraint_costs(&self.model, &self.sim.state);
        let done = self.terminated || self.time_s >= self.cfg.max_time_s - 1e-9;
        StepRecord { reward, costs, done, outcome: done.then(|| self.outcome_now()).flatten(), diverged }
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn reached_goal(&self) -> bool {
        self.reached
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }
}

impl RolloutEnv for LadderEnv {
    fn obs_dim(&self) -> usize {
        TEACHER_OBS_DIM
    }

    fn act_dim(&self) -> usize {
        8
    }

    fn cost_dim(&self) -> usize {
        3
    }

    fn reset(&mut self, obs: &mut [f64]) {
        self.reset_episode();
        obs.copy_from_slice(&self.teacher_obs());
    }

    fn step(&mut self, action: &[f64], obs: &mut [f64], costs: &mut [f64]) -> Transition {
        let mut a = [0.0; 8];
        a.copy_from_slice(&action[..8]);
        let rec = self.step_targets(&a);
        obs.copy_from_slice(&self.teacher_obs());
        costs.copy_from_slice(&rec.costs);
        Transition {
            reward: rec.reward.total,
            done: rec.done,
            timeout: rec.done && !self.terminated,
            diverged: rec.diverged,
            reached: self.reached,
        }
    }
}

/// Student-side view dimensions, re-exported where the distiller needs them.
pub const STUDENT_DIM: usize = STUDENT_OBS_DIM;
