//! Evaluation harness: frozen-policy rollouts over a grid of ladder
//! difficulties, trajectory logging and scripted force perturbations.
//!
//! Every cell of the grid pins one (incline, rung radius) pair, rolls a
//! fixed agent count round-robin over a shared ladder set and reports
//! success, termination and timeout fractions plus time-to-goal and climb
//! speed. All rollouts are seeded per agent, so results are independent of
//! the rayon worker count and bit-reproducible across runs.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::env::{EnvConfig, LadderEnv};
use crate::math::{fnv1a, Vec2};
use crate::nn::gru::GruStepCache;
use crate::nn::policy::{PolicyCache, PolicyNet};
use crate::nn::Arena;
use crate::obs::NoiseModel;
use crate::reward::REWARD_NAMES;
use crate::rng;
use crate::robot::{DisturbanceConfig, RobotModel};
use crate::terrain::{
    generate_ladder, sample_eval_ladders, GoalPose, SpawnRegion, TerrainConfig, TerrainInstance,
};
use crate::train::checkpoint::{Checkpoint, CkptError, Role};
use crate::train::distill::Student;
use crate::train::teacher_arena;

/// Grid evaluation parameters. Defaults match the full protocol; `desk`
/// shrinks the per-cell population for commodity hardware.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub inclines_deg: Vec<f64>,
    pub radii_m: Vec<f64>,
    pub agents_per_cell: usize,
    /// Shared ladder pool size; agents round-robin over it.
    pub ladder_set: usize,
    pub timeout_s: f64,
    /// Episode randomization plus velocity pushes (sigma 1 m/s every 5 s).
    pub disturbances: bool,
    /// Observation noise on the student channels.
    pub noise: bool,
    pub hook_feet: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            inclines_deg: vec![70.0, 80.0, 90.0],
            radii_m: vec![0.02, 0.025, 0.035],
            agents_per_cell: 3072,
            ladder_set: 50,
            timeout_s: 15.0,
            disturbances: true,
            noise: true,
            hook_feet: true,
            seed: 0,
        }
    }
}

impl EvalConfig {
    /// Small population profile: same protocol, fewer agents per cell.
    pub fn desk() -> EvalConfig {
        EvalConfig { agents_per_cell: 256, ..EvalConfig::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.inclines_deg.is_empty() || self.radii_m.is_empty() {
            return Err("incline and radius lists must be non-empty".into());
        }
        for &v in &self.inclines_deg {
            if !(v > 0.0 && v <= 90.0) {
                return Err(format!("incline {v} deg outside (0, 90]"));
            }
        }
        for &v in &self.radii_m {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("rung radius {v} must be positive"));
            }
        }
        if self.agents_per_cell == 0 || self.ladder_set == 0 {
            return Err("agents_per_cell and ladder_set must be >= 1".into());
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("timeout {} must be positive", self.timeout_s));
        }
        Ok(())
    }

    /// Canonical key=value rendering; the basis of the config hash.
    pub fn canonical(&self) -> String {
        let join = |xs: &[f64]| {
            xs.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
        };
        format!(
            "inclines={} radii={} agents={} ladders={} timeout={} dist={} noise={} hook={} seed={}",
            join(&self.inclines_deg),
            join(&self.radii_m),
            self.agents_per_cell,
            self.ladder_set,
            self.timeout_s,
            self.disturbances,
            self.noise,
            self.hook_feet,
            self.seed,
        )
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }
}

/// A frozen policy under evaluation. Network policies act through their
/// deterministic mean; the scripted variant replays piecewise-constant
/// joint offsets.
pub enum EvalPolicy {
    /// Zero action: hold the default pose.
    Null,
    /// `(until_s, action)` segments; each holds until its timestamp and the
    /// last one holds to the end of the episode.
    Scripted(Vec<(f64, [f64; 8])>),
    Teacher { arena: Arena, policy: PolicyNet },
    Student(Student),
}

impl EvalPolicy {
    /// Load a checkpoint and rebuild the matching network around it.
    pub fn from_checkpoint(path: &Path) -> Result<EvalPolicy, CkptError> {
        let ckpt = Checkpoint::load(path)?;
        match ckpt.role() {
            Some(Role::Teacher) => {
                let (mut arena, policy, _critic) = teacher_arena(0);
                ckpt.apply_to(&mut arena)?;
                Ok(EvalPolicy::Teacher { arena, policy })
            }
            Some(Role::Student) => {
                let mut student = Student::quadruped(0);
                ckpt.apply_to(&mut student.arena)?;
                Ok(EvalPolicy::Student(student))
            }
            None => {
                ckpt.require_role(Role::Teacher)?;
                unreachable!("checkpoints without a role tag fail require_role")
            }
        }
    }

    /// Content hash of the evaluated parameters, recorded in grid metadata.
    pub fn policy_hash(&self) -> u64 {
        fn bits<I: IntoIterator<Item = f64>>(vals: I) -> u64 {
            let mut bytes = Vec::new();
            for v in vals {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            fnv1a(&bytes)
        }
        match self {
            EvalPolicy::Null => 0,
            EvalPolicy::Scripted(seq) => bits(
                seq.iter().flat_map(|(t, a)| std::iter::once(*t).chain(a.iter().copied())),
            ),
            EvalPolicy::Teacher { arena, .. } => bits(arena.w.iter().copied()),
            EvalPolicy::Student(s) => bits(s.arena.w.iter().copied()),
        }
    }
}

/// Per-rollout actor state: forward caches and, for the student, the
/// recurrent belief hidden state.
enum Actor<'p> {
    Null,
    Scripted(&'p [(f64, [f64; 8])]),
    Teacher { arena: &'p Arena, policy: &'p PolicyNet, cache: PolicyCache },
    Student { student: &'p Student, cache: PolicyCache, gru: GruStepCache, h: Vec<f64>, h_next: Vec<f64> },
}

impl<'p> Actor<'p> {
    fn new(policy: &'p EvalPolicy) -> Actor<'p> {
        match policy {
            EvalPolicy::Null => Actor::Null,
            EvalPolicy::Scripted(seq) => Actor::Scripted(seq),
            EvalPolicy::Teacher { arena, policy } => {
                Actor::Teacher { arena, policy, cache: PolicyCache::default() }
            }
            EvalPolicy::Student(s) => Actor::Student {
                student: s,
                cache: PolicyCache::default(),
                gru: GruStepCache::default(),
                h: vec![0.0; s.belief.hidden()],
                h_next: vec![0.0; s.belief.hidden()],
            },
        }
    }

    fn act(&mut self, env: &mut LadderEnv) -> [f64; 8] {
        match self {
            Actor::Null => [0.0; 8],
            Actor::Scripted(seq) => {
                let t = env.time_s();
                let mut action = seq.last().map_or([0.0; 8], |(_, a)| *a);
                for (until, a) in seq.iter() {
                    if t < *until {
                        action = *a;
                        break;
                    }
                }
                action
            }
            Actor::Teacher { arena, policy, cache } => {
                let obs = env.teacher_obs();
                policy.forward(arena, &obs, &[], cache);
                let mut a = [0.0; 8];
                a.copy_from_slice(&cache.mean);
                a
            }
            Actor::Student { student, cache, gru, h, h_next } => {
                let obs = env.student_obs();
                student.belief.step(&student.arena, &obs, h, h_next, gru);
                h.copy_from_slice(h_next);
                student.policy.forward(&student.arena, &obs, h, cache);
                let mut a = [0.0; 8];
                a.copy_from_slice(&cache.mean);
                a
            }
        }
    }
}

/// Rung-contact window along the ladder axis: first touch to last touch,
/// for the climb duration and mean climb speed summaries.
struct ClimbTracker {
    axis: Option<Vec2>,
    reach: f64,
    first: Option<(f64, f64)>,
    last: Option<(f64, f64)>,
}

impl ClimbTracker {
    fn new(terrain: &TerrainInstance, model: &RobotModel) -> ClimbTracker {
        let axis = terrain
            .ladder
            .as_ref()
            .map(|l| Vec2::new(l.incline_rad.cos(), l.incline_rad.sin()));
        let reach = terrain.rung_radii().0 + model.foot_radius_m + 0.01;
        ClimbTracker { axis, reach, first: None, last: None }
    }

    fn observe(&mut self, env: &LadderEnv) {
        let Some(axis) = self.axis else { return };
        if !rung_contact(env, self.reach) {
            return;
        }
        let s = env.sim.state.base_pos.dot(axis);
        let t = env.time_s();
        if self.first.is_none() {
            self.first = Some((t, s));
        }
        self.last = Some((t, s));
    }

    /// `(duration, mean speed)` of the contact window; zero speed for a
    /// single-step touch, `None` when no rung was ever contacted.
    fn window(&self) -> Option<(f64, f64)> {
        let (t0, s0) = self.first?;
        let (t1, s1) = self.last?;
        if t1 <= t0 {
            return Some((0.0, 0.0));
        }
        Some((t1 - t0, (s1 - s0) / (t1 - t0)))
    }
}

/// Any foot on a rung this step: hook pins count directly, ball feet by a
/// contacting foot sitting within one rung radius (plus foot radius and a
/// small margin) of a rung center.
fn rung_contact(env: &LadderEnv, reach: f64) -> bool {
    let c = &env.sim.contact;
    if c.engaged_rung.iter().any(Option::is_some) {
        return true;
    }
    let rungs = &env.sim.terrain.rung_centers;
    if rungs.is_empty() {
        return false;
    }
    let kin = env.sim.kinematics_now();
    (0..4).any(|l| {
        c.foot_contact[l] && rungs.iter().any(|r| (kin.foot[l] - *r).norm() <= reach)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AgentOutcome {
    success: bool,
    terminated: bool,
    time_to_goal_s: f64,
    climb: Option<(f64, f64)>,
}

/// One full episode on pinned terrain. Success is the dwell-latched goal
/// flag; `time_to_goal_s` is the latch time and includes the dwell.
fn rollout_agent(
    policy: &EvalPolicy,
    model: &RobotModel,
    env_cfg: &EnvConfig,
    terrain: &TerrainInstance,
    seed: u64,
    id: u64,
) -> AgentOutcome {
    let mut env = LadderEnv::new(model.clone(), env_cfg.clone(), seed, id);
    env.set_fixed_terrain(terrain.clone());
    let mut actor = Actor::new(policy);
    let mut climb = ClimbTracker::new(terrain, model);

    loop {
        let action = actor.act(&mut env);
        let rec = env.step_targets(&action);
        climb.observe(&env);

        if env.reached_goal() {
            return AgentOutcome {
                success: true,
                terminated: false,
                time_to_goal_s: env.time_s(),
                climb: climb.window(),
            };
        }
        if rec.done {
            return AgentOutcome {
                success: false,
                terminated: env.terminated(),
                time_to_goal_s: 0.0,
                climb: climb.window(),
            };
        }
    }
}

/// Aggregate outcome of one agent population on one terrain set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetResult {
    pub n: usize,
    pub success: f64,
    pub termination: f64,
    pub timeout: f64,
    /// Mean time to the success latch over successful agents; 0 if none.
    pub mean_time_s: f64,
    /// Mean climb speed over agents that contacted a rung; 0 if none.
    pub mean_speed_mps: f64,
}

/// Roll `agents` independent episodes round-robin over `instances` and
/// aggregate. Public so targeted tests can inject hand-built terrain.
/// Rollouts fan out over rayon but are seeded per agent and reduced in
/// agent order, so the result is independent of the worker count.
pub fn run_set(
    policy: &EvalPolicy,
    model: &RobotModel,
    env_cfg: &EnvConfig,
    instances: &[TerrainInstance],
    agents: usize,
    seed: u64,
) -> SetResult {
    assert!(!instances.is_empty() && agents >= 1, "need terrain and agents");
    let outcomes: Vec<AgentOutcome> = (0..agents)
        .into_par_iter()
        .map(|i| {
            let terrain = &instances[i % instances.len()];
            rollout_agent(policy, model, env_cfg, terrain, seed, i as u64)
        })
        .collect();

    let n = outcomes.len();
    let n_success = outcomes.iter().filter(|o| o.success).count();
    let n_term = outcomes.iter().filter(|o| !o.success && o.terminated).count();
    let n_timeout = n - n_success - n_term;
    let mean_time_s = if n_success == 0 {
        0.0
    } else {
        outcomes.iter().filter(|o| o.success).map(|o| o.time_to_goal_s).sum::<f64>()
            / n_success as f64
    };
    let speeds: Vec<f64> = outcomes.iter().filter_map(|o| o.climb.map(|(_, v)| v)).collect();
    let mean_speed_mps =
        if speeds.is_empty() { 0.0 } else { speeds.iter().sum::<f64>() / speeds.len() as f64 };

    SetResult {
        n,
        success: n_success as f64 / n as f64,
        termination: n_term as f64 / n as f64,
        timeout: n_timeout as f64 / n as f64,
        mean_time_s,
        mean_speed_mps,
    }
}

/// One grid cell: the set result tagged with its difficulty coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub incline_deg: f64,
    pub radius_m: f64,
    pub n: usize,
    pub success: f64,
    pub termination: f64,
    pub timeout: f64,
    pub mean_time_s: f64,
    pub mean_speed_mps: f64,
}

fn cell_tag(incline_deg: f64, radius_m: f64) -> u64 {
    let mut b = [0u8; 16];
    b[..8].copy_from_slice(&incline_deg.to_bits().to_le_bytes());
    b[8..].copy_from_slice(&radius_m.to_bits().to_le_bytes());
    fnv1a(&b)
}

/// The shared evaluation ladder pool, specialized to one cell: cylindrical
/// rungs at the cell radius and the cell incline, everything else kept from
/// the pooled sample.
pub fn cell_instances(
    incline_deg: f64,
    radius_m: f64,
    cfg: &EvalConfig,
) -> Vec<TerrainInstance> {
    let tcfg = TerrainConfig::default();
    let base = sample_eval_ladders(cfg.ladder_set, &tcfg, &mut rng::stream(cfg.seed, 0x11ad));
    let tag = cell_tag(incline_deg, radius_m);
    base.iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut s = spec.clone();
            s.incline_rad = incline_deg.to_radians();
            s.rung_minor_radius_m = radius_m;
            s.rung_major_radius_m = radius_m;
            let seed = cfg.seed ^ tag ^ i as u64;
            generate_ladder(&s, &tcfg, 0, seed, &mut rng::stream(cfg.seed ^ tag, i as u64))
                .expect("pooled ladders stay valid under cell overrides")
        })
        .collect()
}

fn eval_env_cfg(cfg: &EvalConfig) -> EnvConfig {
    let mut env = EnvConfig::default();
    env.max_time_s = cfg.timeout_s;
    env.disturbances = if cfg.disturbances {
        DisturbanceConfig { push_std_mps: 1.0, ..DisturbanceConfig::default() }
    } else {
        DisturbanceConfig::none()
    };
    env.noise = if cfg.noise { NoiseModel::default() } else { NoiseModel::zero() };
    env
}

pub fn run_cell(
    policy: &EvalPolicy,
    incline_deg: f64,
    radius_m: f64,
    cfg: &EvalConfig,
) -> CellResult {
    let instances = cell_instances(incline_deg, radius_m, cfg);
    let model =
        if cfg.hook_feet { RobotModel::with_hook() } else { RobotModel::default() };
    let env_cfg = eval_env_cfg(cfg);
    let set = run_set(
        policy,
        &model,
        &env_cfg,
        &instances,
        cfg.agents_per_cell,
        cfg.seed ^ cell_tag(incline_deg, radius_m),
    );
    CellResult {
        incline_deg,
        radius_m,
        n: set.n,
        success: set.success,
        termination: set.termination,
        timeout: set.timeout,
        mean_time_s: set.mean_time_s,
        mean_speed_mps: set.mean_speed_mps,
    }
}

/// Full success grid plus the metadata needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    /// Row-major over (incline, radius) in config order.
    pub cells: Vec<CellResult>,
    pub config_hash: u64,
    pub checkpoint_hash: u64,
}

pub fn run_grid(policy: &EvalPolicy, cfg: &EvalConfig) -> Result<EvalGrid, String> {
    cfg.validate()?;
    let mut cells = Vec::with_capacity(cfg.inclines_deg.len() * cfg.radii_m.len());
    for &incline in &cfg.inclines_deg {
        for &radius in &cfg.radii_m {
            cells.push(run_cell(policy, incline, radius, cfg));
        }
    }
    Ok(EvalGrid { cells, config_hash: cfg.config_hash(), checkpoint_hash: policy.policy_hash() })
}

impl EvalGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "incline_deg,radius_m,n,success,term,timeout,mean_time_s,mean_speed_mps\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.incline_deg,
                c.radius_m,
                c.n,
                c.success,
                c.termination,
                c.timeout,
                c.mean_time_s,
                c.mean_speed_mps,
            );
        }
        out
    }

    /// Self-contained heatmap: one rect per cell, white through green by
    /// success rate, inclines across and radii down.
    pub fn to_svg(&self) -> String {
        let mut incs: Vec<f64> = self.cells.iter().map(|c| c.incline_deg).collect();
        incs.sort_by(f64::total_cmp);
        incs.dedup();
        let mut rads: Vec<f64> = self.cells.iter().map(|c| c.radius_m).collect();
        rads.sort_by(f64::total_cmp);
        rads.dedup();

        let (cw, ch, mx, my) = (120.0, 64.0, 96.0, 48.0);
        let w = mx + cw * incs.len() as f64 + 12.0;
        let h = my + ch * rads.len() as f64 + 12.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="monospace" font-size="12">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{mx}" y="18" font-size="13">success by incline (deg, across) and rung radius (m, down)</text>"#
        );
        for (i, inc) in incs.iter().enumerate() {
            let x = mx + cw * (i as f64 + 0.5);
            let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{inc}</text>"#, my - 8.0);
        }
        for (j, rad) in rads.iter().enumerate() {
            let y = my + ch * (j as f64 + 0.55);
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{rad}</text>"#, mx - 8.0);
        }
        for c in &self.cells {
            let i = incs.iter().position(|v| *v == c.incline_deg).unwrap();
            let j = rads.iter().position(|v| *v == c.radius_m).unwrap();
            let x = mx + cw * i as f64;
            let y = my + ch * j as f64;
            let t = c.success.clamp(0.0, 1.0);
            let r = (255.0 * (1.0 - t)) as u8;
            let g = (255.0 * (1.0 - t) + 168.0 * t) as u8;
            let b = (255.0 * (1.0 - t) + 82.0 * t) as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="rgb({r},{g},{b})" stroke="#444"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{:.1}%</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 - 2.0,
                100.0 * c.success,
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{:.2} s | {:.2} m/s</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 + 14.0,
                c.mean_time_s,
                c.mean_speed_mps,
            );
        }
        let _ = writeln!(s, "</svg>");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySummary {
    pub steps: usize,
    pub reached: bool,
    pub terminated: bool,
    /// First rung contact to last rung contact.
    pub climb_duration_s: f64,
    pub mean_speed_mps: f64,
}

/// Roll one episode and render a whitespace-separated log: one `#` header
/// line, then per step `t base_x base_z pitch q0..q7 contact0..3
/// fx0 fz0 .. fx3 fz3 hook0..3 total <reward terms>`.
pub fn log_trajectory(
    policy: &EvalPolicy,
    model: &RobotModel,
    env_cfg: &EnvConfig,
    terrain: &TerrainInstance,
    seed: u64,
) -> (String, TrajectorySummary) {
    let mut env = LadderEnv::new(model.clone(), env_cfg.clone(), seed, 0);
    env.set_fixed_terrain(terrain.clone());
    let mut actor = Actor::new(policy);
    let mut climb = ClimbTracker::new(terrain, model);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "# t base_x base_z pitch q0..q7 contact0..3 fx0 fz0 fx1 fz1 fx2 fz2 fx3 fz3 hook0..3 total {}",
        REWARD_NAMES.join(" "),
    );

    let mut steps = 0usize;
    loop {
        let action = actor.act(&mut env);
        let rec = env.step_targets(&action);
        climb.observe(&env);
        steps += 1;

        let st = &env.sim.state;
        let c = &env.sim.contact;
        let _ = write!(out, "{} {} {} {}", env.time_s(), st.base_pos.x, st.base_pos.z, st.base_pitch);
        for q in &st.q {
            let _ = write!(out, " {q}");
        }
        for l in 0..4 {
            let _ = write!(out, " {}", u8::from(c.foot_contact[l]));
        }
        for l in 0..4 {
            let _ = write!(out, " {} {}", c.foot_force[l].x, c.foot_force[l].z);
        }
        for l in 0..4 {
            let _ = write!(out, " {}", u8::from(c.hook_engaged[l]));
        }
        let r = &rec.reward;
        let _ = write!(out, " {}", r.total);
        for term in [
            r.position_tracking,
            r.heading_tracking,
            r.base_motion,
            r.joints,
            r.action_rate,
            r.action_smoothness,
            r.foot_slippage,
            r.flat_orientation,
            r.stand_still,
            r.stand_still_contact,
            r.collision,
            r.base_collision,
        ] {
            let _ = write!(out, " {term}");
        }
        let _ = writeln!(out);

        if env.reached_goal() || rec.done {
            break;
        }
    }

    let (climb_duration_s, mean_speed_mps) = climb.window().unwrap_or((0.0, 0.0));
    let summary = TrajectorySummary {
        steps,
        reached: env.reached_goal(),
        terminated: env.terminated(),
        climb_duration_s,
        mean_speed_mps,
    };
    (out, summary)
}

/// Base positions from a trajectory log: columns 1 and 2 of each data line.
pub fn parse_log_positions(log: &str) -> Vec<Vec2> {
    log.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace().skip(1);
            let x: f64 = it.next().expect("log line has base_x").parse().expect("numeric base_x");
            let z: f64 = it.next().expect("log line has base_z").parse().expect("numeric base_z");
            Vec2::new(x, z)
        })
        .collect()
}

/// Root-mean-square pointwise distance between two equal-length tracks.
pub fn rmse_positions(a: &[Vec2], b: &[Vec2]) -> f64 {
    assert_eq!(a.len(), b.len(), "tracks must pair up");
    if a.is_empty() {
        return 0.0;
    }
    let ms = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let d = *p - *q;
            d.dot(d)
        })
        .sum::<f64>()
        / a.len() as f64;
    ms.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PullBody {
    Base,
    Foot(usize),
}

/// One scheduled external pull, constant over its window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pull {
    pub start_s: f64,
    pub duration_s: f64,
    pub body: PullBody,
    pub force_n: Vec2,
}

impl Pull {
    fn active(&self, t: f64) -> bool {
        t >= self.start_s && t < self.start_s + self.duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PullOutcome {
    /// No termination between pull onset and three seconds past its end.
    pub recovered: bool,
    /// Rising edges of hook-pin tension while the pull was active.
    pub tension_events: usize,
    /// A hook lost engagement while the pull was active.
    pub disengaged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbReport {
    pub pulls: Vec<PullOutcome>,
    /// Per-step normal force on each foot; negative means pin tension.
    pub force_trace: Vec<[f64; 4]>,
    pub reached: bool,
    pub terminated: bool,
}

/// Roll one episode while overlaying scheduled pulls on the episode's
/// randomization record. An empty schedule (or one with zero forces)
/// leaves the rollout bit-identical to an unperturbed one.
pub fn perturbation_test(
    policy: &EvalPolicy,
    model: &RobotModel,
    env_cfg: &EnvConfig,
    terrain: &TerrainInstance,
    schedule: &[Pull],
    seed: u64,
    max_steps: usize,
) -> PerturbReport {
    let mut env = LadderEnv::new(model.clone(), env_cfg.clone(), seed, 0);
    env.set_fixed_terrain(terrain.clone());
    let mut actor = Actor::new(policy);

    // The episode's own randomization; pulls are stacked on this copy each
    // step so expired pulls leave no residue.
    let base_rand = env.sim.rand;
    let mut pulls =
        vec![PullOutcome { recovered: true, tension_events: 0, disengaged: false }; schedule.len()];
    let mut force_trace = Vec::with_capacity(max_steps);
    let mut prev_engaged = env.sim.contact.hook_engaged;
    let mut prev_tension = [false; 4];

    for _ in 0..max_steps {
        let t = env.time_s();
        let mut rand = base_rand;
        for p in schedule {
            if p.active(t) {
                match p.body {
                    PullBody::Base => rand.ext_force_n = rand.ext_force_n + p.force_n,
                    PullBody::Foot(l) => {
                        rand.ext_foot_force_n[l] = rand.ext_foot_force_n[l] + p.force_n;
                    }
                }
            }
        }
        env.sim.rand = rand;

        let action = actor.act(&mut env);
        let rec = env.step_targets(&action);

        let c = &env.sim.contact;
        force_trace.push(c.foot_normal_force);

        for l in 0..4 {
            let tension = c.hook_engaged[l] && c.foot_normal_force[l] < 0.0;
            let rising = tension && !prev_tension[l];
            let lost = prev_engaged[l] && !c.hook_engaged[l];
            if rising || lost {
                for (k, p) in schedule.iter().enumerate() {
                    if p.active(t) {
                        pulls[k].tension_events += usize::from(rising);
                        pulls[k].disengaged |= lost;
                    }
                }
            }
            prev_tension[l] = tension;
        }
        prev_engaged = c.hook_engaged;

        if env.terminated() {
            for (k, p) in schedule.iter().enumerate() {
                if t >= p.start_s && t <= p.start_s + p.duration_s + 3.0 {
                    pulls[k].recovered = false;
                }
            }
        }
        if env.reached_goal() || rec.done {
            break;
        }
    }

    PerturbReport { pulls, force_trace, reached: env.reached_goal(), terminated: env.terminated() }
}

/// Trivial evaluation course: a two-rung 45 degree ladder so short that the
/// platform is level with the approach, with a pinned spawn and a goal one
/// meter ahead. Any gait that shuffles forward clears it.
pub fn trivial_ladder() -> TerrainInstance {
    let spec = crate::terrain::LadderSpec {
        present: true,
        length_m: 0.05,
        width_m: 1.0,
        spacing_m: 0.05,
        rung_minor_radius_m: 0.008,
        rung_major_radius_m: 0.008,
        incline_rad: std::f64::consts::FRAC_PI_4,
        num_rungs: 2,
        platform_offset_m: 0.0,
    };
    let cfg = TerrainConfig::default();
    let mut t = generate_ladder(&spec, &cfg, 0, 0x714a, &mut rng::stream(0x714a, 0))
        .expect("the trivial course satisfies every ladder invariant");
    t.spawn_region = SpawnRegion { min: Vec2::new(-0.6, 0.0), max: Vec2::new(-0.6, 0.0) };
    t.goal_pose = GoalPose { position: Vec2::new(0.45, cfg.goal_height_m), heading: 0.0 };
    t
}

/// Reference open-loop crawl used to smoke-test the harness: diagonal leg
/// pairs alternate between a reach and a stance push. Tuned only to cross
/// the trivial course, not to climb.
pub fn walk_script(cycles: usize) -> Vec<(f64, [f64; 8])> {
    // Joint order is [hip, knee] per leg, legs 0..4; legs 0 and 3 form one
    // diagonal pair, 1 and 2 the other.
    let mut seq = Vec::with_capacity(4 * cycles + 1);
    let mut t = 0.0;
    let phase = 0.22;
    let swing_hip = 0.55;
    let swing_knee = 0.65;
    let push_hip = -0.35;
    for _ in 0..cycles {
        let mut a = [0.0; 8];
        for leg in [0usize, 3] {
            a[2 * leg] = swing_hip;
            a[2 * leg + 1] = swing_knee;
        }
        for leg in [1usize, 2] {
            a[2 * leg] = push_hip;
        }
        t += phase;
        seq.push((t, a));

        let mut b = [0.0; 8];
        for leg in [0usize, 3] {
            b[2 * leg] = swing_hip;
        }
        for leg in [1usize, 2] {
            b[2 * leg] = push_hip;
        }
        t += phase;
        seq.push((t, b));

        let mut c = [0.0; 8];
        for leg in [1usize, 2] {
            c[2 * leg] = swing_hip;
            c[2 * leg + 1] = swing_knee;
        }
        for leg in [0usize, 3] {
            c[2 * leg] = push_hip;
        }
        t += phase;
        seq.push((t, c));

        let mut d = [0.0; 8];
        for leg in [1usize, 2] {
            d[2 * leg] = swing_hip;
        }
        for leg in [0usize, 3] {
            d[2 * leg] = push_hip;
        }
        t += phase;
        seq.push((t, d));
    }
    // Finish standing so the dwell can latch wherever the crawl ends up.
    seq.push((t + 60.0, [0.0; 8]));
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::terrain::{generate_rough, LadderSpec};
    use crate::train::checkpoint::Checkpoint;

    fn quiet_env(timeout_s: f64) -> EnvConfig {
        let mut cfg = EnvConfig::default();
        cfg.max_time_s = timeout_s;
        cfg.disturbances = DisturbanceConfig::none();
        cfg.noise = NoiseModel::zero();
        cfg
    }

    fn tiny_grid_cfg() -> EvalConfig {
        EvalConfig {
            inclines_deg: vec![70.0, 80.0],
            radii_m: vec![0.02, 0.035],
            agents_per_cell: 4,
            ladder_set: 3,
            timeout_s: 3.0,
            disturbances: false,
            noise: false,
            hook_feet: false,
            seed: 5,
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(EvalConfig::default().validate().is_ok());
        assert!(EvalConfig::desk().validate().is_ok());
        let mut c = EvalConfig::desk();
        c.inclines_deg.clear();
        assert!(c.validate().is_err());
        let mut c = EvalConfig::desk();
        c.radii_m = vec![0.0];
        assert!(c.validate().is_err());
        let mut c = EvalConfig::desk();
        c.timeout_s = 0.0;
        assert!(c.validate().is_err());
        let mut c = EvalConfig::desk();
        c.agents_per_cell = 0;
        assert!(c.validate().is_err());

        let a = EvalConfig::desk().config_hash();
        let mut other = EvalConfig::desk();
        other.seed = 9;
        assert_ne!(a, other.config_hash());
        assert_eq!(a, EvalConfig::desk().config_hash());
    }

    #[test]
    fn cell_instances_override_radius_and_incline() {
        let cfg = tiny_grid_cfg();
        let instances = cell_instances(80.0, 0.035, &cfg);
        assert_eq!(instances.len(), cfg.ladder_set);
        for t in &instances {
            let l = t.ladder.as_ref().unwrap();
            assert_eq!(l.incline_rad, 80f64.to_radians());
            assert_eq!(l.rung_minor_radius_m, 0.035);
            assert_eq!(l.rung_major_radius_m, 0.035);
            assert!(l.num_rungs >= 2);
            assert!(t.rung_centers.len() == l.num_rungs);
        }
        // Same pool, different cell: geometry differs only in the overrides.
        let other = cell_instances(70.0, 0.035, &cfg);
        assert_eq!(other[0].ladder.as_ref().unwrap().length_m, instances[0].ladder.as_ref().unwrap().length_m);
        assert_ne!(other[0].rung_centers, instances[0].rung_centers);
    }

    #[test]
    fn null_policy_grid_times_out_everywhere_and_reruns_identically() {
        let cfg = tiny_grid_cfg();
        let grid = run_grid(&EvalPolicy::Null, &cfg).unwrap();
        assert_eq!(grid.cells.len(), 4);
        assert_eq!(grid.checkpoint_hash, 0);
        for c in &grid.cells {
            assert_eq!(c.n, cfg.agents_per_cell);
            assert_eq!(c.success, 0.0);
            assert_eq!(c.termination, 0.0);
            assert_eq!(c.timeout, 1.0);
            assert_eq!(c.mean_time_s, 0.0);
            assert!((c.success + c.termination + c.timeout - 1.0).abs() < 1e-9);
        }

        let again = run_grid(&EvalPolicy::Null, &cfg).unwrap();
        assert_eq!(grid, again);
        assert_eq!(grid.to_csv(), again.to_csv());

        let csv = grid.to_csv();
        assert!(csv.starts_with("incline_deg,radius_m,n,success,term,timeout,"));
        assert_eq!(csv.lines().count(), 5);
        let svg = grid.to_svg();
        assert!(svg.starts_with("<svg "));
        assert_eq!(svg.matches("<rect").count(), 4);
    }

    #[test]
    fn cell_results_do_not_depend_on_the_worker_count() {
        let cfg = tiny_grid_cfg();
        let wide = run_cell(&EvalPolicy::Null, 70.0, 0.02, &cfg);
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_cell(&EvalPolicy::Null, 70.0, 0.02, &cfg));
        assert_eq!(wide, serial);
    }

    #[test]
    fn checkpoint_roundtrip_restores_the_evaluated_parameters() {
        let dir = tempfile::tempdir().unwrap();

        let (arena, _policy, _critic) = teacher_arena(3);
        let path = dir.path().join("teacher.ckpt");
        Checkpoint::from_arena(&arena, Role::Teacher).save(&path).unwrap();
        let loaded = EvalPolicy::from_checkpoint(&path).unwrap();
        match &loaded {
            EvalPolicy::Teacher { arena: a, .. } => assert_eq!(a.w, arena.w),
            _ => panic!("teacher checkpoint must load as a teacher policy"),
        }

        let student = Student::quadruped(4);
        let spath = dir.path().join("student.ckpt");
        Checkpoint::from_arena(&student.arena, Role::Student).save(&spath).unwrap();
        let sloaded = EvalPolicy::from_checkpoint(&spath).unwrap();
        match &sloaded {
            EvalPolicy::Student(s) => assert_eq!(s.arena.w, student.arena.w),
            _ => panic!("student checkpoint must load as a student policy"),
        }
        assert_ne!(loaded.policy_hash(), sloaded.policy_hash());
    }

    #[test]
    fn trajectory_log_parses_and_self_rmse_is_zero() {
        let terrain = trivial_ladder();
        let env_cfg = quiet_env(2.0);
        let model = RobotModel::default();
        let (log, summary) = log_trajectory(&EvalPolicy::Null, &model, &env_cfg, &terrain, 1);
        let (log2, _) = log_trajectory(&EvalPolicy::Null, &model, &env_cfg, &terrain, 1);
        assert_eq!(log, log2);

        let pos = parse_log_positions(&log);
        assert_eq!(pos.len(), summary.steps);
        assert!(summary.steps >= 90, "a 2 s episode at 50 Hz logs ~100 steps");
        assert_eq!(rmse_positions(&pos, &pos), 0.0);

        // Standing far from the rungs: no contact window, zero climb speed.
        assert_eq!(summary.climb_duration_s, 0.0);
        assert_eq!(summary.mean_speed_mps, 0.0);
        assert!(!summary.reached);

        // Every data line carries the full column set.
        let cols = log.lines().nth(1).unwrap().split_whitespace().count();
        assert_eq!(cols, 4 + 8 + 4 + 8 + 4 + 1 + REWARD_NAMES.len());
    }

    #[test]
    fn rmse_matches_a_hand_computation() {
        let a = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 3.0)];
        let b = [Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0)];
        let want = (26.0f64 / 3.0).sqrt();
        assert!((rmse_positions(&a, &b) - want).abs() < 1e-12);
    }

    /// Flat ground with one capturable rung placed exactly at the resting
    /// front foot, so the hook pin engages on the first step.
    fn hook_test_setup() -> (RobotModel, EnvConfig, TerrainInstance) {
        let model = RobotModel::with_hook();
        let env_cfg = quiet_env(20.0);
        let tcfg = TerrainConfig::default();
        let mut terrain = generate_rough(0.0, &tcfg, 7, &mut rng::stream(7, 0));
        terrain.spawn_region =
            SpawnRegion { min: Vec2::new(0.0, 0.0), max: Vec2::new(0.0, 0.0) };

        let probe = LadderEnv::new(model.clone(), env_cfg.clone(), 7, 0);
        let mut probe = probe;
        probe.set_fixed_terrain(terrain.clone());
        let foot = probe.sim.kinematics_now().foot[0];

        terrain.ladder = Some(LadderSpec {
            present: true,
            length_m: 0.1,
            width_m: 1.0,
            spacing_m: 0.1,
            rung_minor_radius_m: 0.012,
            rung_major_radius_m: 0.012,
            incline_rad: std::f64::consts::FRAC_PI_4,
            num_rungs: 2,
            platform_offset_m: 0.0,
        });
        terrain.rung_centers = vec![foot, Vec2::new(50.0, 50.0)];
        (model, env_cfg, terrain)
    }

    #[test]
    fn pulling_an_engaged_hook_loads_and_then_breaks_the_pin() {
        let (model, env_cfg, terrain) = hook_test_setup();

        // Engagement sanity: the pocket starts on the rung center.
        let mut probe = LadderEnv::new(model.clone(), env_cfg.clone(), 7, 0);
        probe.set_fixed_terrain(terrain.clone());
        probe.step_targets(&[0.0; 8]);
        assert!(probe.sim.contact.hook_engaged[0], "rung at the foot must capture");

        // A moderate upward foot pull loads the pin without breaking it.
        let gentle = [Pull {
            start_s: 0.4,
            duration_s: 0.4,
            body: PullBody::Foot(0),
            force_n: Vec2::new(0.0, 150.0),
        }];
        let report =
            perturbation_test(&EvalPolicy::Null, &model, &env_cfg, &terrain, &gentle, 7, 100);
        assert!(report.pulls[0].tension_events >= 1, "pull must show pin tension");
        assert!(!report.pulls[0].disengaged, "150 N stays under the breakaway limit");
        assert!(report.pulls[0].recovered);
        assert!(report.force_trace.iter().any(|f| f[0] < 0.0));

        // A pull past the breakaway limit tears the hook off the rung.
        let harsh = [Pull {
            start_s: 0.4,
            duration_s: 0.3,
            body: PullBody::Foot(0),
            force_n: Vec2::new(0.0, 900.0),
        }];
        let report =
            perturbation_test(&EvalPolicy::Null, &model, &env_cfg, &terrain, &harsh, 7, 100);
        assert!(report.pulls[0].disengaged, "900 N must exceed the 500 N breakaway");
    }

    #[test]
    fn zero_force_schedule_leaves_the_rollout_untouched() {
        let (model, env_cfg, terrain) = hook_test_setup();
        let clean =
            perturbation_test(&EvalPolicy::Null, &model, &env_cfg, &terrain, &[], 7, 60);
        let zeroed = [Pull {
            start_s: 0.2,
            duration_s: 0.5,
            body: PullBody::Base,
            force_n: Vec2::ZERO,
        }];
        let shadow =
            perturbation_test(&EvalPolicy::Null, &model, &env_cfg, &terrain, &zeroed, 7, 60);
        assert_eq!(clean.force_trace, shadow.force_trace);
        assert_eq!(clean.reached, shadow.reached);
        assert_eq!(clean.terminated, shadow.terminated);
    }

    #[test]
    fn scripted_crawl_crosses_the_trivial_course() {
        let terrain = trivial_ladder();
        let env_cfg = quiet_env(18.0);
        let model = RobotModel::default();
        let policy = EvalPolicy::Scripted(walk_script(30));
        let set = run_set(&policy, &model, &env_cfg, &[terrain], 2, 0x0c11);
        assert_eq!(set.success, 1.0, "the reference crawl must reach the goal");
        assert!(set.mean_time_s > 0.0 && set.mean_time_s < 18.0);
    }
}
