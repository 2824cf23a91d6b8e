//! Observation assembly: goal command, height scan, IMU history, privileged
//! state, and the teacher/student vectors with the measurement-noise layer.
//!
//! Layouts are fixed here and documented in `docs/obs_layout.md`; the
//! checkpoint header carries a hash of the dimensions so trained policies
//! refuse mismatched observation code.

use crate::math::{wrap_angle, Vec2};
use crate::rng::Rng;
use crate::sim::{ContactState, RandomizationRecord, RobotState, StepInfo};
use crate::terrain::{GoalPose, TerrainInstance};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub const PROPRIO_DIM: usize = 64;
pub const IMU_DIM: usize = 48;
pub const IMU_SAMPLES: usize = 8;
pub const SCAN_COLS: usize = 20;
pub const SCAN_ROWS: usize = 10;
pub const SCAN_DIM: usize = SCAN_COLS * SCAN_ROWS;
pub const SCAN_CELL_M: f64 = 0.1;
pub const LADDER_STATE_DIM: usize = 6;
pub const LADDER_POSE_DIM: usize = 3;
pub const PRIV_DIM: usize = 73;
pub const TEACHER_OBS_DIM: usize = PROPRIO_DIM + IMU_DIM + SCAN_DIM + PRIV_DIM;
pub const STUDENT_OBS_DIM: usize = PROPRIO_DIM + IMU_DIM + LADDER_STATE_DIM + LADDER_POSE_DIM;

/// Distance to the goal below which the robot is commanded to stand still.
pub const GOAL_RADIUS_M: f64 = 0.15;
/// Peak-to-peak height bound that still counts as flat ground.
pub const FLAT_SCAN_P2P_M: f64 = 0.02;

/// Goal expressed in the base frame plus the two mode flags every consumer
/// shares: `at_goal` gates the standing behaviour, `flat` marks level ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalCommand {
    /// Base-to-goal vector in the base frame.
    pub p_goal: Vec2,
    /// Unit direction of `p_goal`; zero when already at the goal point.
    pub dir: Vec2,
    /// Wrapped heading error: goal heading minus base yaw.
    pub heading_err: f64,
    pub at_goal: bool,
    pub flat: bool,
}

impl GoalCommand {
    pub fn compute(state: &RobotState, goal: &GoalPose, flat: bool) -> GoalCommand {
        let delta = goal.position - state.base_pos;
        let p_goal = delta.rotate_inv(state.base_pitch);
        let n = p_goal.norm();
        let dir = if n > 1e-12 { p_goal * (1.0 / n) } else { Vec2::ZERO };
        GoalCommand {
            p_goal,
            dir,
            heading_err: wrap_angle(goal.heading - state.base_yaw()),
            at_goal: n < GOAL_RADIUS_M,
            flat,
        }
    }
}

/// Terrain heights around the base: 20 cells forward/backward, replicated
/// over 10 lateral rows because the plane has no lateral variation. Values
/// are relative to the base height.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightScan {
    pub values: Vec<f64>,
}

impl HeightScan {
    pub fn build(terrain: &TerrainInstance, state: &RobotState) -> HeightScan {
        let mut row = [0.0; SCAN_COLS];
        for (i, v) in row.iter_mut().enumerate() {
            let dx = (i as f64 - (SCAN_COLS as f64 - 1.0) / 2.0) * SCAN_CELL_M;
            *v = terrain.height_at(state.base_pos.x + dx) - state.base_pos.z;
        }
        let mut values = Vec::with_capacity(SCAN_DIM);
        for _ in 0..SCAN_ROWS {
            values.extend_from_slice(&row);
        }
        HeightScan { values }
    }

    /// Flat-ground flag: peak-to-peak height within 0.5 m of the base stays
    /// under the flatness bound.
    pub fn is_flat(&self) -> bool {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..SCAN_COLS {
            let dx = (i as f64 - (SCAN_COLS as f64 - 1.0) / 2.0) * SCAN_CELL_M;
            if dx.abs() <= 0.5 + 1e-9 {
                lo = lo.min(self.values[i]);
                hi = hi.max(self.values[i]);
            }
        }
        hi - lo < FLAT_SCAN_P2P_M
    }
}

/// Eight 400 Hz IMU readings spanning the last policy step, oldest first.
/// Each sample is specific force in the base frame followed by angular rate.
pub fn imu_history(info: &StepInfo) -> [f64; IMU_DIM] {
    let mut out = [0.0; IMU_DIM];
    let n = info.samples.len().min(IMU_SAMPLES);
    let skip = info.samples.len() - n;
    for (slot, s) in info.samples[skip..].iter().enumerate() {
        // Accelerometers read specific force: kinematic acceleration minus
        // gravity, expressed in the sensor frame. Free fall reads zero.
        let f_world = s.base_acc_world - Vec2::new(0.0, -crate::sim::dynamics::GRAVITY);
        let f = f_world.rotate_inv(s.pitch);
        let base = (IMU_SAMPLES - n + slot) * 6;
        out[base] = f.x;
        out[base + 2] = f.z;
        out[base + 4] = s.pitch_rate;
    }
    out
}

/// Joint position/velocity history over the last three policy steps, newest
/// first, matching the target history kept by the simulator. Starts zeroed;
/// `warm_steps` says how many real samples have been pushed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProprioHistory {
    pub q: [[f64; 8]; 3],
    pub qd: [[f64; 8]; 3],
    pub warm_steps: u32,
}

impl Default for ProprioHistory {
    fn default() -> Self {
        ProprioHistory { q: [[0.0; 8]; 3], qd: [[0.0; 8]; 3], warm_steps: 0 }
    }
}

impl ProprioHistory {
    pub fn push(&mut self, q: &[f64; 8], qd: &[f64; 8]) {
        self.q[2] = self.q[1];
        self.q[1] = self.q[0];
        self.q[0] = *q;
        self.qd[2] = self.qd[1];
        self.qd[1] = self.qd[0];
        self.qd[0] = *qd;
        self.warm_steps = self.warm_steps.saturating_add(1);
    }

    /// True once every lag slot holds a real sample.
    pub fn warm(&self) -> bool {
        self.warm_steps >= 3
    }
}

/// Proprioceptive vector layout (64):
/// `[goal dir (3) | goal heading (1) | gravity dir (3) | q (8) |`
/// `q̇ at lags 0/-0.02/-0.04 s (24) | target - q at the same lags (24) |`
/// `standing flag (1)]`.
pub fn build_proprio(
    state: &RobotState,
    goal: &GoalCommand,
    hist: &ProprioHistory,
) -> [f64; PROPRIO_DIM] {
    let mut o = [0.0; PROPRIO_DIM];
    o[0] = goal.dir.x;
    o[2] = goal.dir.z;
    o[3] = goal.heading_err;
    let g = state.gravity_in_base();
    o[4] = g[0];
    o[5] = g[1];
    o[6] = g[2];
    o[7..15].copy_from_slice(&state.q);
    for lag in 0..3 {
        o[15 + 8 * lag..23 + 8 * lag].copy_from_slice(&hist.qd[lag]);
        for j in 0..8 {
            o[39 + 8 * lag + j] = state.target_hist[lag][j] - hist.q[lag][j];
        }
    }
    o[63] = goal.at_goal as u8 as f64;
    o
}

/// Ladder descriptor `[present | length | spacing | incline | rung major |`
/// `rung minor]`; all zero when the terrain has no ladder.
pub fn ladder_state(terrain: &TerrainInstance) -> [f64; LADDER_STATE_DIM] {
    match &terrain.ladder {
        Some(l) if l.present => [
            1.0,
            l.length_m,
            l.spacing_m,
            l.incline_rad,
            l.rung_major_radius_m,
            l.rung_minor_radius_m,
        ],
        _ => [0.0; LADDER_STATE_DIM],
    }
}

/// Bottom-rung position and relative yaw in the base frame; zeros without a
/// ladder.
pub fn ladder_pose(terrain: &TerrainInstance, state: &RobotState) -> [f64; LADDER_POSE_DIM] {
    let present = matches!(&terrain.ladder, Some(l) if l.present);
    match terrain.rung_centers.first() {
        Some(c) if present => {
            let p = (*c - state.base_pos).rotate_inv(state.base_pitch);
            [p.x, p.z, wrap_angle(0.0 - state.base_yaw())]
        }
        _ => [0.0; LADDER_POSE_DIM],
    }
}

/// Privileged vector layout (73):
/// `[foot contact (4) | thigh contact (4) | shank contact (4) | base contact`
/// `(1) | foot forces base frame (12) | foot friction (4) | external base`
/// `force (3) | external base torque (3) | external foot forces (12) | added`
/// `mass (1) | foot airtime (4) | foot positions base frame (12) | ladder`
/// `state (6) | ladder pose (3)]`.
pub fn build_privileged(
    state: &RobotState,
    contacts: &ContactState,
    terrain: &TerrainInstance,
    rand: &RandomizationRecord,
    foot_pos_world: &[Vec2; 4],
) -> [f64; PRIV_DIM] {
    let mut o = [0.0; PRIV_DIM];
    for l in 0..4 {
        o[l] = contacts.foot_contact[l] as u8 as f64;
        o[4 + l] = contacts.thigh_contact[l] as u8 as f64;
        o[8 + l] = contacts.shank_contact[l] as u8 as f64;
    }
    o[12] = contacts.base_contact as u8 as f64;
    for l in 0..4 {
        let f = contacts.foot_force[l].rotate_inv(state.base_pitch);
        o[13 + 3 * l] = f.x;
        o[15 + 3 * l] = f.z;
        o[25 + l] = rand.foot_mu[l];
    }
    let ef = rand.ext_force_n.rotate_inv(state.base_pitch);
    o[29] = ef.x;
    o[31] = ef.z;
    o[33] = rand.ext_torque_nm;
    for l in 0..4 {
        let f = rand.ext_foot_force_n[l].rotate_inv(state.base_pitch);
        o[35 + 3 * l] = f.x;
        o[37 + 3 * l] = f.z;
    }
    o[47] = rand.added_mass_kg;
    for l in 0..4 {
        o[48 + l] = contacts.airtime_s[l];
        let p = (foot_pos_world[l] - state.base_pos).rotate_inv(state.base_pitch);
        o[52 + 3 * l] = p.x;
        o[54 + 3 * l] = p.z;
    }
    o[64..70].copy_from_slice(&ladder_state(terrain));
    o[70..73].copy_from_slice(&ladder_pose(terrain, state));
    o
}

/// Teacher input: `[proprio | IMU history | height scan | privileged]`.
pub fn build_teacher_obs(
    proprio: &[f64; PROPRIO_DIM],
    imu: &[f64; IMU_DIM],
    scan: &HeightScan,
    privileged: &[f64; PRIV_DIM],
) -> Vec<f64> {
    let mut o = Vec::with_capacity(TEACHER_OBS_DIM);
    o.extend_from_slice(proprio);
    o.extend_from_slice(imu);
    o.extend_from_slice(&scan.values);
    o.extend_from_slice(privileged);
    o
}

/// Student input: `[proprio | IMU history | ladder state | ladder pose]`,
/// the pieces the noise layer perturbs.
pub fn build_student_obs(
    proprio: &[f64; PROPRIO_DIM],
    imu: &[f64; IMU_DIM],
    ladder_state: &[f64; LADDER_STATE_DIM],
    ladder_pose: &[f64; LADDER_POSE_DIM],
) -> Vec<f64> {
    let mut o = Vec::with_capacity(STUDENT_OBS_DIM);
    o.extend_from_slice(proprio);
    o.extend_from_slice(imu);
    o.extend_from_slice(ladder_state);
    o.extend_from_slice(ladder_pose);
    o
}

/// Per-group measurement noise scales. Joint and IMU channels get additive
/// uniform noise in ±scale; the ladder pose gets Gaussian noise of the given
/// standard deviation; ladder scalars get multiplicative uniform noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub q_rad: f64,
    pub qd_rad_s: f64,
    pub imu_acc_mps2: f64,
    pub imu_gyro_rad_s: f64,
    pub ladder_pose_m: f64,
    pub ladder_pose_rad: f64,
    pub ladder_frac: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            q_rad: 0.01,
            qd_rad_s: 1.5,
            imu_acc_mps2: 0.5,
            imu_gyro_rad_s: 0.1,
            ladder_pose_m: 0.02,
            ladder_pose_rad: 0.05,
            ladder_frac: 0.05,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel {
            q_rad: 0.0,
            qd_rad_s: 0.0,
            imu_acc_mps2: 0.0,
            imu_gyro_rad_s: 0.0,
            ladder_pose_m: 0.0,
            ladder_pose_rad: 0.0,
            ladder_frac: 0.0,
        }
    }
}

fn uniform(rng: &mut Rng, s: f64) -> f64 {
    if s > 0.0 {
        rng.gen_range(-s..=s)
    } else {
        0.0
    }
}

fn gaussian(rng: &mut Rng, s: f64) -> f64 {
    if s > 0.0 {
        Normal::new(0.0, s).unwrap().sample(rng)
    } else {
        0.0
    }
}

/// Apply the noise model in place to a student observation. Layout is
/// preserved; goal, gravity and flag channels stay clean, matching what the
/// state estimator provides reliably on hardware.
pub fn add_noise(obs: &mut [f64], noise: &NoiseModel, rng: &mut Rng) {
    assert_eq!(obs.len(), STUDENT_OBS_DIM, "noise layer expects the student layout");
    // Joint positions and the position-derived tracking errors.
    for v in &mut obs[7..15] {
        *v += uniform(rng, noise.q_rad);
    }
    for v in &mut obs[39..63] {
        *v += uniform(rng, noise.q_rad);
    }
    for v in &mut obs[15..39] {
        *v += uniform(rng, noise.qd_rad_s);
    }
    for s in 0..IMU_SAMPLES {
        let base = PROPRIO_DIM + 6 * s;
        for v in &mut obs[base..base + 3] {
            *v += uniform(rng, noise.imu_acc_mps2);
        }
        for v in &mut obs[base + 3..base + 6] {
            *v += uniform(rng, noise.imu_gyro_rad_s);
        }
    }
    let ls = PROPRIO_DIM + IMU_DIM;
    // The presence flag stays binary; scalar geometry fields wobble
    // proportionally to mimic irregular real ladders.
    for v in &mut obs[ls + 1..ls + LADDER_STATE_DIM] {
        *v *= 1.0 + uniform(rng, noise.ladder_frac);
    }
    let lp = ls + LADDER_STATE_DIM;
    obs[lp] += gaussian(rng, noise.ladder_pose_m);
    obs[lp + 1] += gaussian(rng, noise.ladder_pose_m);
    obs[lp + 2] += gaussian(rng, noise.ladder_pose_rad);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::robot::RobotModel;
    use crate::sim::{Sim, SimParams, SubstepSample};
    use crate::terrain::{HeightField, SpawnRegion, TerrainInstance, TerrainKind};
    use proptest::prelude::*;

    fn flat_terrain() -> TerrainInstance {
        TerrainInstance {
            kind: TerrainKind::Flat,
            ladder: None,
            rung_centers: Vec::new(),
            platform_height_m: 0.0,
            rough_cells: HeightField::flat(-50.0, 0.1, 1000, 0.0),
            spawn_region: SpawnRegion { min: Vec2::new(-0.1, 0.0), max: Vec2::new(0.1, 0.0) },
            goal_pose: GoalPose { position: Vec2::new(3.0, 0.0), heading: 0.0 },
            level: 0,
            seed: 0,
        }
    }

    fn state_at(x: f64, z: f64) -> RobotState {
        RobotState::at_pose(&RobotModel::default(), Vec2::new(x, z), 0.0)
    }

    #[test]
    fn goal_flags_follow_the_shared_threshold() {
        let state = state_at(0.0, 0.5);
        let near = GoalPose { position: Vec2::new(0.1, 0.5), heading: 0.0 };
        let far = GoalPose { position: Vec2::new(0.2, 0.5), heading: 0.0 };
        let g_near = GoalCommand::compute(&state, &near, true);
        let g_far = GoalCommand::compute(&state, &far, true);
        assert!(g_near.at_goal);
        assert!(!g_far.at_goal);
        let p_near = build_proprio(&state, &g_near, &ProprioHistory::default());
        let p_far = build_proprio(&state, &g_far, &ProprioHistory::default());
        assert_eq!(p_near[63], 1.0);
        assert_eq!(p_far[63], 0.0);
    }

    #[test]
    fn goal_direction_is_unit_and_rotates_with_pitch() {
        let model = RobotModel::default();
        let mut state = RobotState::at_pose(&model, Vec2::new(0.0, 0.5), 0.3);
        state.q = [0.0; 8];
        let goal = GoalPose { position: Vec2::new(2.0, 0.5), heading: 0.0 };
        let g = GoalCommand::compute(&state, &goal, true);
        assert!((g.dir.norm() - 1.0).abs() < 1e-12);
        // World +x seen from a base pitched by 0.3.
        let expect = Vec2::new(1.0, 0.0).rotate_inv(0.3);
        assert!((g.dir - expect).norm() < 1e-12);
        assert!((g.p_goal.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_state_proprio_is_mostly_zero() {
        let model = RobotModel::default();
        let mut state = RobotState::at_pose(&model, Vec2::ZERO, 0.0);
        state.q = [0.0; 8];
        state.target_hist = [[0.0; 8]; 3];
        let goal = GoalPose { position: Vec2::ZERO, heading: 0.0 };
        let g = GoalCommand::compute(&state, &goal, false);
        let o = build_proprio(&state, &g, &ProprioHistory::default());
        assert_eq!(&o[4..7], &[0.0, 0.0, -1.0], "gravity reads straight down");
        assert_eq!(o[63], 1.0, "zero distance is at the goal");
        for (i, v) in o.iter().enumerate() {
            if !(4..7).contains(&i) && i != 63 {
                assert_eq!(*v, 0.0, "index {i} expected zero");
            }
        }
    }

    #[test]
    fn scan_is_flat_on_flat_ground_only() {
        let terrain = flat_terrain();
        let state = state_at(0.0, 0.63);
        let scan = HeightScan::build(&terrain, &state);
        assert_eq!(scan.values.len(), SCAN_DIM);
        assert!(scan.is_flat());
        // A 5 cm step 0.3 m ahead of the base breaks flatness.
        let mut stepped = flat_terrain();
        for (i, h) in stepped.rough_cells.heights.iter_mut().enumerate() {
            if -50.0 + 0.1 * i as f64 > 0.3 {
                *h = 0.05;
            }
        }
        let scan2 = HeightScan::build(&stepped, &state);
        assert!(!scan2.is_flat());
        // The same step 2 m ahead is outside the flatness window.
        let mut far = flat_terrain();
        for (i, h) in far.rough_cells.heights.iter_mut().enumerate() {
            if -50.0 + 0.1 * i as f64 > 2.0 {
                *h = 0.05;
            }
        }
        assert!(HeightScan::build(&far, &state).is_flat());
    }

    #[test]
    fn scan_heights_are_relative_to_the_base() {
        let terrain = flat_terrain();
        let state = state_at(0.0, 0.63);
        let scan = HeightScan::build(&terrain, &state);
        for v in &scan.values {
            assert!((v - (-0.63)).abs() < 1e-12);
        }
    }

    #[test]
    fn imu_reads_zero_in_free_fall_and_g_at_rest() {
        let free = StepInfo {
            samples: vec![
                SubstepSample {
                    base_acc_world: Vec2::new(0.0, -crate::sim::dynamics::GRAVITY),
                    pitch: 0.2,
                    pitch_rate: 0.0,
                };
                8
            ],
        };
        for v in imu_history(&free) {
            assert!(v.abs() < 1e-12);
        }
        let rest = StepInfo {
            samples: vec![
                SubstepSample { base_acc_world: Vec2::ZERO, pitch: 0.0, pitch_rate: 0.3 };
                8
            ],
        };
        let o = imu_history(&rest);
        for s in 0..IMU_SAMPLES {
            assert!((o[6 * s + 2] - crate::sim::dynamics::GRAVITY).abs() < 1e-12);
            assert_eq!(o[6 * s + 4], 0.3);
        }
    }

    #[test]
    fn imu_history_pads_short_steps_at_the_front() {
        let info = StepInfo {
            samples: vec![
                SubstepSample { base_acc_world: Vec2::ZERO, pitch: 0.0, pitch_rate: 1.0 };
                3
            ],
        };
        let o = imu_history(&info);
        for s in 0..5 {
            assert_eq!(o[6 * s + 4], 0.0);
        }
        for s in 5..8 {
            assert_eq!(o[6 * s + 4], 1.0);
        }
    }

    #[test]
    fn ladder_pose_is_the_bottom_rung_in_base_frame() {
        let mut terrain = flat_terrain();
        terrain.ladder = Some(crate::terrain::LadderSpec {
            present: true,
            length_m: 2.0,
            width_m: 0.5,
            spacing_m: 0.3,
            rung_minor_radius_m: 0.02,
            rung_major_radius_m: 0.02,
            incline_rad: 1.2,
            num_rungs: 7,
            platform_offset_m: 0.0,
        });
        let state = state_at(0.0, 0.5);

        terrain.rung_centers = vec![Vec2::new(0.0, 0.5), Vec2::new(0.2, 0.9)];
        let p = ladder_pose(&terrain, &state);
        assert_eq!(p, [0.0, 0.0, 0.0], "base on the bottom rung");

        terrain.rung_centers = vec![Vec2::new(1.0, 0.5)];
        let p = ladder_pose(&terrain, &state);
        assert_eq!(p, [1.0, 0.0, 0.0], "rung one meter ahead");

        // Pitched base sees the same rung rotated into its frame.
        let mut pitched = state.clone();
        pitched.base_pitch = std::f64::consts::FRAC_PI_2;
        let p = ladder_pose(&terrain, &pitched);
        assert!((p[0] - 0.0).abs() < 1e-12);
        assert!((p[1] - -1.0).abs() < 1e-12);
    }

    #[test]
    fn rough_terrain_zeroes_the_ladder_channels() {
        let mut terrain = flat_terrain();
        terrain.kind = TerrainKind::Rough;
        assert_eq!(ladder_state(&terrain), [0.0; LADDER_STATE_DIM]);
        assert_eq!(ladder_pose(&terrain, &state_at(0.0, 0.5)), [0.0; LADDER_POSE_DIM]);
    }

    #[test]
    fn privileged_vector_carries_randomization_and_geometry() {
        let model = RobotModel::default();
        let terrain = flat_terrain();
        let sim = Sim::new(model.clone(), SimParams::default(), terrain.clone());
        let mut rand = RandomizationRecord::none();
        rand.added_mass_kg = 1.25;
        rand.ext_force_n = Vec2::new(3.0, -1.0);
        rand.foot_mu = [0.3, 0.4, 0.5, 0.6];
        let kin = sim.kinematics_now();
        let o = build_privileged(&sim.state, &sim.contact, &terrain, &rand, &kin.foot);
        assert_eq!(o.len(), PRIV_DIM);
        assert_eq!(o[47], 1.25);
        assert_eq!(&o[25..29], &[0.3, 0.4, 0.5, 0.6]);
        assert_eq!(o[29], 3.0, "zero pitch keeps world forces unchanged");
        assert_eq!(o[31], -1.0);
        // Foot positions must sit below and around the base.
        for l in 0..4 {
            assert!(o[54 + 3 * l] < 0.0, "foot {l} below the base");
        }
        assert_eq!(&o[64..70], &[0.0; 6]);
    }

    #[test]
    fn observation_dimensions_add_up() {
        assert_eq!(TEACHER_OBS_DIM, 385);
        assert_eq!(STUDENT_OBS_DIM, 121);
        let terrain = flat_terrain();
        let state = state_at(0.0, 0.63);
        let goal = GoalCommand::compute(&state, &terrain.goal_pose, true);
        let scan = HeightScan::build(&terrain, &state);
        let proprio = build_proprio(&state, &goal, &ProprioHistory::default());
        let imu = imu_history(&StepInfo::default());
        let privileged = build_privileged(
            &state,
            &ContactState::default(),
            &terrain,
            &RandomizationRecord::none(),
            &[Vec2::ZERO; 4],
        );
        assert_eq!(build_teacher_obs(&proprio, &imu, &scan, &privileged).len(), TEACHER_OBS_DIM);
        let st =
            build_student_obs(&proprio, &imu, &ladder_state(&terrain), &ladder_pose(&terrain, &state));
        assert_eq!(st.len(), STUDENT_OBS_DIM);
    }

    #[test]
    fn zero_noise_is_the_identity() {
        let mut r = rng::stream(21, 0);
        let mut obs: Vec<f64> = (0..STUDENT_OBS_DIM).map(|i| i as f64 * 0.01).collect();
        let clean = obs.clone();
        add_noise(&mut obs, &NoiseModel::zero(), &mut r);
        assert_eq!(obs, clean);
    }

    #[test]
    fn same_seed_gives_identical_noise() {
        let noise = NoiseModel::default();
        let mut a: Vec<f64> = vec![0.5; STUDENT_OBS_DIM];
        let mut b = a.clone();
        add_noise(&mut a, &noise, &mut rng::stream(33, 7));
        add_noise(&mut b, &noise, &mut rng::stream(33, 7));
        assert_eq!(a, b);
        assert_eq!(a.len(), STUDENT_OBS_DIM);
    }

    #[test]
    fn ladder_pose_noise_std_matches_the_scale() {
        let noise = NoiseModel::default();
        let mut r = rng::stream(34, 0);
        let mut samples = Vec::with_capacity(100_000);
        let idx = PROPRIO_DIM + IMU_DIM + LADDER_STATE_DIM;
        for _ in 0..100_000 {
            let mut obs = vec![0.0; STUDENT_OBS_DIM];
            add_noise(&mut obs, &noise, &mut r);
            samples.push(obs[idx]);
        }
        let sd = crate::math::std_dev(&samples);
        assert!(
            (sd - noise.ladder_pose_m).abs() < 0.05 * noise.ladder_pose_m,
            "std {sd} vs scale {}",
            noise.ladder_pose_m
        );
    }

    #[test]
    fn noise_respects_group_bounds() {
        let noise = NoiseModel::default();
        let mut r = rng::stream(35, 0);
        for _ in 0..200 {
            let mut obs = vec![1.0; STUDENT_OBS_DIM];
            add_noise(&mut obs, &noise, &mut r);
            for v in &obs[7..15] {
                assert!((v - 1.0).abs() <= noise.q_rad + 1e-12);
            }
            for v in &obs[15..39] {
                assert!((v - 1.0).abs() <= noise.qd_rad_s + 1e-12);
            }
            // Multiplicative ladder scalars stay within the fraction.
            let ls = PROPRIO_DIM + IMU_DIM;
            assert_eq!(obs[ls], 1.0, "presence flag untouched");
            for v in &obs[ls + 1..ls + LADDER_STATE_DIM] {
                assert!((v - 1.0).abs() <= noise.ladder_frac + 1e-12);
            }
            // Goal, gravity and flag channels stay clean.
            for i in [0usize, 1, 2, 3, 4, 5, 6, 63] {
                assert_eq!(obs[i], 1.0, "index {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn standing_flag_always_agrees_with_the_goal_flag(
            bx in -5.0f64..5.0, bz in -1.0f64..3.0, gx in -5.0f64..5.0, gz in -1.0f64..3.0,
            pitch in -1.5f64..1.5,
        ) {
            let model = RobotModel::default();
            let state = RobotState::at_pose(&model, Vec2::new(bx, bz), pitch);
            let goal = GoalPose { position: Vec2::new(gx, gz), heading: 0.0 };
            let g = GoalCommand::compute(&state, &goal, true);
            let o = build_proprio(&state, &g, &ProprioHistory::default());
            prop_assert_eq!(o[63] == 1.0, g.at_goal);
            prop_assert_eq!(g.at_goal, (Vec2::new(gx, gz) - Vec2::new(bx, bz)).norm() < GOAL_RADIUS_M);
        }

        #[test]
        fn noise_preserves_layout_untouched_lengths(seed in 0u64..1000) {
            let mut obs = vec![0.25; STUDENT_OBS_DIM];
            add_noise(&mut obs, &NoiseModel::default(), &mut rng::stream(seed, 1));
            prop_assert_eq!(obs.len(), STUDENT_OBS_DIM);
            prop_assert!(obs.iter().all(|v| v.is_finite()));
        }
    }
}
