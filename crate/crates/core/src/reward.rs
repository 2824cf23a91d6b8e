//! The twelve-term reward suite and the per-family constraint costs used by
//! the constrained policy update.
//!
//! Every term is computed exactly as the locomotion recipe prints it; the
//! twelve-joint sums collapse to the eight planar joints with coefficients
//! unchanged. All inputs arrive in the base frame where the formulas expect
//! it.

use crate::obs::GoalCommand;
use crate::robot::RobotModel;
use crate::sim::{ContactState, RobotState};

/// Speed above which forward progress stops paying off.
pub const OVERSPEED_MPS: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// The joint-effort row reads `0.2 q̈` with a bare acceleration; set to
    /// square it instead (the likely intended form).
    pub joints_qdd_squared: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { joints_qdd_squared: false }
    }
}

/// One scalar per reward row plus their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardBreakdown {
    pub position_tracking: f64,
    pub heading_tracking: f64,
    pub base_motion: f64,
    pub joints: f64,
    pub action_rate: f64,
    pub action_smoothness: f64,
    pub foot_slippage: f64,
    pub flat_orientation: f64,
    pub stand_still: f64,
    pub stand_still_contact: f64,
    pub collision: f64,
    pub base_collision: f64,
    pub total: f64,
}

pub const REWARD_NAMES: [&str; 12] = [
    "position_tracking",
    "heading_tracking",
    "base_motion",
    "joints",
    "action_rate",
    "action_smoothness",
    "foot_slippage",
    "flat_orientation",
    "stand_still",
    "stand_still_contact",
    "collision",
    "base_collision",
];

impl RewardBreakdown {
    pub fn terms(&self) -> [f64; 12] {
        [
            self.position_tracking,
            self.heading_tracking,
            self.base_motion,
            self.joints,
            self.action_rate,
            self.action_smoothness,
            self.foot_slippage,
            self.flat_orientation,
            self.stand_still,
            self.stand_still_contact,
            self.collision,
            self.base_collision,
        ]
    }
}

/// Evaluate all reward rows for one policy step.
pub fn compute_rewards(
    model: &RobotModel,
    state: &RobotState,
    contacts: &ContactState,
    goal: &GoalCommand,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let mut r = RewardBreakdown::default();
    let dg = goal.at_goal as u8 as f64;
    let df = goal.flat as u8 as f64;

    let vb = state.v_base_body3();
    let v2 = crate::math::Vec2::new(vb[0], vb[2]);
    let speed = v2.norm();
    let v_over = (speed - OVERSPEED_MPS).max(0.0);
    let progress = v2.dot(goal.dir) - v_over * v_over;
    r.position_tracking = 3.0 * ((1.0 - dg) * progress + 1.5 * dg);

    let herr = goal.heading_err;
    let dist2 = goal.p_goal.dot(goal.p_goal);
    r.heading_tracking = 0.5 * (-10.0 * herr * herr).exp() * (-4.0 * dist2).exp();

    let ang = state.ang_rates3();
    r.base_motion =
        0.2 * ((-vb[2] * vb[2]).exp() + (-0.5 * (ang[0] * ang[0] + ang[1] * ang[1])).exp());

    let mut joints = 0.0;
    for j in 0..8 {
        let qdd = if cfg.joints_qdd_squared {
            state.qdd[j] * state.qdd[j]
        } else {
            state.qdd[j]
        };
        joints += 0.01 * state.tau[j] * state.tau[j] + state.qd[j] * state.qd[j] + 0.2 * qdd;
    }
    r.joints = -0.001 * joints;

    let t = &state.target_hist;
    let mut rate = 0.0;
    let mut smooth = 0.0;
    for j in 0..8 {
        let d1 = t[0][j] - t[1][j];
        let d2 = t[2][j] - 2.0 * t[1][j] + t[0][j];
        rate += d1 * d1;
        smooth += d2 * d2;
    }
    r.action_rate = -0.01 * rate;
    r.action_smoothness = -0.01 * smooth;

    let mut slip = 0.0;
    for k in 0..4 {
        if contacts.foot_contact[k] {
            let discount = if contacts.foot_mu[k] < 0.5 { 1.0 - 0.8 } else { 1.0 };
            slip += contacts.foot_vel[k].norm() * discount;
        }
    }
    r.foot_slippage = -0.25 * slip;

    let g = state.gravity_in_base();
    r.flat_orientation = -df * (g[0] * g[0] + g[1] * g[1]) * (1.0 + 8.0 * dg);

    let mut hold = 0.0;
    for j in 0..8 {
        hold += (t[0][j] - model.default_pose[j]).abs();
    }
    r.stand_still = -0.5 * df * dg * hold;

    let airborne = contacts.foot_contact.iter().filter(|c| !**c).count() as f64;
    r.stand_still_contact = -0.5 * dg * airborne;

    let limb_hits = contacts.thigh_contact.iter().chain(contacts.shank_contact.iter()).filter(|c| **c).count();
    r.collision = -0.1 * limb_hits as f64;

    r.base_collision = -(contacts.base_contact as u8 as f64);

    r.total = r.terms().iter().sum();
    r
}

/// Hinge distances past the joint position, velocity and torque limits,
/// summed per family. Zero exactly on the feasible box; the boundary is
/// inclusive.
pub fn constraint_costs(model: &RobotModel, state: &RobotState) -> [f64; 3] {
    let mut c = [0.0; 3];
    for j in 0..8 {
        c[0] += (state.q[j].abs() - model.joint_limit_rad).max(0.0);
        c[1] += (state.qd[j].abs() - model.joint_vel_limit_rad_s).max(0.0);
        c[2] += (state.tau[j].abs() - model.torque_limit_nm).max(0.0);
    }
    c
}

pub const CONSTRAINT_NAMES: [&str; 3] = ["joint_position", "joint_velocity", "joint_torque"];
