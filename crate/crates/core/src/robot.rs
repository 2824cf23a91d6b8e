//! Robot description: link geometry and masses, joint limits, PD gains, end
//! effector selection, and disturbance ranges.
//!
//! The planar reduction keeps 8 actuated joints (hip pitch + knee per leg).
//! Left and right legs of a pair share the sagittal plane but contact rungs
//! independently, since rungs span the full ladder width.

use crate::math::Vec2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RobotError {
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
}

/// Leg order fixed everywhere: joint index = 2*leg + (0 hip, 1 knee).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    LeftFront = 0,
    RightFront = 1,
    LeftHind = 2,
    RightHind = 3,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::LeftFront, Leg::RightFront, Leg::LeftHind, Leg::RightHind];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::LeftFront | Leg::RightFront)
    }

    pub fn hip_joint(self) -> usize {
        2 * self.index()
    }

    pub fn knee_joint(self) -> usize {
        2 * self.index() + 1
    }
}

/// Hook end effector abstracted as a pocket that can capture rungs thinner
/// than its opening. While captured the contact is bilateral (transmits
/// tension) until the pocket moves out through the aperture or the tension
/// limit is exceeded.
#[derive(Debug, Clone, PartialEq)]
pub struct HookModel {
    pub opening_radius_m: f64,
    /// Pocket center in the ankle frame (x along base forward, z toward the
    /// knee when the leg hangs straight).
    pub pocket_center_offset: Vec2,
    /// Capture distance between pocket center and rung center.
    pub engage_tolerance_m: f64,
    /// Escape cone half-angle of the concave pocket around the aperture
    /// direction.
    pub aperture_half_angle_rad: f64,
    /// Aperture direction in the ankle frame; +z points from foot toward
    /// knee.
    pub opening_dir_local: Vec2,
    /// Pin tension above which the hook is torn off the rung.
    pub breakaway_tension_n: f64,
}

impl Default for HookModel {
    fn default() -> Self {
        HookModel {
            opening_radius_m: 0.0275,
            pocket_center_offset: Vec2::ZERO,
            engage_tolerance_m: 0.02,
            aperture_half_angle_rad: 60f64.to_radians(),
            opening_dir_local: Vec2::new(0.0, 1.0),
            breakaway_tension_n: 500.0,
        }
    }
}

impl HookModel {
    pub fn validate(&self) -> Result<(), RobotError> {
        if self.opening_radius_m <= 0.0 {
            return Err(RobotError::InvalidModel(format!(
                "hook opening_radius = {} violates opening_radius > 0",
                self.opening_radius_m
            )));
        }
        let half = self.aperture_half_angle_rad;
        if !(half > 0.0 && half <= std::f64::consts::FRAC_PI_2) {
            return Err(RobotError::InvalidModel(format!(
                "aperture_half_angle = {half} rad violates 0 < angle <= pi/2"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EndEffector {
    Ball,
    Hook(HookModel),
}

impl EndEffector {
    pub fn is_hook(&self) -> bool {
        matches!(self, EndEffector::Hook(_))
    }
}

/// Randomization ranges and push disturbances. A zero standard deviation or
/// zero-width range disables the corresponding effect.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceConfig {
    /// Persistent external base force magnitude bound, sampled per episode.
    pub ext_force_max_n: f64,
    pub ext_torque_max_nm: f64,
    /// Base-velocity offset pushes: standard deviation per axis and period.
    pub push_std_mps: f64,
    pub push_period_s: f64,
    pub base_mass_range_kg: (f64, f64),
    pub friction_range: (f64, f64),
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        DisturbanceConfig {
            ext_force_max_n: 30.0,
            ext_torque_max_nm: 10.0,
            push_std_mps: 0.5,
            push_period_s: 5.0,
            base_mass_range_kg: (-5.0, 5.0),
            friction_range: (0.3, 1.0),
        }
    }
}

impl DisturbanceConfig {
    /// Everything off; used for passive physics checks and clean rollouts.
    pub fn none() -> Self {
        DisturbanceConfig {
            ext_force_max_n: 0.0,
            ext_torque_max_nm: 0.0,
            push_std_mps: 0.0,
            push_period_s: 5.0,
            base_mass_range_kg: (0.0, 0.0),
            friction_range: (0.6, 0.6),
        }
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        if self.ext_force_max_n < 0.0
            || self.ext_torque_max_nm < 0.0
            || self.push_std_mps < 0.0
            || self.push_period_s <= 0.0
        {
            return Err(RobotError::InvalidModel(
                "disturbance magnitudes must be non-negative, push period positive".into(),
            ));
        }
        if self.base_mass_range_kg.0 > self.base_mass_range_kg.1
            || self.friction_range.0 > self.friction_range.1
            || self.friction_range.0 < 0.0
        {
            return Err(RobotError::InvalidModel("disturbance ranges must be ordered".into()));
        }
        Ok(())
    }
}

/// Planar quadruped: trunk plus thigh and shank per leg, point feet.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub trunk_length_m: f64,
    pub trunk_mass_kg: f64,
    pub trunk_inertia: f64,
    /// Trunk collision capsule radius (half-height of the body box).
    pub trunk_radius_m: f64,
    pub thigh_length_m: f64,
    pub thigh_mass_kg: f64,
    pub thigh_inertia: f64,
    pub shank_length_m: f64,
    pub shank_mass_kg: f64,
    pub shank_inertia: f64,
    pub foot_radius_m: f64,
    pub link_radius_m: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit_nm: f64,
    pub joint_limit_rad: f64,
    pub joint_vel_limit_rad_s: f64,
    /// Nominal standing pose q_0, the anchor for action squashing and the
    /// stand-still reward.
    pub default_pose: [f64; 8],
    pub end_effector: EndEffector,
}

fn rod_inertia(mass: f64, length: f64) -> f64 {
    mass * length * length / 12.0
}

impl Default for RobotModel {
    fn default() -> Self {
        let front = [0.4, -0.8];
        let hind = [-0.4, 0.8];
        RobotModel {
            trunk_length_m: 0.6,
            trunk_mass_kg: 25.0,
            trunk_inertia: rod_inertia(25.0, 0.6),
            trunk_radius_m: 0.1,
            thigh_length_m: 0.3,
            thigh_mass_kg: 2.5,
            thigh_inertia: rod_inertia(2.5, 0.3),
            shank_length_m: 0.3,
            shank_mass_kg: 1.5,
            shank_inertia: rod_inertia(1.5, 0.3),
            foot_radius_m: 0.03,
            link_radius_m: 0.02,
            kp: 80.0,
            kd: 2.0,
            torque_limit_nm: 80.0,
            joint_limit_rad: 2.6,
            joint_vel_limit_rad_s: 15.0,
            default_pose: [front[0], front[1], front[0], front[1], hind[0], hind[1], hind[0], hind[1]],
            end_effector: EndEffector::Ball,
        }
    }
}

impl RobotModel {
    pub fn with_hook() -> Self {
        RobotModel { end_effector: EndEffector::Hook(HookModel::default()), ..Default::default() }
    }

    /// Hip pivot in the trunk frame; front and hind pairs attach at the
    /// trunk ends.
    pub fn hip_offset(&self, leg: Leg) -> Vec2 {
        let half = self.trunk_length_m / 2.0;
        if leg.is_front() {
            Vec2::new(half, 0.0)
        } else {
            Vec2::new(-half, 0.0)
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.trunk_mass_kg + 4.0 * (self.thigh_mass_kg + self.shank_mass_kg)
    }

    pub fn leg_reach(&self) -> f64 {
        self.thigh_length_m + self.shank_length_m
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        let positives = [
            ("trunk_length", self.trunk_length_m),
            ("trunk_mass", self.trunk_mass_kg),
            ("trunk_inertia", self.trunk_inertia),
            ("trunk_radius", self.trunk_radius_m),
            ("thigh_length", self.thigh_length_m),
            ("thigh_mass", self.thigh_mass_kg),
            ("thigh_inertia", self.thigh_inertia),
            ("shank_length", self.shank_length_m),
            ("shank_mass", self.shank_mass_kg),
            ("shank_inertia", self.shank_inertia),
            ("foot_radius", self.foot_radius_m),
            ("link_radius", self.link_radius_m),
            ("torque_limit", self.torque_limit_nm),
            ("joint_limit", self.joint_limit_rad),
            ("joint_vel_limit", self.joint_vel_limit_rad_s),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RobotError::InvalidModel(format!(
                    "{name} = {v} violates {name} > 0 and finite"
                )));
            }
        }
        if self.kp < 0.0 || self.kd < 0.0 {
            return Err(RobotError::InvalidModel("PD gains must be non-negative".into()));
        }
        for (i, q) in self.default_pose.iter().enumerate() {
            if q.abs() > self.joint_limit_rad {
                return Err(RobotError::InvalidModel(format!(
                    "default_pose[{i}] = {q} outside joint limit {}",
                    self.joint_limit_rad
                )));
            }
        }
        if let EndEffector::Hook(h) = &self.end_effector {
            h.validate()?;
        }
        Ok(())
    }
}
