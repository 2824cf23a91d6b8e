//! Planar quadruped simulation: PD-tracked joint targets at 400 Hz, penalty
//! contacts, hook capture, domain randomization, and an energy ledger.
//!
//! One policy step is `substeps` physics substeps of `dt_s`. Torques are
//! sampled once per substep (zero-order hold) and each substep is integrated
//! with classic RK4 over positions, velocities, and a banked-energy scalar
//! that absorbs the power of every contact and pin force. Total mechanical
//! energy (kinetic + potential + banked) is therefore conserved up to
//! integrator truncation, which makes energy drift a sharp regression signal.
//!
//! Substeps that are about to gain or lose a contact are subdivided further:
//! the force ramp at contact onset is steep enough that a fixed 2.5 ms step
//! would otherwise leave visible integration noise in the energy ledger.

pub mod contact;
pub mod dynamics;
pub mod hook;

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::math::{wrap_angle, Vec2};
use crate::rng::Rng;
use crate::robot::{DisturbanceConfig, RobotModel};
use crate::terrain::TerrainInstance;
use contact::{contact_pass, refresh_anchors, ContactParams, ContactReport};
use dynamics::{
    add_point_force, forward_dynamics, joint_coord, kinematics, kinetic_energy, point_velocity,
    potential_energy, Attach, Kinematics, NDOF,
};

/// Joint targets are clamped to this band around the current position before
/// the PD controller sees them.
pub const TARGET_CLAMP_RAD: f64 = 4.0;

/// Pitch magnitude beyond which the episode terminates.
pub const TERMINATION_PITCH_RAD: f64 = 100.0 * std::f64::consts::PI / 180.0;

/// Integrator state: positions (11), velocities (11), banked energy.
const NY: usize = 2 * NDOF + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Physics substep, 400 Hz.
    pub dt_s: f64,
    /// Substeps per policy step, 50 Hz control.
    pub substeps: u32,
    /// RK4 subdivision applied to substeps near a contact transition.
    pub impact_subdiv: u32,
    pub contact: ContactParams,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt_s: 1.0 / 400.0,
            substeps: 8,
            impact_subdiv: 4,
            contact: ContactParams::default(),
        }
    }
}

impl SimParams {
    pub fn policy_dt(&self) -> f64 {
        self.dt_s * self.substeps as f64
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("simulation diverged: {quantity} became non-finite at t = {time_s:.4} s")]
    Diverged { quantity: String, time_s: f64 },
}

/// Full dynamic state of the robot between policy steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub base_pos: Vec2,
    pub base_pitch: f64,
    pub base_vel: Vec2,
    pub pitch_rate: f64,
    pub q: [f64; 8],
    pub qd: [f64; 8],
    /// Finite difference of joint velocity across the last policy step.
    pub qdd: [f64; 8],
    /// Torques applied during the last physics substep, post-clamp.
    pub tau: [f64; 8],
    /// Joint targets, newest first: [t, t-1, t-2].
    pub target_hist: [[f64; 8]; 3],
    pub time_s: f64,
    /// Absolute time of the next scheduled push; 0 means unarmed.
    pub next_push_s: f64,
}

impl RobotState {
    /// Robot at rest in the default pose at the given base placement.
    pub fn at_pose(model: &RobotModel, base_pos: Vec2, base_pitch: f64) -> RobotState {
        let q = model.default_pose;
        RobotState {
            base_pos,
            base_pitch,
            base_vel: Vec2::ZERO,
            pitch_rate: 0.0,
            q,
            qd: [0.0; 8],
            qdd: [0.0; 8],
            tau: [0.0; 8],
            target_hist: [q; 3],
            time_s: 0.0,
            next_push_s: 0.0,
        }
    }

    /// Default pose with the base raised so every foot just touches its
    /// ground height at `x`.
    pub fn standing(model: &RobotModel, terrain: &TerrainInstance, x: f64) -> RobotState {
        let probe = kinematics(model, Vec2::new(x, 0.0), 0.0, &model.default_pose);
        let mut base_z = f64::NEG_INFINITY;
        for l in 0..4 {
            let ground = terrain.height_at(probe.foot[l].x);
            base_z = base_z.max(ground + model.foot_radius_m - probe.foot[l].z);
        }
        RobotState::at_pose(model, Vec2::new(x, base_z), 0.0)
    }

    /// Generalized velocity [vx, vz, pitch rate, joint rates].
    pub fn gen_velocity(&self) -> [f64; NDOF] {
        let mut v = [0.0; NDOF];
        v[0] = self.base_vel.x;
        v[1] = self.base_vel.z;
        v[2] = self.pitch_rate;
        v[3..11].copy_from_slice(&self.qd);
        v
    }

    /// Roll is structurally zero in the planar model.
    pub fn base_roll(&self) -> f64 {
        0.0
    }

    /// Yaw is structurally zero in the planar model.
    pub fn base_yaw(&self) -> f64 {
        0.0
    }

    /// Gravity direction in the base frame as a 3-vector (x fwd, y left, z up).
    pub fn gravity_in_base(&self) -> [f64; 3] {
        [-self.base_pitch.sin(), 0.0, -self.base_pitch.cos()]
    }

    /// Base linear velocity in world axes, embedded with y = 0.
    pub fn v_base_world3(&self) -> [f64; 3] {
        [self.base_vel.x, 0.0, self.base_vel.z]
    }

    /// Base linear velocity expressed in the base frame, y = 0.
    pub fn v_base_body3(&self) -> [f64; 3] {
        let b = self.base_vel.rotate_inv(self.base_pitch);
        [b.x, 0.0, b.z]
    }

    /// Angular rates (roll, pitch, yaw); only pitch is live.
    pub fn ang_rates3(&self) -> [f64; 3] {
        [0.0, self.pitch_rate, 0.0]
    }
}

/// Contact summary refreshed at the end of every policy step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactState {
    pub foot_contact: [bool; 4],
    pub thigh_contact: [bool; 4],
    pub shank_contact: [bool; 4],
    pub base_contact: bool,
    /// Net world-frame contact force per foot (includes pin force).
    pub foot_force: [Vec2; 4],
    /// Normal-direction force per foot; negative only while a hook pin is
    /// engaged and loaded in tension.
    pub foot_normal_force: [f64; 4],
    pub foot_vel: [Vec2; 4],
    pub foot_mu: [f64; 4],
    pub airtime_s: [f64; 4],
    pub hook_engaged: [bool; 4],
    pub engaged_rung: [Option<usize>; 4],
}

/// Key of a friction stick anchor: (collider id, feature id, geometry id).
pub type AnchorKey = (u8, u8, u32);

/// An engaged hook pin: bilateral radial spring to a rung at the captured
/// distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinState {
    pub rung: usize,
    pub rest_len_m: f64,
}

/// Internal contact bookkeeping that persists between substeps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimRuntime {
    pub anchors: BTreeMap<AnchorKey, Vec2>,
    pub pins: [Option<PinState>; 4],
    /// Rung a foot just released from; unilateral contact with it stays
    /// suppressed until the foot clears its outline.
    pub latched: [Option<usize>; 4],
    /// Energy absorbed from contact and pin forces since the last reset.
    pub banked_j: f64,
}

impl SimRuntime {
    /// True when unilateral contact between this leg and this rung is
    /// suppressed (engaged pin or post-release latch).
    pub fn rung_blocked(&self, leg: usize, rung: usize) -> bool {
        if let Some(pin) = &self.pins[leg] {
            if pin.rung == rung {
                return true;
            }
        }
        self.latched[leg] == Some(rung)
    }
}

/// Per-episode domain randomization, kept for the privileged observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizationRecord {
    pub added_mass_kg: f64,
    pub foot_mu: [f64; 4],
    /// Persistent external force on the base, world frame.
    pub ext_force_n: Vec2,
    /// Persistent external pitch torque on the base.
    pub ext_torque_nm: f64,
    /// Persistent external force per foot, world frame.
    pub ext_foot_force_n: [Vec2; 4],
}

impl RandomizationRecord {
    pub fn none() -> Self {
        RandomizationRecord {
            added_mass_kg: 0.0,
            foot_mu: [0.6; 4],
            ext_force_n: Vec2::ZERO,
            ext_torque_nm: 0.0,
            ext_foot_force_n: [Vec2::ZERO; 4],
        }
    }
}

fn sample_range(rng: &mut Rng, range: (f64, f64)) -> f64 {
    if range.1 - range.0 <= 0.0 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    }
}

/// Random planar force with magnitude uniform in [0, max].
fn sample_force(rng: &mut Rng, max: f64) -> Vec2 {
    if max <= 0.0 {
        return Vec2::ZERO;
    }
    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
    Vec2::new(ang.cos(), ang.sin()) * rng.gen_range(0.0..=max)
}

/// Sample one episode's disturbances. Foot forces use a quarter of the base
/// force range so the total foot disturbance budget matches the base one.
pub fn apply_randomization(config: &DisturbanceConfig, rng: &mut Rng) -> RandomizationRecord {
    let added_mass_kg = sample_range(rng, config.base_mass_range_kg);
    let mut foot_mu = [0.0; 4];
    for mu in &mut foot_mu {
        *mu = sample_range(rng, config.friction_range);
    }
    let ext_force_n = sample_force(rng, config.ext_force_max_n);
    let ext_torque_nm = if config.ext_torque_max_nm > 0.0 {
        rng.gen_range(-config.ext_torque_max_nm..=config.ext_torque_max_nm)
    } else {
        0.0
    };
    let mut ext_foot_force_n = [Vec2::ZERO; 4];
    for f in &mut ext_foot_force_n {
        *f = sample_force(rng, 0.25 * config.ext_force_max_n);
    }
    RandomizationRecord { added_mass_kg, foot_mu, ext_force_n, ext_torque_nm, ext_foot_force_n }
}

/// Add a velocity offset sampled per axis from N(0, sigma^2); the lateral
/// axis is projected out by the planar embedding.
pub fn apply_push(state: &mut RobotState, rng: &mut Rng, push_std_mps: f64) {
    if push_std_mps <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, push_std_mps).expect("finite push std");
    state.base_vel.x += normal.sample(rng);
    state.base_vel.z += normal.sample(rng);
}

/// Episode ends when the base pitch leaves the upright cone. Roll is
/// structurally zero and needs no check.
pub fn check_termination(state: &RobotState) -> bool {
    wrap_angle(state.base_pitch).abs() > TERMINATION_PITCH_RAD
}

/// One 400 Hz sensor sample recorded during a policy step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstepSample {
    /// Kinematic base acceleration in world axes (gravity not subtracted).
    pub base_acc_world: Vec2,
    pub pitch: f64,
    pub pitch_rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StepInfo {
    pub samples: Vec<SubstepSample>,
}

/// The simulator: model, terrain, randomization, and mutable state.
#[derive(Debug, Clone)]
pub struct Sim {
    pub model: RobotModel,
    pub params: SimParams,
    pub terrain: TerrainInstance,
    pub rand: RandomizationRecord,
    pub runtime: SimRuntime,
    pub state: RobotState,
    pub contact: ContactState,
}

impl Sim {
    /// Simulator standing at the middle of the spawn region.
    pub fn new(model: RobotModel, params: SimParams, terrain: TerrainInstance) -> Sim {
        let x = 0.5 * (terrain.spawn_region.min.x + terrain.spawn_region.max.x);
        let state = RobotState::standing(&model, &terrain, x);
        let rand = RandomizationRecord::none();
        let mut contact = ContactState::default();
        contact.foot_mu = rand.foot_mu;
        Sim { model, params, terrain, rand, runtime: SimRuntime::default(), state, contact }
    }

    /// Replace the dynamic state and drop all contact bookkeeping.
    pub fn set_state(&mut self, state: RobotState) {
        self.state = state;
        self.runtime = SimRuntime::default();
        self.contact = ContactState::default();
        self.contact.foot_mu = self.rand.foot_mu;
    }

    pub fn set_randomization(&mut self, rand: RandomizationRecord) {
        self.rand = rand;
        self.contact.foot_mu = rand.foot_mu;
    }

    /// Replace the terrain (new episode on a fresh instance).
    pub fn set_terrain(&mut self, terrain: TerrainInstance) {
        self.terrain = terrain;
        self.runtime = SimRuntime::default();
        self.contact = ContactState::default();
        self.contact.foot_mu = self.rand.foot_mu;
    }

    pub fn kinematics_now(&self) -> Kinematics {
        kinematics(&self.model, self.state.base_pos, self.state.base_pitch, &self.state.q)
    }

    /// Kinetic + potential + banked contact energy. Conserved along passive
    /// trajectories up to integrator truncation while the contact set is
    /// smooth; contact onsets at speed cost some accuracy.
    pub fn mechanical_energy(&self) -> f64 {
        let kin = self.kinematics_now();
        let v = self.state.gen_velocity();
        kinetic_energy(&self.model, self.rand.added_mass_kg, &kin, &v)
            + potential_energy(&self.model, self.rand.added_mass_kg, &kin)
            + self.runtime.banked_j
    }

    /// Kinetic + potential + stored elastic energy. Non-increasing along
    /// passive trajectories: springs store, dampers and friction dissipate,
    /// and every discontinuous contact event only discards stored energy.
    pub fn ledger_energy(&self) -> f64 {
        let kin = self.kinematics_now();
        let v = self.state.gen_velocity();
        kinetic_energy(&self.model, self.rand.added_mass_kg, &kin, &v)
            + potential_energy(&self.model, self.rand.added_mass_kg, &kin)
            + contact::elastic_energy(
                &self.model,
                &self.params.contact,
                &kin,
                &self.terrain,
                &self.rand.foot_mu,
                &self.runtime,
            )
    }

    /// Advance one policy step. `targets` of `None` runs the plant passively
    /// with zero torque; otherwise targets are clamped to a band around the
    /// current joint positions and tracked by the 400 Hz PD controller.
    pub fn step(
        &mut self,
        targets: Option<&[f64; 8]>,
        disturbances: &DisturbanceConfig,
        rng: &mut Rng,
    ) -> Result<StepInfo, SimError> {
        let dt = self.params.dt_s;
        let substeps = self.params.substeps.max(1);

        if let Some(t) = targets {
            let mut clamped = [0.0; 8];
            for j in 0..8 {
                let q = self.state.q[j];
                clamped[j] = t[j].clamp(q - TARGET_CLAMP_RAD, q + TARGET_CLAMP_RAD);
            }
            self.state.target_hist[2] = self.state.target_hist[1];
            self.state.target_hist[1] = self.state.target_hist[0];
            self.state.target_hist[0] = clamped;
        }

        if disturbances.push_period_s > 0.0 {
            if self.state.next_push_s <= 0.0 {
                self.state.next_push_s = disturbances.push_period_s;
            }
            while self.state.time_s + 1e-9 >= self.state.next_push_s {
                apply_push(&mut self.state, rng, disturbances.push_std_mps);
                self.state.next_push_s += disturbances.push_period_s;
            }
        }

        let qd_start = self.state.qd;
        let mut samples = Vec::with_capacity(substeps as usize);

        for _ in 0..substeps {
            let kin = self.kinematics_now();
            let v = self.state.gen_velocity();
            if self.model.end_effector.is_hook() {
                hook::update_hooks(
                    &self.model,
                    &self.params.contact,
                    &kin,
                    &v,
                    &self.terrain,
                    &mut self.runtime,
                );
            }

            // 400 Hz PD sample, held constant across the substep.
            let mut tau = [0.0; 8];
            if targets.is_some() {
                let tgt = self.state.target_hist[0];
                let lim = self.model.torque_limit_nm;
                for j in 0..8 {
                    let raw =
                        self.model.kp * (tgt[j] - self.state.q[j]) - self.model.kd * self.state.qd[j];
                    tau[j] = raw.clamp(-lim, lim);
                }
            }
            self.state.tau = tau;

            let subdiv = if contact::transition_near(
                &self.model,
                &self.params.contact,
                &kin,
                &v,
                &self.terrain,
                &self.runtime,
                dt,
            ) {
                self.params.impact_subdiv.max(1)
            } else {
                1
            };
            let h = dt / subdiv as f64;

            let v_before = self.state.base_vel;
            let mut y = self.pack();
            for _ in 0..subdiv {
                y = self.rk4(&tau, &y, h);
            }
            self.unpack(&y)?;
            self.state.time_s += dt;

            // Report pass at the new state with the anchors the stages used,
            // then rebuild anchors for the next substep.
            let kin = self.kinematics_now();
            let v = self.state.gen_velocity();
            let mut report = ContactReport::default();
            let _ = contact_pass(
                &self.model,
                &self.params.contact,
                &kin,
                &v,
                &self.terrain,
                &self.rand.foot_mu,
                &self.runtime,
                Some(&mut report),
            );
            refresh_anchors(&self.params.contact, &mut self.runtime, &report.hits);
            self.update_contact_state(&kin, &v, &report, dt);

            samples.push(SubstepSample {
                base_acc_world: (self.state.base_vel - v_before) * (1.0 / dt),
                pitch: self.state.base_pitch,
                pitch_rate: self.state.pitch_rate,
            });
        }

        let span = dt * substeps as f64;
        for j in 0..8 {
            self.state.qdd[j] = (self.state.qd[j] - qd_start[j]) / span;
        }
        Ok(StepInfo { samples })
    }

    fn update_contact_state(
        &mut self,
        kin: &Kinematics,
        v: &[f64; NDOF],
        report: &ContactReport,
        dt: f64,
    ) {
        let c = &mut self.contact;
        c.foot_contact = report.foot_contact;
        c.thigh_contact = report.thigh_contact;
        c.shank_contact = report.shank_contact;
        c.base_contact = report.base_contact;
        c.foot_force = report.foot_force;
        c.foot_normal_force = report.foot_normal;
        for l in 0..4 {
            c.foot_vel[l] = point_velocity(kin, v, Attach::Shank(l), kin.foot[l]);
            c.foot_mu[l] = self.rand.foot_mu[l];
            c.airtime_s[l] = if c.foot_contact[l] { 0.0 } else { c.airtime_s[l] + dt };
            c.hook_engaged[l] = self.runtime.pins[l].is_some();
            c.engaged_rung[l] = self.runtime.pins[l].map(|p| p.rung);
        }
    }

    fn pack(&self) -> [f64; NY] {
        let s = &self.state;
        let mut y = [0.0; NY];
        y[0] = s.base_pos.x;
        y[1] = s.base_pos.z;
        y[2] = s.base_pitch;
        y[3..11].copy_from_slice(&s.q);
        y[NDOF] = s.base_vel.x;
        y[NDOF + 1] = s.base_vel.z;
        y[NDOF + 2] = s.pitch_rate;
        y[NDOF + 3..NDOF + 11].copy_from_slice(&s.qd);
        y[2 * NDOF] = self.runtime.banked_j;
        y
    }

    fn unpack(&mut self, y: &[f64; NY]) -> Result<(), SimError> {
        for (i, val) in y.iter().enumerate() {
            if !val.is_finite() {
                return Err(SimError::Diverged {
                    quantity: state_name(i),
                    time_s: self.state.time_s,
                });
            }
        }
        let s = &mut self.state;
        s.base_pos = Vec2::new(y[0], y[1]);
        s.base_pitch = y[2];
        s.q.copy_from_slice(&y[3..11]);
        s.base_vel = Vec2::new(y[NDOF], y[NDOF + 1]);
        s.pitch_rate = y[NDOF + 2];
        s.qd.copy_from_slice(&y[NDOF + 3..NDOF + 11]);
        self.runtime.banked_j = y[2 * NDOF];
        Ok(())
    }

    /// Time derivative of the packed state under held torques. A non-finite
    /// or absurdly large input poisons the whole derivative so divergence is
    /// reported by the step loop instead of crashing inside the solver.
    fn deriv(&self, tau: &[f64; 8], y: &[f64; NY]) -> [f64; NY] {
        if y.iter().any(|v| !v.is_finite() || v.abs() > 1e9) {
            return [f64::NAN; NY];
        }
        let base = Vec2::new(y[0], y[1]);
        let pitch = y[2];
        let mut q = [0.0; 8];
        q.copy_from_slice(&y[3..11]);
        let mut v = [0.0; NDOF];
        v.copy_from_slice(&y[NDOF..2 * NDOF]);
        let kin = kinematics(&self.model, base, pitch, &q);

        let mut gen = [0.0; NDOF];
        for j in 0..8 {
            gen[joint_coord(j)] += tau[j];
        }
        gen[0] += self.rand.ext_force_n.x;
        gen[1] += self.rand.ext_force_n.z;
        gen[2] += self.rand.ext_torque_nm;
        for l in 0..4 {
            let f = self.rand.ext_foot_force_n[l];
            if f.x != 0.0 || f.z != 0.0 {
                add_point_force(&kin, Attach::Shank(l), kin.foot[l], f, &mut gen);
            }
        }

        let (gen_c, banked_rate) = contact_pass(
            &self.model,
            &self.params.contact,
            &kin,
            &v,
            &self.terrain,
            &self.rand.foot_mu,
            &self.runtime,
            None,
        );
        for i in 0..NDOF {
            gen[i] += gen_c[i];
        }
        let vdot = forward_dynamics(&self.model, self.rand.added_mass_kg, &kin, &v, &gen);

        let mut dy = [0.0; NY];
        dy[..NDOF].copy_from_slice(&v);
        dy[NDOF..2 * NDOF].copy_from_slice(&vdot);
        dy[2 * NDOF] = banked_rate;
        dy
    }

    fn rk4(&self, tau: &[f64; 8], y: &[f64; NY], h: f64) -> [f64; NY] {
        let k1 = self.deriv(tau, y);
        let k2 = self.deriv(tau, &add_scaled(y, &k1, 0.5 * h));
        let k3 = self.deriv(tau, &add_scaled(y, &k2, 0.5 * h));
        let k4 = self.deriv(tau, &add_scaled(y, &k3, h));
        let mut out = *y;
        for i in 0..NY {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }
}

fn add_scaled(y: &[f64; NY], k: &[f64; NY], h: f64) -> [f64; NY] {
    let mut out = *y;
    for i in 0..NY {
        out[i] += h * k[i];
    }
    out
}

fn state_name(i: usize) -> String {
    match i {
        0 => "base position x".into(),
        1 => "base position z".into(),
        2 => "base pitch".into(),
        3..=10 => format!("joint {} position", i - 3),
        11 => "base velocity x".into(),
        12 => "base velocity z".into(),
        13 => "pitch rate".into(),
        14..=21 => format!("joint {} velocity", i - 14),
        _ => "energy ledger".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::terrain::{generate_rough, TerrainConfig};
    use dynamics::GRAVITY;

    fn flat_terrain() -> TerrainInstance {
        let cfg = TerrainConfig::default();
        generate_rough(0.0, &cfg, 1, &mut rng::stream(1, 0))
    }

    fn passive(sim: &mut Sim, steps: usize) {
        let dist = DisturbanceConfig::none();
        let mut r = rng::stream(0, 99);
        for _ in 0..steps {
            sim.step(None, &dist, &mut r).expect("finite");
        }
    }

    #[test]
    fn free_fall_matches_closed_form_and_reference() {
        let model = RobotModel::default();
        let terrain = flat_terrain();
        let mut sim = Sim::new(model.clone(), SimParams::default(), terrain.clone());
        let mut state = RobotState::at_pose(&model, Vec2::new(0.0, 30.0), 0.1);
        state.qd = [0.0; 8];
        sim.set_state(state.clone());
        passive(&mut sim, 50); // 1 s

        let drop = 30.0 - sim.state.base_pos.z;
        assert!((drop - 0.5 * GRAVITY).abs() < 1e-9, "drop {drop}");
        assert!(sim.state.base_vel.x.abs() < 1e-12);
        for j in 0..8 {
            assert!(sim.state.qd[j].abs() < 1e-9, "joint {j} moved in free fall");
        }

        // Reference at a tenth of the step size.
        let mut fine = Sim::new(
            model,
            SimParams { dt_s: 1.0 / 4000.0, substeps: 80, ..SimParams::default() },
            terrain,
        );
        fine.set_state(state);
        passive(&mut fine, 50);
        assert!((fine.state.base_pos.z - sim.state.base_pos.z).abs() < 1e-3);
    }

    #[test]
    fn straight_leg_stance_is_an_exact_equilibrium() {
        // Legs straight down, feet under hips: gravity moments vanish and a
        // penetration of W / (4 k_n) balances the weight exactly, so with
        // targets equal to the current pose nothing may move.
        let model = RobotModel::default();
        let terrain = flat_terrain();
        let params = SimParams::default();
        let depth = model.total_mass() * GRAVITY / (4.0 * params.contact.k_normal);
        let base_z = model.thigh_length_m + model.shank_length_m + model.foot_radius_m - depth;

        let mut sim = Sim::new(model.clone(), params, terrain);
        let mut state = RobotState::at_pose(&model, Vec2::new(0.0, base_z), 0.0);
        state.q = [0.0; 8];
        state.target_hist = [[0.0; 8]; 3];
        sim.set_state(state);

        let dist = DisturbanceConfig::none();
        let mut r = rng::stream(2, 0);
        for _ in 0..50 {
            sim.step(Some(&[0.0; 8]), &dist, &mut r).unwrap();
        }
        assert!((sim.state.base_pos.z - base_z).abs() < 1e-9);
        assert!(sim.state.base_pos.x.abs() < 1e-9);
        assert!(sim.state.base_pitch.abs() < 1e-9);
        for j in 0..8 {
            assert!(sim.state.q[j].abs() < 1e-9);
        }
        for l in 0..4 {
            assert!(sim.contact.foot_contact[l]);
            let expect = model.total_mass() * GRAVITY / 4.0;
            assert!((sim.contact.foot_normal_force[l] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn settled_stance_holds_under_fixed_targets() {
        let model = RobotModel::default();
        let mut sim = Sim::new(model.clone(), SimParams::default(), flat_terrain());
        let dist = DisturbanceConfig::none();
        let mut r = rng::stream(3, 0);
        let targets = model.default_pose;
        for _ in 0..250 {
            sim.step(Some(&targets), &dist, &mut r).unwrap();
        }
        let snap = sim.state.clone();
        for _ in 0..50 {
            sim.step(Some(&targets), &dist, &mut r).unwrap();
        }
        assert!((sim.state.base_pos - snap.base_pos).norm() < 1e-6);
        assert!((sim.state.base_pitch - snap.base_pitch).abs() < 1e-6);
        for j in 0..8 {
            assert!((sim.state.q[j] - snap.q[j]).abs() < 1e-6, "joint {j} drifted");
        }
    }

    #[test]
    fn penalty_normal_force_matches_hand_value() {
        // 1 mm static penetration past the ramp: f_n = 5000 * 0.001 = 5 N.
        let model = RobotModel::default();
        let terrain = flat_terrain();
        let probe = kinematics(&model, Vec2::new(0.0, 0.0), 0.0, &model.default_pose);
        let foot_rel_z = probe.foot[0].z;
        let base_z = model.foot_radius_m - 0.001 - foot_rel_z;
        let kin = kinematics(&model, Vec2::new(0.0, base_z), 0.0, &model.default_pose);

        let params = ContactParams::default();
        let runtime = SimRuntime::default();
        let mut report = ContactReport::default();
        let _ = contact_pass(
            &model,
            &params,
            &kin,
            &[0.0; NDOF],
            &terrain,
            &[0.6; 4],
            &runtime,
            Some(&mut report),
        );
        for l in 0..4 {
            assert!(report.foot_contact[l]);
            assert!((report.foot_normal[l] - 5.0).abs() < 1e-9, "foot {l}");
        }
    }

    #[test]
    fn settled_feet_respect_the_friction_cone() {
        let model = RobotModel::default();
        let mut sim = Sim::new(model.clone(), SimParams::default(), flat_terrain());
        let dist = DisturbanceConfig::none();
        let mut r = rng::stream(4, 0);
        for _ in 0..150 {
            sim.step(Some(&model.default_pose.clone()), &dist, &mut r).unwrap();
        }
        for l in 0..4 {
            let f = sim.contact.foot_force[l];
            assert!(f.z > 0.0, "foot {l} unloaded");
            assert!(f.x.abs() <= sim.contact.foot_mu[l] * f.z + 1e-9, "foot {l} outside cone");
        }
    }

    #[test]
    fn push_timer_fires_every_period() {
        let model = RobotModel::default();
        let mut sim = Sim::new(model.clone(), SimParams::default(), flat_terrain());
        // High enough that 10.4 s of free fall never reaches the ground.
        sim.set_state(RobotState::at_pose(&model, Vec2::new(0.0, 1000.0), 0.0));
        let dist = DisturbanceConfig {
            push_std_mps: 1.0,
            push_period_s: 5.0,
            ..DisturbanceConfig::none()
        };
        let mut r = rng::stream(5, 0);
        let mut jumps = Vec::new();
        let mut vx = sim.state.base_vel.x;
        for step in 1..=520 {
            sim.step(None, &dist, &mut r).unwrap();
            if (sim.state.base_vel.x - vx).abs() > 1e-12 {
                jumps.push(step);
                vx = sim.state.base_vel.x;
            }
        }
        // Pushes land at the start of the steps following t = 5 s and 10 s.
        assert_eq!(jumps, vec![251, 501]);
    }

    #[test]
    fn zero_sigma_push_leaves_velocity_unchanged() {
        // A run with zero-strength pushes must match a push-free run bitwise.
        let model = RobotModel::default();
        let run = |period: f64| {
            let mut sim = Sim::new(model.clone(), SimParams::default(), flat_terrain());
            sim.set_state(RobotState::at_pose(&model, Vec2::new(0.0, 1000.0), 0.0));
            let dist = DisturbanceConfig {
                push_std_mps: 0.0,
                push_period_s: period,
                ..DisturbanceConfig::none()
            };
            let mut r = rng::stream(6, 0);
            for _ in 0..300 {
                sim.step(None, &dist, &mut r).unwrap();
            }
            sim.state.base_vel
        };
        assert_eq!(run(5.0), run(0.0));
    }

    #[test]
    fn push_samples_have_the_configured_spread() {
        let mut r = rng::stream(7, 0);
        let model = RobotModel::default();
        let mut xs = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let mut s = RobotState::at_pose(&model, Vec2::ZERO, 0.0);
            apply_push(&mut s, &mut r, 1.0);
            xs.push(s.base_vel.x);
        }
        let sd = crate::math::std_dev(&xs);
        assert!((sd - 1.0).abs() < 0.03, "sample std {sd}");
    }

    #[test]
    fn randomization_respects_bounds() {
        let dist = DisturbanceConfig::default();
        let mut r = rng::stream(8, 0);
        for _ in 0..10_000 {
            let rec = apply_randomization(&dist, &mut r);
            assert!(rec.added_mass_kg >= dist.base_mass_range_kg.0);
            assert!(rec.added_mass_kg <= dist.base_mass_range_kg.1);
            for mu in rec.foot_mu {
                assert!(mu >= dist.friction_range.0 && mu <= dist.friction_range.1);
            }
            assert!(rec.ext_force_n.norm() <= dist.ext_force_max_n + 1e-12);
            assert!(rec.ext_torque_nm.abs() <= dist.ext_torque_max_nm);
        }

        let rec = apply_randomization(&DisturbanceConfig::none(), &mut r);
        assert_eq!(rec, RandomizationRecord::none());
    }

    #[test]
    fn termination_thresholds() {
        let model = RobotModel::default();
        let mut s = RobotState::at_pose(&model, Vec2::ZERO, 0.0);
        s.base_pitch = 101f64.to_radians();
        assert!(check_termination(&s));
        s.base_pitch = 99f64.to_radians();
        assert!(!check_termination(&s));
        s.base_pitch = -101f64.to_radians();
        assert!(check_termination(&s));
    }

    #[test]
    fn torque_stays_clamped_at_the_limit() {
        let model = RobotModel::default();
        let mut sim = Sim::new(model.clone(), SimParams::default(), flat_terrain());
        // Targets far beyond the clamp band: error 4 rad, kp * 4 > limit.
        let mut targets = sim.state.q;
        for t in &mut targets {
            *t += 10.0;
        }
        let dist = DisturbanceConfig::none();
        let mut r = rng::stream(9, 0);
        let q0 = sim.state.q;
        sim.step(Some(&targets), &dist, &mut r).unwrap();
        for j in 0..8 {
            assert!(sim.state.tau[j].abs() <= model.torque_limit_nm + 1e-12);
        }
        assert!((sim.state.tau[0] - model.torque_limit_nm).abs() < 1e-9);
        // The stored target is clamped around the pose at the start of the step.
        assert!(sim.state.target_hist[0][0] <= q0[0] + TARGET_CLAMP_RAD + 1e-12);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let model = RobotModel::default();
        let dist = DisturbanceConfig::default();
        let run = || {
            let mut sim = Sim::new(model.clone(), SimParams::default(), flat_terrain());
            let mut r = rng::stream(11, 3);
            sim.set_randomization(apply_randomization(&dist, &mut r));
            let mut targets = sim.state.q;
            for k in 0..100 {
                for (j, t) in targets.iter_mut().enumerate() {
                    *t = model.default_pose[j] + 0.3 * ((k as f64 * 0.11 + j as f64).sin());
                }
                sim.step(Some(&targets), &dist, &mut r).unwrap();
            }
            sim.state
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn passive_rollouts_never_create_energy() {
        // Zero torque, zero disturbances: kinetic + potential + stored
        // elastic energy may only fall, up to integrator noise per step.
        // The first drop collapses the unpowered legs and slams the trunk at
        // about 3 m/s, so this covers violent impacts, sliding and settling.
        let model = RobotModel::default();
        let dist = DisturbanceConfig::none();
        let scenarios: [(f64, Vec2); 3] =
            [(0.03, Vec2::ZERO), (0.3, Vec2::new(1.5, 0.0)), (0.1, Vec2::new(-0.8, 0.5))];
        for (drop, vel) in scenarios {
            let mut sim = Sim::new(model.clone(), SimParams::default(), flat_terrain());
            let mut state = sim.state.clone();
            state.base_pos.z += drop;
            state.base_vel = vel;
            sim.set_state(state);

            let mut r = rng::stream(12, 0);
            let mut prev = sim.ledger_energy();
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..500 {
                sim.step(None, &dist, &mut r).unwrap();
                let e = sim.ledger_energy();
                worst = worst.max(e - prev);
                prev = e;
            }
            assert!(worst < 1e-6, "gained {worst} J in one step (drop {drop}, vel {vel:?})");
            // Banked contact work must come out non-negative once settled:
            // contacts only store or dissipate.
            assert!(sim.runtime.banked_j > -1e-2, "ledger went negative: {}", sim.runtime.banked_j);
            // Ten seconds is plenty to come to rest.
            assert!(sim.state.base_vel.norm() < 0.05, "still moving: {:?}", sim.state.base_vel);
        }
    }

    #[test]
    fn hook_pin_engages_and_carries_tension() {
        // A single thin rung; the robot hangs one front foot on it and is
        // otherwise unsupported, so the pin must carry the weight in tension.
        let model = RobotModel::with_hook();
        let terrain = {
            let mut t = flat_terrain();
            // Rung well above the ground, cylindrical 2 cm radius.
            t.rung_centers = vec![Vec2::new(0.3, 1.2)];
            t.ladder = Some(crate::terrain::LadderSpec {
                present: true,
                length_m: 1.0,
                width_m: 1.0,
                spacing_m: 0.3,
                rung_minor_radius_m: 0.02,
                rung_major_radius_m: 0.02,
                incline_rad: std::f64::consts::FRAC_PI_2,
                num_rungs: 2,
                platform_offset_m: 0.0,
            });
            t
        };
        let mut sim = Sim::new(model.clone(), SimParams::default(), terrain);
        // Place the left-front foot pocket a few millimetres under the rung.
        let probe = kinematics(&model, Vec2::ZERO, 0.0, &model.default_pose);
        let want_foot = Vec2::new(0.3, 1.2 - 0.005);
        let base = want_foot - probe.foot[0];
        sim.set_state(RobotState::at_pose(&model, base, 0.0));

        let dist = DisturbanceConfig::none();
        let mut r = rng::stream(13, 0);
        sim.step(None, &dist, &mut r).unwrap();
        assert!(sim.contact.hook_engaged[0], "pin did not engage");
        assert_eq!(sim.contact.engaged_rung[0], Some(0));

        let mut saw_tension = false;
        for _ in 0..10 {
            sim.step(None, &dist, &mut r).unwrap();
            if sim.contact.hook_engaged[0] && sim.contact.foot_normal_force[0] < -1.0 {
                saw_tension = true;
            }
        }
        assert!(saw_tension, "engaged pin never reported tension");
    }

    #[test]
    fn diverged_state_reports_the_quantity() {
        let model = RobotModel::default();
        let mut sim = Sim::new(model.clone(), SimParams::default(), flat_terrain());
        let mut state = sim.state.clone();
        state.qd[2] = f64::NAN;
        sim.set_state(state);
        let dist = DisturbanceConfig::none();
        let mut r = rng::stream(14, 0);
        let err = sim.step(None, &dist, &mut r).unwrap_err();
        let SimError::Diverged { quantity, .. } = err;
        assert!(!quantity.is_empty());
    }
}
