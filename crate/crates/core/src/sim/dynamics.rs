//! Articulated rigid-body dynamics in the sagittal plane.
//!
//! Generalized coordinates (11): base x, base z, base pitch, then 8 joint
//! angles in leg order (hip, knee per leg). Bodies: trunk plus thigh and
//! shank per leg. The mass matrix is assembled from point-mass Jacobians,
//! M = sum m_i J_i^T J_i + I_i a_i^T a_i, and velocity-product terms enter
//! through the bias acceleration of each center of mass.
//!
//! Angle convention: positive pitch is counterclockwise (nose up). A leg
//! segment at absolute angle alpha points along (sin alpha, -cos alpha), so
//! alpha = 0 hangs straight down and positive joint angles swing forward.

use crate::math::Vec2;
use crate::robot::RobotModel;

pub const NDOF: usize = 11;
pub const GRAVITY: f64 = 9.81;

/// Index of joint j in the generalized coordinate vector.
pub fn joint_coord(j: usize) -> usize {
    3 + j
}

/// Body attachment of a point, determining its kinematic chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attach {
    Trunk,
    /// Point on the thigh link of a leg.
    Thigh(usize),
    /// Point on the shank link of a leg (chain runs through hip and knee).
    Shank(usize),
}

/// World-frame pose of every link, pivot, and center of mass.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub base: Vec2,
    pub pitch: f64,
    pub hip: [Vec2; 4],
    pub knee: [Vec2; 4],
    pub foot: [Vec2; 4],
    /// Unit vector from hip toward knee.
    pub thigh_dir: [Vec2; 4],
    /// Unit vector from knee toward foot.
    pub shank_dir: [Vec2; 4],
    pub thigh_com: [Vec2; 4],
    pub shank_com: [Vec2; 4],
    /// Absolute link angles (world), used for ankle-frame constructions.
    pub thigh_ang: [f64; 4],
    pub shank_ang: [f64; 4],
    /// Trunk capsule segment endpoints (rear, front).
    pub trunk_seg: [Vec2; 2],
}

fn link_dir(angle: f64) -> Vec2 {
    Vec2::new(angle.sin(), -angle.cos())
}

pub fn kinematics(model: &RobotModel, base: Vec2, pitch: f64, q: &[f64; 8]) -> Kinematics {
    let mut hip = [Vec2::ZERO; 4];
    let mut knee = [Vec2::ZERO; 4];
    let mut foot = [Vec2::ZERO; 4];
    let mut thigh_dir = [Vec2::ZERO; 4];
    let mut shank_dir = [Vec2::ZERO; 4];
    let mut thigh_com = [Vec2::ZERO; 4];
    let mut shank_com = [Vec2::ZERO; 4];
    let mut thigh_ang = [0.0; 4];
    let mut shank_ang = [0.0; 4];

    for leg in crate::robot::Leg::ALL {
        let l = leg.index();
        let off = model.hip_offset(leg).rotate(pitch);
        hip[l] = base + off;
        thigh_ang[l] = pitch + q[2 * l];
        shank_ang[l] = pitch + q[2 * l] + q[2 * l + 1];
        thigh_dir[l] = link_dir(thigh_ang[l]);
        shank_dir[l] = link_dir(shank_ang[l]);
        knee[l] = hip[l] + thigh_dir[l] * model.thigh_length_m;
        foot[l] = knee[l] + shank_dir[l] * model.shank_length_m;
        thigh_com[l] = hip[l] + thigh_dir[l] * (model.thigh_length_m / 2.0);
        shank_com[l] = knee[l] + shank_dir[l] * (model.shank_length_m / 2.0);
    }

    let half_seg = (model.trunk_length_m / 2.0 - model.trunk_radius_m).max(0.0);
    let axis = Vec2::new(1.0, 0.0).rotate(pitch);
    Kinematics {
        base,
        pitch,
        hip,
        knee,
        foot,
        thigh_dir,
        shank_dir,
        thigh_com,
        shank_com,
        thigh_ang,
        shank_ang,
        trunk_seg: [base - axis * half_seg, base + axis * half_seg],
    }
}

/// Linear Jacobian of a world point as a sparse list of (coordinate, column)
/// pairs. Base translation columns are implicit identity and handled by the
/// callers; this returns the rotational columns only.
fn rot_columns(kin: &Kinematics, attach: Attach, p: Vec2, out: &mut [(usize, Vec2); 3]) -> usize {
    out[0] = (2, (p - kin.base).perp());
    match attach {
        Attach::Trunk => 1,
        Attach::Thigh(l) => {
            out[1] = (joint_coord(2 * l), (p - kin.hip[l]).perp());
            2
        }
        Attach::Shank(l) => {
            out[1] = (joint_coord(2 * l), (p - kin.hip[l]).perp());
            out[2] = (joint_coord(2 * l + 1), (p - kin.knee[l]).perp());
            3
        }
    }
}

/// World velocity of a point attached to a body; `v` is the generalized
/// velocity [vx, vz, pitch_rate, qd0..qd7].
pub fn point_velocity(kin: &Kinematics, v: &[f64; NDOF], attach: Attach, p: Vec2) -> Vec2 {
    let mut cols = [(0usize, Vec2::ZERO); 3];
    let n = rot_columns(kin, attach, p, &mut cols);
    let mut vel = Vec2::new(v[0], v[1]);
    for &(idx, c) in cols.iter().take(n) {
        vel += c * v[idx];
    }
    vel
}

/// Accumulate the generalized force of a world-frame point force.
pub fn add_point_force(kin: &Kinematics, attach: Attach, p: Vec2, f: Vec2, q_out: &mut [f64; NDOF]) {
    q_out[0] += f.x;
    q_out[1] += f.z;
    let mut cols = [(0usize, Vec2::ZERO); 3];
    let n = rot_columns(kin, attach, p, &mut cols);
    for &(idx, c) in cols.iter().take(n) {
        q_out[idx] += f.dot(c);
    }
}

/// Angular rate of the body a point is attached to.
pub fn body_angular_rate(v: &[f64; NDOF], attach: Attach) -> f64 {
    match attach {
        Attach::Trunk => v[2],
        Attach::Thigh(l) => v[2] + v[joint_coord(2 * l)],
        Attach::Shank(l) => v[2] + v[joint_coord(2 * l)] + v[joint_coord(2 * l + 1)],
    }
}

struct BodyJac {
    mass: f64,
    inertia: f64,
    /// Rotational linear-Jacobian columns (coordinate, dp/dq).
    cols: [(usize, Vec2); 3],
    ncols: usize,
    /// Coordinates whose rates add to the body's angular rate.
    ang: [usize; 3],
    nang: usize,
    /// Bias (zero-acceleration) linear acceleration of the center of mass.
    bias_acc: Vec2,
    com_z: f64,
}

fn body_jacs(model: &RobotModel, added_mass: f64, kin: &Kinematics, v: &[f64; NDOF]) -> [BodyJac; 9] {
    let mut bodies: [BodyJac; 9] = std::array::from_fn(|_| BodyJac {
        mass: 0.0,
        inertia: 0.0,
        cols: [(0, Vec2::ZERO); 3],
        ncols: 0,
        ang: [0; 3],
        nang: 0,
        bias_acc: Vec2::ZERO,
        com_z: 0.0,
    });

    // Trunk: center of mass coincides with the base coordinates, so its
    // rotational column is zero and only the angular row remains.
    let trunk = &mut bodies[0];
    trunk.mass = model.trunk_mass_kg + added_mass;
    trunk.inertia = model.trunk_inertia;
    trunk.ncols = 0;
    trunk.ang = [2, 0, 0];
    trunk.nang = 1;
    trunk.com_z = kin.base.z;

    let wb = v[2];
    for l in 0..4 {
        let hip_c = joint_coord(2 * l);
        let knee_c = joint_coord(2 * l + 1);
        let wt = wb + v[hip_c];
        let ws = wt + v[knee_c];
        let hip_seg = kin.hip[l] - kin.base;
        let thigh_half = kin.thigh_dir[l] * (model.thigh_length_m / 2.0);
        let thigh_full = kin.thigh_dir[l] * model.thigh_length_m;
        let shank_half = kin.shank_dir[l] * (model.shank_length_m / 2.0);

        let thigh = &mut bodies[1 + 2 * l];
        thigh.mass = model.thigh_mass_kg;
        thigh.inertia = model.thigh_inertia;
        thigh.ncols =
            rot_columns(kin, Attach::Thigh(l), kin.thigh_com[l], &mut thigh.cols);
        thigh.ang = [2, hip_c, 0];
        thigh.nang = 2;
        thigh.bias_acc = -(hip_seg * (wb * wb) + thigh_half * (wt * wt));
        thigh.com_z = kin.thigh_com[l].z;

        let shank = &mut bodies[2 + 2 * l];
        shank.mass = model.shank_mass_kg;
        shank.inertia = model.shank_inertia;
        shank.ncols =
            rot_columns(kin, Attach::Shank(l), kin.shank_com[l], &mut shank.cols);
        shank.ang = [2, hip_c, knee_c];
        shank.nang = 3;
        shank.bias_acc = -(hip_seg * (wb * wb) + thigh_full * (wt * wt) + shank_half * (ws * ws));
        shank.com_z = kin.shank_com[l].z;
    }
    bodies
}

/// Dense symmetric mass matrix.
pub fn mass_matrix(
    model: &RobotModel,
    added_mass: f64,
    kin: &Kinematics,
    v: &[f64; NDOF],
) -> [[f64; NDOF]; NDOF] {
    let bodies = body_jacs(model, added_mass, kin, v);
    let mut m = [[0.0; NDOF]; NDOF];
    for b in &bodies {
        // Base translation block: identity columns.
        m[0][0] += b.mass;
        m[1][1] += b.mass;
        for &(i, ci) in b.cols.iter().take(b.ncols) {
            m[0][i] += b.mass * ci.x;
            m[1][i] += b.mass * ci.z;
            for &(j, cj) in b.cols.iter().take(b.ncols) {
                if j >= i {
                    m[i][j] += b.mass * ci.dot(cj);
                }
            }
        }
        for &i in b.ang.iter().take(b.nang) {
            for &j in b.ang.iter().take(b.nang) {
                if j >= i {
                    m[i][j] += b.inertia;
                }
            }
        }
    }
    for i in 0..NDOF {
        for j in 0..i {
            m[i][j] = m[j][i];
        }
    }
    m
}

/// Generalized force of gravity and velocity-product (bias) terms.
pub fn gravity_and_bias(
    model: &RobotModel,
    added_mass: f64,
    kin: &Kinematics,
    v: &[f64; NDOF],
) -> [f64; NDOF] {
    let bodies = body_jacs(model, added_mass, kin, v);
    let mut q = [0.0; NDOF];
    for b in &bodies {
        // f = gravity minus the inertial force of the bias acceleration.
        let f = Vec2::new(0.0, -GRAVITY * b.mass) - b.bias_acc * b.mass;
        q[0] += f.x;
        q[1] += f.z;
        for &(i, ci) in b.cols.iter().take(b.ncols) {
            q[i] += f.dot(ci);
        }
    }
    q
}

/// Total gravitational potential with z = 0 as reference.
pub fn potential_energy(model: &RobotModel, added_mass: f64, kin: &Kinematics) -> f64 {
    let mut pe = (model.trunk_mass_kg + added_mass) * kin.base.z;
    for l in 0..4 {
        pe += model.thigh_mass_kg * kin.thigh_com[l].z;
        pe += model.shank_mass_kg * kin.shank_com[l].z;
    }
    pe * GRAVITY
}

/// Kinetic energy at the given generalized velocity.
pub fn kinetic_energy(
    model: &RobotModel,
    added_mass: f64,
    kin: &Kinematics,
    v: &[f64; NDOF],
) -> f64 {
    let m = mass_matrix(model, added_mass, kin, v);
    let mut e = 0.0;
    for i in 0..NDOF {
        for j in 0..NDOF {
            e += 0.5 * v[i] * m[i][j] * v[j];
        }
    }
    e
}

/// In-place Cholesky solve of the (always positive definite) mass matrix.
pub fn solve_spd(a: &mut [[f64; NDOF]; NDOF], b: &mut [f64; NDOF]) {
    for i in 0..NDOF {
        for j in 0..i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / a[j][j];
        }
        let mut d = a[i][i];
        for k in 0..i {
            d -= a[i][k] * a[i][k];
        }
        assert!(d > 0.0, "mass matrix lost positive definiteness");
        a[i][i] = d.sqrt();
    }
    for i in 0..NDOF {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..NDOF).rev() {
        let mut s = b[i];
        for k in i + 1..NDOF {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
}

/// Solve M(q) vdot = q_applied + gravity + bias for the accelerations.
pub fn forward_dynamics(
    model: &RobotModel,
    added_mass: f64,
    kin: &Kinematics,
    v: &[f64; NDOF],
    q_applied: &[f64; NDOF],
) -> [f64; NDOF] {
    let mut m = mass_matrix(model, added_mass, kin, v);
    let gb = gravity_and_bias(model, added_mass, kin, v);
    let mut rhs = [0.0; NDOF];
    for i in 0..NDOF {
        rhs[i] = q_applied[i] + gb[i];
    }
    solve_spd(&mut m, &mut rhs);
    rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat;

    fn model() -> RobotModel {
        RobotModel::default()
    }

    fn default_q(m: &RobotModel) -> [f64; 8] {
        m.default_pose
    }

    #[test]
    fn kinematics_hangs_legs_down_at_zero_pose() {
        let m = model();
        let kin = kinematics(&m, Vec2::new(0.0, 1.0), 0.0, &[0.0; 8]);
        for l in 0..4 {
            assert!((kin.foot[l].z - (1.0 - 0.6)).abs() < 1e-12);
            let expect_x = if l < 2 { 0.3 } else { -0.3 };
            assert!((kin.foot[l].x - expect_x).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_hip_angle_swings_foot_forward() {
        let m = model();
        let kin0 = kinematics(&m, Vec2::ZERO, 0.0, &[0.0; 8]);
        let mut q = [0.0; 8];
        q[0] = 0.3;
        let kin1 = kinematics(&m, Vec2::ZERO, 0.0, &q);
        assert!(kin1.foot[0].x > kin0.foot[0].x);
        assert!(kin1.foot[0].z > kin0.foot[0].z);
    }

    #[test]
    fn point_velocity_matches_finite_difference_of_kinematics() {
        let m = model();
        let q0 = default_q(&m);
        let v: [f64; NDOF] = [0.3, -0.2, 0.7, 0.4, -0.5, 0.2, 0.1, -0.3, 0.6, -0.1, 0.25];
        let eps = 1e-7;
        let advance = |t: f64| {
            let base = Vec2::new(0.1 + v[0] * t, 0.9 + v[1] * t);
            let pitch = 0.2 + v[2] * t;
            let mut q = q0;
            for j in 0..8 {
                q[j] += v[3 + j] * t;
            }
            kinematics(&m, base, pitch, &q)
        };
        let ka = advance(-eps);
        let kb = advance(eps);
        let k0 = advance(0.0);
        for l in 0..4 {
            let fd = (kb.foot[l] - ka.foot[l]) * (1.0 / (2.0 * eps));
            let an = point_velocity(&k0, &v, Attach::Shank(l), k0.foot[l]);
            assert!((fd - an).norm() < 1e-6, "leg {l}: fd {fd:?} vs {an:?}");
        }
        let fd_trunk = (kb.trunk_seg[1] - ka.trunk_seg[1]) * (1.0 / (2.0 * eps));
        let an_trunk = point_velocity(&k0, &v, Attach::Trunk, k0.trunk_seg[1]);
        assert!((fd_trunk - an_trunk).norm() < 1e-6);
    }

    #[test]
    fn free_fall_accelerates_all_coordinates_uniformly() {
        // In a uniform field with no contacts, the solution of M vdot = Q_g
        // must be pure vertical acceleration with zero joint motion.
        let m = model();
        let q = default_q(&m);
        let kin = kinematics(&m, Vec2::new(0.0, 5.0), 0.4, &q);
        let v = [0.0; NDOF];
        let vdot = forward_dynamics(&m, 0.0, &kin, &v, &[0.0; NDOF]);
        assert!((vdot[0]).abs() < 1e-9);
        assert!((vdot[1] + GRAVITY).abs() < 1e-9);
        for c in 2..NDOF {
            assert!(vdot[c].abs() < 1e-9, "coordinate {c} accelerates in free fall");
        }
    }

    #[test]
    fn mass_matrix_translation_block_is_total_mass() {
        let m = model();
        let kin = kinematics(&m, Vec2::ZERO, 0.3, &default_q(&m));
        let mm = mass_matrix(&m, 2.5, &kin, &[0.0; NDOF]);
        assert!((mm[0][0] - (m.total_mass() + 2.5)).abs() < 1e-9);
        assert!((mm[1][1] - (m.total_mass() + 2.5)).abs() < 1e-9);
        assert!(mm[0][1].abs() < 1e-12);
        for i in 0..NDOF {
            for j in 0..NDOF {
                assert!((mm[i][j] - mm[j][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solve_spd_agrees_with_general_cholesky() {
        let m = model();
        let kin = kinematics(&m, Vec2::ZERO, -0.2, &default_q(&m));
        let v: [f64; NDOF] = [0.1, 0.2, -0.3, 0.05, 0.4, -0.2, 0.3, 0.1, -0.15, 0.2, -0.05];
        let mm = mass_matrix(&m, 0.0, &kin, &v);
        let b: [f64; NDOF] = std::array::from_fn(|i| (i as f64) * 0.37 - 1.1);

        let flat: Vec<f64> = mm.iter().flat_map(|r| r.iter().copied()).collect();
        let reference = crate::math::cholesky_solve(&Mat::from_rows(NDOF, NDOF, flat), &b);

        let mut a = mm;
        let mut x = b;
        solve_spd(&mut a, &mut x);
        for i in 0..NDOF {
            assert!((x[i] - reference[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn joint_torque_reacts_on_base_pitch() {
        // A hip torque must accelerate its own joint more than any joint of
        // another leg; cross-leg coupling exists only through the floating base.
        let m = model();
        let kin = kinematics(&m, Vec2::new(0.0, 3.0), 0.0, &default_q(&m));
        let v = [0.0; NDOF];
        let mut qa = [0.0; NDOF];
        qa[joint_coord(0)] = 5.0;
        let with_g = forward_dynamics(&m, 0.0, &kin, &v, &qa);
        let base = forward_dynamics(&m, 0.0, &kin, &v, &[0.0; NDOF]);
        let own = (with_g[joint_coord(0)] - base[joint_coord(0)]).abs();
        for j in 2..8 {
            let other = (with_g[joint_coord(j)] - base[joint_coord(j)]).abs();
            assert!(other < own, "cross-leg coupling exceeds direct response");
        }
        assert!(own > 1.0);
    }

    #[test]
    fn energies_match_hand_values_in_simple_pose() {
        let m = model();
        let kin = kinematics(&m, Vec2::new(0.0, 1.0), 0.0, &[0.0; 8]);
        // Hand sum: trunk 25 kg at 1.0, thighs 2.5 at 0.85, shanks 1.5 at 0.55.
        let pe = potential_energy(&m, 0.0, &kin);
        let expect = GRAVITY * (25.0 * 1.0 + 4.0 * (2.5 * 0.85 + 1.5 * 0.55));
        assert!((pe - expect).abs() < 1e-9);

        // Pure translation: KE = 1/2 m_total |v|^2.
        let mut v = [0.0; NDOF];
        v[0] = 1.2;
        v[1] = -0.4;
        let ke = kinetic_energy(&m, 0.0, &kin, &v);
        let expect = 0.5 * m.total_mass() * (1.2f64 * 1.2 + 0.4 * 0.4);
        assert!((ke - expect).abs() < 1e-9);
    }
}
