//! Hook end-effector capture and release.
//!
//! A hook pocket captures a rung when the rung is thin enough to pass the
//! opening, the pocket center is within the engage tolerance of the rung
//! center, and the aperture faces the rung. While engaged the foot is pinned
//! to the rung by a bilateral spring at the engagement distance, so it can
//! transmit tension. The pin releases when the pocket's relative motion
//! points out through the aperture escape cone, or when tension exceeds the
//! breakaway limit.

use super::{PinState, SimRuntime};
use crate::math::Vec2;
use crate::robot::{EndEffector, HookModel, RobotModel};
use crate::sim::dynamics::{point_velocity, Attach, Kinematics, NDOF};
use crate::terrain::TerrainInstance;

/// Minimum pocket speed for an aperture-cone release; below this the state
/// is treated as "no relative motion" and the pin persists.
pub const RELEASE_MIN_SPEED: f64 = 0.05;

/// Clearance margin the foot must gain past the inflated rung outline before
/// unilateral contact with a just-released rung is restored.
pub const RELEASE_CLEAR_MARGIN: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookPhase {
    Disengaged,
    /// Touching the rung like a regular foot, no capture.
    Resting,
    Engaged,
}

/// Pocket center and aperture direction in world frame. The ankle frame is
/// anchored at the foot point with +z running from foot toward knee.
pub fn pocket_world(model: &RobotModel, kin: &Kinematics, leg: usize) -> (Vec2, Vec2) {
    let (offset, open_local) = match &model.end_effector {
        EndEffector::Hook(h) => (h.pocket_center_offset, h.opening_dir_local),
        EndEffector::Ball => (Vec2::ZERO, Vec2::new(0.0, 1.0)),
    };
    let ang = kin.shank_ang[leg];
    (kin.foot[leg] + offset.rotate(ang), open_local.rotate(ang).normalized())
}

/// Classify one pocket-rung query. `rung_major` and `rung_minor` are the
/// cross-section semi-axes; the larger one decides whether the rung fits
/// through the opening.
pub fn hook_engage_check(
    pocket: Vec2,
    d_open: Vec2,
    rung_center: Vec2,
    rung_major: f64,
    rung_minor: f64,
    foot_radius: f64,
    hook: &HookModel,
) -> HookPhase {
    let to_rung = rung_center - pocket;
    let dist = to_rung.norm();
    let fits = rung_major.max(rung_minor) < hook.opening_radius_m;
    let close = dist <= hook.engage_tolerance_m;
    // At near-coincidence the aperture direction test is vacuous.
    let facing =
        dist < 1e-6 || d_open.dot(to_rung) >= hook.aperture_half_angle_rad.cos() * dist;
    if fits && close && facing {
        return HookPhase::Engaged;
    }
    let (_, _, sd) = super::contact::ellipse_closest(rung_center, rung_major, rung_minor, pocket);
    if sd <= foot_radius {
        HookPhase::Resting
    } else {
        HookPhase::Disengaged
    }
}

/// True when an engaged pin must let go: the pocket's relative displacement
/// direction lies inside the aperture escape cone, or the pin tension exceeds
/// the breakaway limit. Zero relative motion never releases.
pub fn hook_release_check(rel_vel: Vec2, d_open: Vec2, pin_tension_n: f64, hook: &HookModel) -> bool {
    if pin_tension_n > hook.breakaway_tension_n {
        return true;
    }
    let speed = rel_vel.norm();
    if speed < RELEASE_MIN_SPEED {
        return false;
    }
    rel_vel.dot(d_open) >= hook.aperture_half_angle_rad.cos() * speed
}

/// Advance the capture state machine for all four feet at a substep boundary.
pub fn update_hooks(
    model: &RobotModel,
    params: &super::contact::ContactParams,
    kin: &Kinematics,
    v: &[f64; NDOF],
    terrain: &TerrainInstance,
    runtime: &mut SimRuntime,
) {
    let EndEffector::Hook(hook) = &model.end_effector else {
        return;
    };
    let (rung_a, rung_b) = terrain.rung_radii();

    for l in 0..4 {
        let (pocket, d_open) = pocket_world(model, kin, l);

        // Clear a post-release latch once the foot is safely outside the
        // inflated rung outline.
        if let Some(ri) = runtime.latched[l] {
            let (_, _, sd) = super::contact::ellipse_closest(
                terrain.rung_centers[ri],
                rung_a,
                rung_b,
                kin.foot[l],
            );
            if sd > model.foot_radius_m + RELEASE_CLEAR_MARGIN {
                runtime.latched[l] = None;
            }
        }

        match runtime.pins[l] {
            Some(pin) => {
                let center = terrain.rung_centers[pin.rung];
                let r = pocket - center;
                let len = r.norm();
                let vp = point_velocity(kin, v, Attach::Shank(l), pocket);
                let tension = if len > 1e-9 {
                    let rhat = r * (1.0 / len);
                    params.k_pin * (len - pin.rest_len_m) + params.d_pin * rhat.dot(vp)
                } else {
                    0.0
                };
                if hook_release_check(vp, d_open, tension, hook) {
                    runtime.pins[l] = None;
                    runtime.latched[l] = Some(pin.rung);
                }
            }
            None => {
                if runtime.latched[l].is_some() {
                    continue;
                }
                // Nearest rung is the only engagement candidate.
                let mut best: Option<(usize, f64)> = None;
                for (ri, c) in terrain.rung_centers.iter().enumerate() {
                    let d2 = (*c - pocket).dot(*c - pocket);
                    if best.map_or(true, |(_, bd)| d2 < bd) {
                        best = Some((ri, d2));
                    }
                }
                if let Some((ri, _)) = best {
                    let phase = hook_engage_check(
                        pocket,
                        d_open,
                        terrain.rung_centers[ri],
                        rung_a,
                        rung_b,
                        model.foot_radius_m,
                        hook,
                    );
                    if phase == HookPhase::Engaged {
                        let rest = (pocket - terrain.rung_centers[ri]).norm();
                        runtime.pins[l] = Some(PinState { rung: ri, rest_len_m: rest });
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hook() -> HookModel {
        HookModel::default()
    }

    #[test]
    fn engagement_requires_thin_rung() {
        let h = hook();
        // Rung exactly at the opening radius must never engage.
        for radius in [0.0275, 0.03, 0.035, 0.1] {
            let phase = hook_engage_check(
                Vec2::ZERO,
                Vec2::new(0.0, 1.0),
                Vec2::new(0.0, 0.001),
                radius,
                0.025,
                0.03,
                &h,
            );
            assert_ne!(phase, HookPhase::Engaged, "radius {radius} engaged");
        }
        let phase = hook_engage_check(
            Vec2::ZERO,
            Vec2::new(0.0, 1.0),
            Vec2::new(0.0, 0.001),
            0.025,
            0.025,
            0.03,
            &h,
        );
        assert_eq!(phase, HookPhase::Engaged);
    }

    #[test]
    fn engagement_requires_proximity_and_facing() {
        let h = hook();
        // Too far: tolerance is 2 cm.
        let far = hook_engage_check(
            Vec2::ZERO,
            Vec2::new(0.0, 1.0),
            Vec2::new(0.0, 0.05),
            0.02,
            0.02,
            0.03,
            &h,
        );
        assert_ne!(far, HookPhase::Engaged);
        // Close but the aperture points away from the rung (rung below,
        // opening up, 60 degree cone).
        let behind = hook_engage_check(
            Vec2::ZERO,
            Vec2::new(0.0, 1.0),
            Vec2::new(0.0, -0.01),
            0.02,
            0.02,
            0.03,
            &h,
        );
        assert_ne!(behind, HookPhase::Engaged);
        // Rung above and inside the cone.
        let ok = hook_engage_check(
            Vec2::ZERO,
            Vec2::new(0.0, 1.0),
            Vec2::new(0.004, 0.01),
            0.02,
            0.02,
            0.03,
            &h,
        );
        assert_eq!(ok, HookPhase::Engaged);
    }

    #[test]
    fn thick_rung_rests_when_touching() {
        let h = hook();
        let phase = hook_engage_check(
            Vec2::new(0.0, 0.06),
            Vec2::new(0.0, 1.0),
            Vec2::ZERO,
            0.035,
            0.035,
            0.03,
            &h,
        );
        assert_eq!(phase, HookPhase::Resting);
    }

    #[test]
    fn release_follows_escape_cone() {
        let h = hook();
        let up = Vec2::new(0.0, 1.0);
        // Pull straight out of the opening.
        assert!(hook_release_check(Vec2::new(0.0, 0.3), up, 0.0, &h));
        // Pull opposite the opening: tension, no release.
        assert!(!hook_release_check(Vec2::new(0.0, -0.3), up, 100.0, &h));
        // Sideways at 70 degrees from the opening: outside the 60 degree cone.
        let dir = Vec2::new(70f64.to_radians().sin(), 70f64.to_radians().cos());
        assert!(!hook_release_check(dir * 0.3, up, 0.0, &h));
        // Inside the cone at 45 degrees.
        let dir = Vec2::new(45f64.to_radians().sin(), 45f64.to_radians().cos());
        assert!(hook_release_check(dir * 0.3, up, 0.0, &h));
        // Zero relative motion never releases.
        assert!(!hook_release_check(Vec2::ZERO, up, 0.0, &h));
        // Breakaway tension releases regardless of direction.
        assert!(hook_release_check(Vec2::new(0.0, -0.3), up, 600.0, &h));
    }
}
