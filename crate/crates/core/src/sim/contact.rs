//! Penalty contacts: spring-damper normal forces with a short smoothing ramp
//! at onset, and regularized Coulomb friction through per-contact stick
//! anchors.
//!
//! Collision geometry is deliberately small: feet are discs, thighs, shanks
//! and the trunk are capsules sampled at a few feature points, terrain is a
//! 1D height field, and rungs are axis-aligned ellipses (major semi-axis
//! horizontal). Every applied contact force feeds the energy ledger via
//! `banked_rate` so total mechanical energy stays accountable.

use super::{AnchorKey, SimRuntime};
use crate::math::Vec2;
use crate::robot::RobotModel;
use crate::sim::dynamics::{add_point_force, point_velocity, Attach, Kinematics, NDOF};
use crate::terrain::TerrainInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct ContactParams {
    pub k_normal: f64,
    pub d_normal: f64,
    pub k_tangent: f64,
    pub d_tangent: f64,
    /// Penetration depth over which the normal force ramps in. Keeps forces
    /// continuously differentiable through contact onset.
    pub smooth_depth_m: f64,
    /// Friction for thigh, shank, and trunk contacts; feet use sampled
    /// per-foot coefficients.
    pub mu_default: f64,
    pub k_pin: f64,
    pub d_pin: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            k_normal: 5000.0,
            d_normal: 100.0,
            k_tangent: 2000.0,
            d_tangent: 50.0,
            smooth_depth_m: 0.0005,
            mu_default: 0.6,
            k_pin: 20000.0,
            d_pin: 200.0,
        }
    }
}

/// Overlap of a disc with a terrain surface.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    pub normal: Vec2,
    pub depth: f64,
}

fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * (3.0 - 2.0 * x)
    }
}

/// Disc of radius `r` at `p` against the height field.
pub fn disc_vs_field(terrain: &TerrainInstance, p: Vec2, r: f64) -> Option<SurfaceHit> {
    let h = terrain.height_at(p.x);
    let gap = p.z - r - h;
    if gap >= 0.0 {
        return None;
    }
    let normal = terrain.normal_at(p.x);
    Some(SurfaceHit { normal, depth: -gap * normal.z })
}

/// Closest boundary point and outward normal of an axis-aligned ellipse with
/// horizontal semi-axis `a` and vertical semi-axis `b`. Returns the signed
/// distance of `p` (negative inside).
pub fn ellipse_closest(center: Vec2, a: f64, b: f64, p: Vec2) -> (Vec2, Vec2, f64) {
    let d = p - center;
    if (a - b).abs() < 1e-12 {
        let r = d.norm();
        let n = if r > 1e-12 { d * (1.0 / r) } else { Vec2::new(0.0, 1.0) };
        return (center + n * a, n, r - a);
    }
    // A query at the center has no unique foot point and sits below the
    // bisection bracket; return the nearer-axis vertex directly.
    if d.norm() < 1e-9 * a.min(b) {
        return if a <= b {
            (center + Vec2::new(a, 0.0), Vec2::new(1.0, 0.0), -a)
        } else {
            (center + Vec2::new(0.0, b), Vec2::new(0.0, 1.0), -b)
        };
    }
    let inside = (d.x / a).powi(2) + (d.z / b).powi(2) <= 1.0;
    // Work in the first quadrant; reflect the answer back at the end.
    let sx = if d.x < 0.0 { -1.0 } else { 1.0 };
    let sz = if d.z < 0.0 { -1.0 } else { 1.0 };
    let u = Vec2::new((d.x * sx).max(1e-12 * a), (d.z * sz).max(1e-12 * b));
    // Root of f(t) = (a u.x / (t + a^2))^2 + (b u.z / (t + b^2))^2 - 1 on
    // (-min(a,b)^2, inf); f is strictly decreasing there.
    let tmin = a.min(b).powi(2);
    let mut lo = -tmin + 1e-14 * tmin.max(1.0);
    let mut hi = {
        let m = a.max(b);
        2.0 * m * (u.norm() + m)
    };
    let f = |t: f64| (a * u.x / (t + a * a)).powi(2) + (b * u.z / (t + b * b)).powi(2) - 1.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let cx = a * a * u.x / (t + a * a);
    let cz = b * b * u.z / (t + b * b);
    let closest = center + Vec2::new(cx * sx, cz * sz);
    let n_raw = Vec2::new(cx / (a * a) * sx, cz / (b * b) * sz);
    let n = n_raw.normalized();
    let dist = (p - closest).norm();
    (closest, n, if inside { -dist } else { dist })
}

/// Disc of radius `r` at `p` against an elliptic rung cross section.
pub fn disc_vs_rung(center: Vec2, a: f64, b: f64, p: Vec2, r: f64) -> Option<SurfaceHit> {
    // Cheap cull on the bounding circle.
    let lim = a.max(b) + r;
    let d = p - center;
    if d.dot(d) > (lim + 0.02) * (lim + 0.02) {
        return None;
    }
    let (_, n, sd) = ellipse_closest(center, a, b, p);
    if sd - r >= 0.0 {
        return None;
    }
    Some(SurfaceHit { normal: n, depth: r - sd })
}

/// Closest point on segment [e0, e1] to `target`.
pub fn segment_closest(e0: Vec2, e1: Vec2, target: Vec2) -> Vec2 {
    let d = e1 - e0;
    let len2 = d.dot(d);
    if len2 < 1e-18 {
        return e0;
    }
    let t = ((target - e0).dot(d) / len2).clamp(0.0, 1.0);
    e0 + d * t
}

/// Which reward family a contact feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyClass {
    Foot(usize),
    Thigh(usize),
    Shank(usize),
    Base,
}

struct Feature {
    key: (u8, u8),
    attach: Attach,
    pos: Vec2,
    radius: f64,
    mu: f64,
    class: BodyClass,
}

/// Per-contact record kept by the post pass for anchor maintenance.
#[derive(Debug, Clone, Copy)]
pub struct HitRecord {
    pub key: AnchorKey,
    pub point: Vec2,
    pub normal: Vec2,
    pub f_normal: f64,
    pub mu: f64,
}

/// Contact summary filled by the reporting pass at the end of a substep.
#[derive(Debug, Clone, Default)]
pub struct ContactReport {
    pub foot_contact: [bool; 4],
    pub thigh_contact: [bool; 4],
    pub shank_contact: [bool; 4],
    pub base_contact: bool,
    pub foot_force: [Vec2; 4],
    pub foot_normal: [f64; 4],
    pub hits: Vec<HitRecord>,
}

const GEOM_FIELD: u32 = 0;

fn geom_rung(idx: usize) -> u32 {
    1 + idx as u32
}

fn leg_of(class: BodyClass) -> Option<usize> {
    match class {
        BodyClass::Foot(l) | BodyClass::Thigh(l) | BodyClass::Shank(l) => Some(l),
        BodyClass::Base => None,
    }
}

/// The fixed point features tested against the height field: foot, thigh
/// midpoint, knee end and shank midpoint per leg, both trunk capsule ends.
fn point_features(
    model: &RobotModel,
    params: &ContactParams,
    kin: &Kinematics,
    foot_mu: &[f64; 4],
) -> Vec<Feature> {
    let mut features: Vec<Feature> = Vec::with_capacity(18);
    for l in 0..4 {
        features.push(Feature {
            key: (l as u8, 0),
            attach: Attach::Shank(l),
            pos: kin.foot[l],
            radius: model.foot_radius_m,
            mu: foot_mu[l],
            class: BodyClass::Foot(l),
        });
        features.push(Feature {
            key: (4 + l as u8, 0),
            attach: Attach::Thigh(l),
            pos: (kin.hip[l] + kin.knee[l]) * 0.5,
            radius: model.link_radius_m,
            mu: params.mu_default,
            class: BodyClass::Thigh(l),
        });
        features.push(Feature {
            key: (8 + l as u8, 0),
            attach: Attach::Shank(l),
            pos: kin.knee[l],
            radius: model.link_radius_m,
            mu: params.mu_default,
            class: BodyClass::Shank(l),
        });
        features.push(Feature {
            key: (8 + l as u8, 1),
            attach: Attach::Shank(l),
            pos: (kin.knee[l] + kin.foot[l]) * 0.5,
            radius: model.link_radius_m,
            mu: params.mu_default,
            class: BodyClass::Shank(l),
        });
    }
    for (i, end) in kin.trunk_seg.iter().enumerate() {
        features.push(Feature {
            key: (12, i as u8),
            attach: Attach::Trunk,
            pos: *end,
            radius: model.trunk_radius_m,
            mu: params.mu_default,
            class: BodyClass::Base,
        });
    }
    features
}

/// True when any collision feature could cross a contact onset or release
/// inside the next `dt`: its gap to some surface is within one smoothing ramp
/// plus the distance the point can travel. The integrator subdivides such
/// substeps because the force ramp is much steeper than the usual dynamics.
pub fn transition_near(
    model: &RobotModel,
    params: &ContactParams,
    kin: &Kinematics,
    v: &[f64; NDOF],
    terrain: &TerrainInstance,
    runtime: &SimRuntime,
    dt: f64,
) -> bool {
    let ramp = params.smooth_depth_m;
    let (rung_a, rung_b) = terrain.rung_radii();
    let features = point_features(model, params, kin, &[0.0; 4]);

    let near = |gap: f64, p: Vec2, attach: Attach| -> bool {
        let travel = point_velocity(kin, v, attach, p).norm() * dt;
        gap.abs() < ramp + travel
    };

    for f in &features {
        let gap = f.pos.z - f.radius - terrain.height_at(f.pos.x);
        if near(gap, f.pos, f.attach) {
            return true;
        }
    }

    let reach = rung_a.max(rung_b);
    for (ri, center) in terrain.rung_centers.iter().enumerate() {
        let probe = |p: Vec2, r: f64, attach: Attach| -> bool {
            // Bounding-circle distance is a lower bound on the true gap.
            if (p - *center).norm() - reach - r > ramp + 0.1 {
                return false;
            }
            let (_, _, sd) = ellipse_closest(*center, rung_a, rung_b, p);
            near(sd - r, p, attach)
        };
        for f in &features {
            if let Some(l) = leg_of(f.class) {
                if runtime.rung_blocked(l, ri) {
                    continue;
                }
                if matches!(f.class, BodyClass::Foot(_))
                    && probe(f.pos, f.radius, f.attach)
                {
                    return true;
                }
            }
        }
        for l in 0..4 {
            if runtime.rung_blocked(l, ri) {
                continue;
            }
            let tp = segment_closest(kin.hip[l], kin.knee[l], *center);
            if probe(tp, model.link_radius_m, Attach::Thigh(l)) {
                return true;
            }
            let sp = segment_closest(kin.knee[l], kin.foot[l], *center);
            if probe(sp, model.link_radius_m, Attach::Shank(l)) {
                return true;
            }
        }
        let bp = segment_closest(kin.trunk_seg[0], kin.trunk_seg[1], *center);
        if probe(bp, model.trunk_radius_m, Attach::Trunk) {
            return true;
        }
    }
    false
}

/// Evaluate all contact and hook-pin forces at the given kinematic state.
///
/// Anchors and pins in `runtime` are treated as frozen data; mutation happens
/// only in `refresh_anchors`. Returns the generalized force vector and the
/// rate at which the energy ledger absorbs contact work.
pub fn contact_pass(
    model: &RobotModel,
    params: &ContactParams,
    kin: &Kinematics,
    v: &[f64; NDOF],
    terrain: &TerrainInstance,
    foot_mu: &[f64; 4],
    runtime: &SimRuntime,
    mut report: Option<&mut ContactReport>,
) -> ([f64; NDOF], f64) {
    let mut gen = [0.0; NDOF];
    let mut banked_rate = 0.0;
    let (rung_a, rung_b) = terrain.rung_radii();
    let features = point_features(model, params, kin, foot_mu);

    let apply = |feat_key: (u8, u8),
                     attach: Attach,
                     class: BodyClass,
                     geom: u32,
                     p: Vec2,
                     mu: f64,
                     hit: SurfaceHit,
                     gen: &mut [f64; NDOF],
                     banked_rate: &mut f64,
                     report: &mut Option<&mut ContactReport>| {
        let n = hit.normal;
        let vp = point_velocity(kin, v, attach, p);
        let approach = -vp.dot(n);
        let ramp = smoothstep(hit.depth / params.smooth_depth_m);
        let f_n = ramp * (params.k_normal * hit.depth + params.d_normal * approach).max(0.0);
        if f_n <= 0.0 {
            return;
        }
        let key: AnchorKey = (feat_key.0, feat_key.1, geom);
        let v_t = vp - n * vp.dot(n);
        let mut f_t = match runtime.anchors.get(&key) {
            Some(anchor) => {
                let g = p - *anchor;
                let g_t = g - n * g.dot(n);
                -(g_t * params.k_tangent) - v_t * params.d_tangent
            }
            None => -(v_t * params.d_tangent),
        };
        let cap = mu * f_n;
        let mag = f_t.norm();
        if mag > cap {
            f_t = f_t * (cap / mag);
        }
        let force = n * f_n + f_t;
        add_point_force(kin, attach, p, force, gen);
        *banked_rate -= force.dot(vp);
        if let Some(rep) = report.as_deref_mut() {
            match class {
                BodyClass::Foot(l) => {
                    rep.foot_contact[l] = true;
                    rep.foot_force[l] += force;
                    rep.foot_normal[l] += f_n;
                }
                BodyClass::Thigh(l) => rep.thigh_contact[l] = true,
                BodyClass::Shank(l) => rep.shank_contact[l] = true,
                BodyClass::Base => rep.base_contact = true,
            }
            rep.hits.push(HitRecord { key, point: p, normal: n, f_normal: f_n, mu });
        }
    };

    // Feature points against the height field.
    for f in &features {
        if let Some(hit) = disc_vs_field(terrain, f.pos, f.radius) {
            apply(f.key, f.attach, f.class, GEOM_FIELD, f.pos, f.mu, hit, &mut gen, &mut banked_rate, &mut report);
        }
    }

    // Feet and link segments against rungs.
    for (ri, center) in terrain.rung_centers.iter().enumerate() {
        let geom = geom_rung(ri);
        for l in 0..4 {
            if runtime.rung_blocked(l, ri) {
                continue;
            }
            if let Some(hit) = disc_vs_rung(*center, rung_a, rung_b, kin.foot[l], model.foot_radius_m) {
                apply((l as u8, 0), Attach::Shank(l), BodyClass::Foot(l), geom, kin.foot[l], foot_mu[l], hit, &mut gen, &mut banked_rate, &mut report);
            }
            let tp = segment_closest(kin.hip[l], kin.knee[l], *center);
            if let Some(hit) = disc_vs_rung(*center, rung_a, rung_b, tp, model.link_radius_m) {
                apply((4 + l as u8, 2), Attach::Thigh(l), BodyClass::Thigh(l), geom, tp, params.mu_default, hit, &mut gen, &mut banked_rate, &mut report);
            }
            let sp = segment_closest(kin.knee[l], kin.foot[l], *center);
            if let Some(hit) = disc_vs_rung(*center, rung_a, rung_b, sp, model.link_radius_m) {
                apply((8 + l as u8, 2), Attach::Shank(l), BodyClass::Shank(l), geom, sp, params.mu_default, hit, &mut gen, &mut banked_rate, &mut report);
            }
        }
        let bp = segment_closest(kin.trunk_seg[0], kin.trunk_seg[1], *center);
        if let Some(hit) = disc_vs_rung(*center, rung_a, rung_b, bp, model.trunk_radius_m) {
            apply((12, 2), Attach::Trunk, BodyClass::Base, geom, bp, params.mu_default, hit, &mut gen, &mut banked_rate, &mut report);
        }
    }

    // Hook pins: bilateral springs at the engagement rest length.
    if model.end_effector.is_hook() {
        for l in 0..4 {
            let Some(pin) = &runtime.pins[l] else { continue };
            let center = terrain.rung_centers[pin.rung];
            let (pocket, _) = super::hook::pocket_world(model, kin, l);
            let r = pocket - center;
            let len = r.norm();
            if len < 1e-9 {
                continue;
            }
            let rhat = r * (1.0 / len);
            let vp = point_velocity(kin, v, Attach::Shank(l), pocket);
            let stretch_rate = rhat.dot(vp);
            let f_r = params.k_pin * (len - pin.rest_len_m) + params.d_pin * stretch_rate;
            let force = rhat * (-f_r);
            add_point_force(kin, Attach::Shank(l), pocket, force, &mut gen);
            banked_rate -= force.dot(vp);
            if let Some(rep) = report.as_deref_mut() {
                rep.foot_contact[l] = true;
                rep.foot_force[l] += force;
                // Radial pin force: negative is tension pulling toward the rung.
                rep.foot_normal[l] += -f_r;
            }
        }
    }

    (gen, banked_rate)
}

/// Energy stored in the ramped normal spring at penetration `depth`.
///
/// Exact integral of the force `smoothstep(d/w) * k * d`, so releasing a
/// contact returns exactly the work the spring absorbed.
fn normal_potential(params: &ContactParams, depth: f64) -> f64 {
    if depth <= 0.0 {
        return 0.0;
    }
    let w = params.smooth_depth_m;
    let k = params.k_normal;
    if depth >= w {
        k * 0.5 * (depth * depth - w * w) + k * w * w * (7.0 / 20.0)
    } else {
        let x = depth / w;
        k * w * w * (0.75 * x.powi(4) - 0.4 * x.powi(5))
    }
}

/// Elastic energy currently stored in contact springs, stick anchors and
/// hook pins.
///
/// Must enumerate exactly the contacts of `contact_pass`: kinetic plus
/// gravitational plus this quantity is non-increasing under passive dynamics,
/// which is the invariant the energy tests pin down. Events that truncate a
/// spring (friction-cap projection, anchor drop, pin release, the no-adhesion
/// clamp) only discard stored energy, so they cannot break the inequality.
pub fn elastic_energy(
    model: &RobotModel,
    params: &ContactParams,
    kin: &Kinematics,
    terrain: &TerrainInstance,
    foot_mu: &[f64; 4],
    runtime: &SimRuntime,
) -> f64 {
    let mut e = 0.0;
    let (rung_a, rung_b) = terrain.rung_radii();
    let features = point_features(model, params, kin, foot_mu);

    let mut tally = |key: AnchorKey, p: Vec2, hit: SurfaceHit| {
        e += normal_potential(params, hit.depth);
        if let Some(anchor) = runtime.anchors.get(&key) {
            let g = p - *anchor;
            let g_t = g - hit.normal * g.dot(hit.normal);
            e += 0.5 * params.k_tangent * g_t.dot(g_t);
        }
    };

    for f in &features {
        if let Some(hit) = disc_vs_field(terrain, f.pos, f.radius) {
            tally((f.key.0, f.key.1, GEOM_FIELD), f.pos, hit);
        }
    }
    for (ri, center) in terrain.rung_centers.iter().enumerate() {
        let geom = geom_rung(ri);
        for l in 0..4 {
            if runtime.rung_blocked(l, ri) {
                continue;
            }
            if let Some(hit) = disc_vs_rung(*center, rung_a, rung_b, kin.foot[l], model.foot_radius_m) {
                tally((l as u8, 0, geom), kin.foot[l], hit);
            }
            let tp = segment_closest(kin.hip[l], kin.knee[l], *center);
            if let Some(hit) = disc_vs_rung(*center, rung_a, rung_b, tp, model.link_radius_m) {
                tally((4 + l as u8, 2, geom), tp, hit);
            }
            let sp = segment_closest(kin.knee[l], kin.foot[l], *center);
            if let Some(hit) = disc_vs_rung(*center, rung_a, rung_b, sp, model.link_radius_m) {
                tally((8 + l as u8, 2, geom), sp, hit);
            }
        }
        let bp = segment_closest(kin.trunk_seg[0], kin.trunk_seg[1], *center);
        if let Some(hit) = disc_vs_rung(*center, rung_a, rung_b, bp, model.trunk_radius_m) {
            tally((12, 2, geom), bp, hit);
        }
    }

    if model.end_effector.is_hook() {
        for l in 0..4 {
            let Some(pin) = &runtime.pins[l] else { continue };
            let center = terrain.rung_centers[pin.rung];
            let (pocket, _) = super::hook::pocket_world(model, kin, l);
            let stretch = (pocket - center).norm() - pin.rest_len_m;
            e += 0.5 * params.k_pin * stretch * stretch;
        }
    }
    e
}

/// Rebuild the stick-anchor map from the hits of the reporting pass.
///
/// Existing anchors are kept, projected back onto the friction cone and onto
/// the current tangent plane; anchors of separated contacts are dropped; new
/// contacts anchor at the current point.
pub fn refresh_anchors(params: &ContactParams, runtime: &mut SimRuntime, hits: &[HitRecord]) {
    let mut next = std::collections::BTreeMap::new();
    for h in hits {
        if h.f_normal <= 0.0 {
            continue;
        }
        let anchor = match runtime.anchors.get(&h.key) {
            Some(old) => {
                let g = h.point - *old;
                let mut g_t = g - h.normal * g.dot(h.normal);
                let max_g = h.mu * h.f_normal / params.k_tangent;
                let mag = g_t.norm();
                if mag > max_g {
                    g_t = g_t * (max_g / mag);
                }
                h.point - g_t
            }
            None => h.point,
        };
        next.insert(h.key, anchor);
    }
    runtime.anchors = next;
}
