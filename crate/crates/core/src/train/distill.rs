//! Teacher-to-student distillation.
//!
//! The student drives the rollouts (dataset-aggregation style), a frozen
//! teacher labels every visited state with its action, and a recurrent
//! belief encoder feeds the student trunk while a linear decoder is trained
//! to reconstruct the privileged state. Gradients flow through truncated
//! windows; the hidden state carries across windows as a constant and
//! restarts whenever an episode does.

use super::ppo::Optimizer;
use super::rollout::carve;
use crate::env::{LadderEnv, RolloutEnv, Transition};
use crate::nn::gru::GruStepCache;
use crate::nn::policy::{BeliefEncoder, PolicyCache, PolicyNet, PolicySpec};
use crate::nn::Arena;
use crate::obs::{PRIV_DIM, STUDENT_OBS_DIM, TEACHER_OBS_DIM};
use crate::rng;
use rayon::prelude::*;

/// Environment surface for distillation: both observation views plus the
/// clean privileged vector the decoder regresses onto. All outputs describe
/// the same post-transition state.
pub trait DistillEnv {
    fn teacher_dim(&self) -> usize;
    fn student_dim(&self) -> usize;
    /// Width of the reconstruction target; zero disables reconstruction.
    fn priv_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, teacher: &mut [f64], student: &mut [f64], privs: &mut [f64]);
    fn step(
        &mut self,
        action: &[f64],
        teacher: &mut [f64],
        student: &mut [f64],
        privs: &mut [f64],
    ) -> Transition;
}

impl DistillEnv for LadderEnv {
    fn teacher_dim(&self) -> usize {
        TEACHER_OBS_DIM
    }

    fn student_dim(&self) -> usize {
        STUDENT_OBS_DIM
    }

    fn priv_dim(&self) -> usize {
        PRIV_DIM
    }

    fn act_dim(&self) -> usize {
        8
    }

    fn reset(&mut self, teacher: &mut [f64], student: &mut [f64], privs: &mut [f64]) {
        self.reset_episode();
        teacher.copy_from_slice(&self.teacher_obs());
        student.copy_from_slice(&self.student_obs());
        privs.copy_from_slice(&self.privileged());
    }

    fn step(
        &mut self,
        action: &[f64],
        teacher: &mut [f64],
        student: &mut [f64],
        privs: &mut [f64],
    ) -> Transition {
        let mut a = [0.0; 8];
        a.copy_from_slice(&action[..8]);
        let rec = self.step_targets(&a);
        teacher.copy_from_slice(&self.teacher_obs());
        student.copy_from_slice(&self.student_obs());
        privs.copy_from_slice(&self.privileged());
        Transition {
            reward: rec.reward.total,
            done: rec.done,
            timeout: rec.done && !self.terminated(),
            diverged: rec.diverged,
            reached: self.reached_goal(),
        }
    }
}

/// Adapter that shows teacher and student the same observation and has no
/// privileged state, for self-distillation diagnostics on plain tasks.
pub struct MirrorEnv<E: RolloutEnv> {
    pub env: E,
    costs: Vec<f64>,
}

impl<E: RolloutEnv> MirrorEnv<E> {
    pub fn new(env: E) -> Self {
        let costs = vec![0.0; env.cost_dim()];
        MirrorEnv { env, costs }
    }
}

impl<E: RolloutEnv> DistillEnv for MirrorEnv<E> {
    fn teacher_dim(&self) -> usize {
        self.env.obs_dim()
    }

    fn student_dim(&self) -> usize {
        self.env.obs_dim()
    }

    fn priv_dim(&self) -> usize {
        0
    }

    fn act_dim(&self) -> usize {
        self.env.act_dim()
    }

    fn reset(&mut self, teacher: &mut [f64], student: &mut [f64], _privs: &mut [f64]) {
        self.env.reset(teacher);
        student.copy_from_slice(teacher);
    }

    fn step(
        &mut self,
        action: &[f64],
        teacher: &mut [f64],
        student: &mut [f64],
        _privs: &mut [f64],
    ) -> Transition {
        let tr = self.env.step(action, teacher, &mut self.costs);
        student.copy_from_slice(teacher);
        tr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Weight of the reconstruction term; zero isolates the decoder.
    pub beta: f64,
    /// Gradient truncation length in steps.
    pub window: usize,
    pub lr: f64,
    /// Label rollouts with the teacher driving instead of the student.
    pub pure_bc: bool,
    /// Environments whose window traces are held in memory at once.
    pub env_chunk: usize,
    pub max_grad_norm: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            beta: 0.5,
            window: 120,
            lr: 3e-4,
            pure_bc: false,
            env_chunk: 16,
            max_grad_norm: 1.0,
        }
    }
}

/// The trainable student bundle: one arena holding the policy, the belief
/// cell and its decoder.
pub struct Student {
    pub arena: Arena,
    pub policy: PolicyNet,
    pub belief: BeliefEncoder,
}

impl Student {
    /// Full-size student for the climbing task.
    pub fn quadruped(seed: u64) -> Student {
        Student::build(PolicySpec::student(128), STUDENT_OBS_DIM, 128, PRIV_DIM, seed)
    }

    /// Small student for diagnostics.
    pub fn toy(
        obs_dim: usize,
        act_dim: usize,
        trunk: &[usize],
        belief_hidden: usize,
        priv_dim: usize,
        seed: u64,
    ) -> Student {
        let spec =
            PolicySpec { extra_dim: belief_hidden, ..PolicySpec::toy(obs_dim, act_dim, trunk) };
        Student::build(spec, obs_dim, belief_hidden, priv_dim, seed)
    }

    fn build(
        spec: PolicySpec,
        obs_dim: usize,
        hidden: usize,
        priv_dim: usize,
        seed: u64,
    ) -> Student {
        let mut arena = Arena::new();
        let mut rng = rng::root(seed);
        let policy = PolicyNet::new(&mut arena, "student", spec, &mut rng);
        let belief = BeliefEncoder::new(&mut arena, "belief", obs_dim, hidden, priv_dim, &mut rng);
        Student { arena, policy, belief }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistillStats {
    /// Mean squared action gap per step.
    pub imitation: f64,
    /// Mean squared reconstruction error per step (zero when disabled).
    pub recon: f64,
    /// Reconstruction error restricted to the last three channels, the
    /// relative ladder pose in the climbing layout.
    pub pose_recon: f64,
    pub episodes: u64,
    pub diverged: u64,
    pub skipped: bool,
}

/// Per-environment window trace kept for backward-through-time.
#[derive(Default)]
struct Trace {
    gru: Vec<GruStepCache>,
    pol: Vec<PolicyCache>,
    /// Hidden state after each step, the decoder input.
    h_seq: Vec<f64>,
    /// True where the hidden state was restarted before the step.
    started: Vec<bool>,
    t_act: Vec<f64>,
    privs: Vec<f64>,
    imitation: f64,
    episodes: u64,
    diverged: u64,
}

/// Rollout-and-update driver owning the carried hidden states and the
/// current observations of every environment.
pub struct Distiller {
    h: Vec<f64>,
    fresh: Vec<bool>,
    t_obs: Vec<f64>,
    s_obs: Vec<f64>,
    privs: Vec<f64>,
    pub opt: Optimizer,
    td: usize,
    sd: usize,
    pd: usize,
    act: usize,
    nh: usize,
}

impl Distiller {
    pub fn new<E: DistillEnv>(envs: &mut [E], student: &Student) -> Distiller {
        assert!(!envs.is_empty());
        let (td, sd, pd, act) = (
            envs[0].teacher_dim(),
            envs[0].student_dim(),
            envs[0].priv_dim(),
            envs[0].act_dim(),
        );
        assert_eq!(sd, student.policy.spec.obs_dim, "student observation width mismatch");
        assert_eq!(student.policy.spec.extra_dim, student.belief.hidden());
        if pd > 0 {
            assert_eq!(pd, student.belief.priv_dim(), "reconstruction width mismatch");
        }
        let n = envs.len();
        let nh = student.belief.hidden();
        let mut d = Distiller {
            h: vec![0.0; n * nh],
            fresh: vec![true; n],
            t_obs: vec![0.0; n * td],
            s_obs: vec![0.0; n * sd],
            privs: vec![0.0; n * pd],
            opt: Optimizer::new(student.arena.len()),
            td,
            sd,
            pd,
            act,
            nh,
        };
        for (i, env) in envs.iter_mut().enumerate() {
            env.reset(
                &mut d.t_obs[i * td..(i + 1) * td],
                &mut d.s_obs[i * sd..(i + 1) * sd],
                &mut d.privs[i * pd..(i + 1) * pd],
            );
        }
        d
    }

    /// Carried hidden states, one row per environment.
    pub fn hidden(&self) -> &[f64] {
        &self.h
    }

    /// Roll one truncated window over every environment and accumulate the
    /// loss gradient into the student arena, leaving the weights alone.
    /// Rollouts parallelize across the environments of a chunk; gradient
    /// accumulation stays serial in a fixed order.
    fn accumulate_window<E: DistillEnv + Send>(
        &mut self,
        envs: &mut [E],
        teacher_arena: &Arena,
        teacher: &PolicyNet,
        student: &mut Student,
        cfg: &DistillConfig,
    ) -> DistillStats {
        assert_eq!(teacher.spec.obs_dim, self.td, "teacher observation width mismatch");
        assert_eq!(teacher.spec.act_dim, self.act);
        let n = envs.len();
        let (window, chunk) = (cfg.window, cfg.env_chunk.max(1));
        let (td, sd, pd, act, nh) = (self.td, self.sd, self.pd, self.act, self.nh);
        let use_recon = cfg.beta > 0.0 && pd > 0;
        let scale = 1.0 / (n * window) as f64;
        let mut stats = DistillStats::default();
        let mut traces: Vec<Trace> = Vec::new();

        let mut start = 0;
        while start < n {
            let len = chunk.min(n - start);
            traces.resize_with(len, Trace::default);

            struct Slot<'s, E> {
                env: &'s mut E,
                h: &'s mut [f64],
                fresh: &'s mut bool,
                t_obs: &'s mut [f64],
                s_obs: &'s mut [f64],
                privs: &'s mut [f64],
                trace: &'s mut Trace,
            }
            let mut slots: Vec<Slot<E>> = {
                let end = start + len;
                let it_env = envs[start..end].iter_mut();
                let it_h = carve(&mut self.h[start * nh..end * nh], nh, len).into_iter();
                let it_fresh = self.fresh[start..end].iter_mut();
                let it_t = carve(&mut self.t_obs[start * td..end * td], td, len).into_iter();
                let it_s = carve(&mut self.s_obs[start * sd..end * sd], sd, len).into_iter();
                let it_p = carve(&mut self.privs[start * pd..end * pd], pd, len).into_iter();
                let it_tr = traces.iter_mut();
                it_env
                    .zip(it_h)
                    .zip(it_fresh)
                    .zip(it_t)
                    .zip(it_s)
                    .zip(it_p)
                    .zip(it_tr)
                    .map(|((((((env, h), fresh), t_obs), s_obs), privs), trace)| Slot {
                        env,
                        h,
                        fresh,
                        t_obs,
                        s_obs,
                        privs,
                        trace,
                    })
                    .collect()
            };

            // Forward: roll each environment through the window, caching
            // everything backward needs.
            slots.par_iter_mut().for_each(|s| {
                let tr = &mut s.trace;
                tr.gru.resize_with(window, GruStepCache::default);
                tr.pol.resize_with(window, PolicyCache::default);
                tr.h_seq.resize(window * nh, 0.0);
                tr.started.clear();
                tr.started.resize(window, false);
                tr.t_act.resize(window * act, 0.0);
                tr.privs.resize(window * pd, 0.0);
                tr.imitation = 0.0;
                tr.episodes = 0;
                tr.diverged = 0;

                let mut tc = PolicyCache::default();
                let mut h_next = vec![0.0; nh];
                let empty = [0.0; 0];
                for t in 0..window {
                    if *s.fresh {
                        s.h.fill(0.0);
                        *s.fresh = false;
                        tr.started[t] = true;
                    }
                    teacher.forward(teacher_arena, s.t_obs, &empty, &mut tc);
                    tr.t_act[t * act..(t + 1) * act].copy_from_slice(&tc.mean);
                    tr.privs[t * pd..(t + 1) * pd].copy_from_slice(s.privs);

                    student.belief.step(&student.arena, s.s_obs, s.h, &mut h_next, &mut tr.gru[t]);
                    s.h.copy_from_slice(&h_next);
                    tr.h_seq[t * nh..(t + 1) * nh].copy_from_slice(s.h);
                    student.policy.forward(&student.arena, s.s_obs, s.h, &mut tr.pol[t]);

                    for k in 0..act {
                        let d = tr.pol[t].mean[k] - tc.mean[k];
                        tr.imitation += d * d;
                    }
                    let action = if cfg.pure_bc { &tc.mean } else { &tr.pol[t].mean };
                    let step = s.env.step(action, s.t_obs, s.s_obs, s.privs);
                    tr.diverged += step.diverged as u64;
                    if step.done {
                        s.env.reset(s.t_obs, s.s_obs, s.privs);
                        *s.fresh = true;
                        tr.episodes += 1;
                    }
                }
            });
            drop(slots);

            // Backward: fixed environment order so gradient reduction does
            // not depend on the thread count.
            let mut dh = vec![0.0; nh];
            let mut dh_prev = vec![0.0; nh];
            let mut dmean = vec![0.0; act];
            let mut recon = vec![0.0; pd];
            let mut ddec = vec![0.0; pd];
            for tr in &traces {
                stats.imitation += tr.imitation;
                stats.episodes += tr.episodes;
                stats.diverged += tr.diverged;
                dh.fill(0.0);
                for t in (0..window).rev() {
                    let a_t = &tr.t_act[t * act..(t + 1) * act];
                    for k in 0..act {
                        dmean[k] = 2.0 * (tr.pol[t].mean[k] - a_t[k]) * scale;
                    }
                    student.policy.backward(
                        &mut student.arena,
                        &tr.pol[t],
                        &dmean,
                        0.0,
                        Some(&mut dh),
                    );
                    if use_recon {
                        let h_t = &tr.h_seq[t * nh..(t + 1) * nh];
                        student.belief.decode(&student.arena, h_t, &mut recon);
                        let p = &tr.privs[t * pd..(t + 1) * pd];
                        for k in 0..pd {
                            let e = recon[k] - p[k];
                            ddec[k] = 2.0 * cfg.beta * e * scale;
                            stats.recon += e * e;
                            if k + 3 >= pd {
                                stats.pose_recon += e * e;
                            }
                        }
                        student.belief.decoder.backward(
                            &mut student.arena,
                            h_t,
                            &ddec,
                            Some(&mut dh),
                        );
                    }
                    dh_prev.fill(0.0);
                    student.belief.gru.backward_step(
                        &mut student.arena,
                        &tr.gru[t],
                        &dh,
                        None,
                        &mut dh_prev,
                    );
                    std::mem::swap(&mut dh, &mut dh_prev);
                    if tr.started[t] {
                        dh.fill(0.0);
                    }
                }
            }
            start += len;
        }

        stats.imitation *= scale;
        stats.recon *= scale;
        stats.pose_recon *= scale;
        stats
    }

    /// One truncated window over every environment followed by a single
    /// optimizer step.
    pub fn step<E: DistillEnv + Send>(
        &mut self,
        envs: &mut [E],
        teacher_arena: &Arena,
        teacher: &PolicyNet,
        student: &mut Student,
        cfg: &DistillConfig,
    ) -> DistillStats {
        let mut stats = self.accumulate_window(envs, teacher_arena, teacher, student, cfg);
        let loss = stats.imitation + cfg.beta * stats.recon;
        let finite = loss.is_finite() && student.arena.g.iter().all(|g| g.is_finite());
        if !finite {
            self.opt.record_incident();
            stats.skipped = true;
            student.arena.zero_grad();
            return stats;
        }
        let gn = student.arena.g.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gn > cfg.max_grad_norm {
            let s = cfg.max_grad_norm / gn;
            student.arena.g.iter_mut().for_each(|g| *g *= s);
        }
        self.opt.adam.step(&mut student.arena.w, &student.arena.g, cfg.lr * self.opt.lr_scale);
        student.arena.zero_grad();
        stats
    }
}

/// Mean squared action gap between student and teacher over student-driven
/// rollouts on fresh environments, without any learning. Held-out probe.
pub fn imitation_gap<E: DistillEnv>(
    envs: &mut [E],
    teacher_arena: &Arena,
    teacher: &PolicyNet,
    student: &Student,
    steps: usize,
) -> f64 {
    let (td, sd, pd, act) =
        (envs[0].teacher_dim(), envs[0].student_dim(), envs[0].priv_dim(), envs[0].act_dim());
    let nh = student.belief.hidden();
    let mut t_obs = vec![0.0; td];
    let mut s_obs = vec![0.0; sd];
    let mut privs = vec![0.0; pd];
    let mut h = vec![0.0; nh];
    let mut h_next = vec![0.0; nh];
    let mut gc = GruStepCache::default();
    let (mut tc, mut sc) = (PolicyCache::default(), PolicyCache::default());
    let empty = [0.0; 0];
    let mut total = 0.0;
    for env in envs.iter_mut() {
        env.reset(&mut t_obs, &mut s_obs, &mut privs);
        h.fill(0.0);
        for _ in 0..steps {
            teacher.forward(teacher_arena, &t_obs, &empty, &mut tc);
            student.belief.step(&student.arena, &s_obs, &h, &mut h_next, &mut gc);
            h.copy_from_slice(&h_next);
            student.policy.forward(&student.arena, &s_obs, &h, &mut sc);
            for k in 0..act {
                let d = sc.mean[k] - tc.mean[k];
                total += d * d;
            }
            let action = sc.mean.clone();
            if env.step(&action, &mut t_obs, &mut s_obs, &mut privs).done {
                env.reset(&mut t_obs, &mut s_obs, &mut privs);
                h.fill(0.0);
            }
        }
    }
    total / (envs.len() * steps) as f64
}

/// Distill a frozen random-initialized policy into a recurrent student on
/// the reach task; returns the per-iteration imitation curve plus a
/// held-out gap measured on fresh environments.
pub fn self_distill_reach(seed: u64, iters: usize) -> (Vec<f64>, f64) {
    use crate::toy::ReachEnv;

    let mut t_arena = Arena::new();
    let mut t_rng = rng::root(seed);
    let teacher = PolicyNet::new(&mut t_arena, "t", PolicySpec::toy(2, 1, &[16, 16]), &mut t_rng);

    let mut student = Student::toy(2, 1, &[16, 16], 8, 0, seed.wrapping_add(1));
    let mut envs: Vec<MirrorEnv<ReachEnv>> =
        (0..4).map(|i| MirrorEnv::new(ReachEnv::new(seed + 10 + i))).collect();
    let cfg = DistillConfig { beta: 0.0, window: 50, lr: 3e-3, ..DistillConfig::default() };
    let mut d = Distiller::new(&mut envs, &student);
    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let s = d.step(&mut envs, &t_arena, &teacher, &mut student, &cfg);
        history.push(s.imitation);
    }
    let mut held: Vec<MirrorEnv<ReachEnv>> =
        (0..4).map(|i| MirrorEnv::new(ReachEnv::new(seed + 100 + i))).collect();
    let gap = imitation_gap(&mut held, &t_arena, &teacher, &student, 50);
    (history, gap)
}
