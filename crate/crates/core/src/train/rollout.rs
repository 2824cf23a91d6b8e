//! On-policy rollout collection and generalized advantage estimation.
//!
//! Environments run in parallel, each writing into its own disjoint slice
//! of the batch with its own RNG stream, so the result is bit-identical for
//! any worker count.

use crate::env::RolloutEnv;
use crate::nn::policy::{gaussian_log_prob, sample_gaussian, CostCritic, PolicyCache, PolicyNet};
use crate::nn::{Arena, MlpCache};
use crate::rng::{self, Rng};
use rayon::prelude::*;

/// Flat transition storage indexed by `env * steps + t`. Vector-valued
/// columns are further multiplied by their inner dimension.
pub struct Batch {
    pub n_envs: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub cost_dim: usize,
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub logp: Vec<f64>,
    pub value: Vec<f64>,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub timeout: Vec<bool>,
    /// Bootstrap value used after this transition: meaningful at timeouts
    /// and at the window end, zero at true terminals, unused elsewhere.
    pub boot_value: Vec<f64>,
    pub adv: Vec<f64>,
    pub ret: Vec<f64>,
    pub cost: Vec<f64>,
    pub cost_value: Vec<f64>,
    pub cost_boot: Vec<f64>,
    pub cost_adv: Vec<f64>,
    pub cost_ret: Vec<f64>,
    pub stats: BatchStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub episodes_reached: u64,
    pub episodes_terminated: u64,
    pub episodes_timed_out: u64,
    pub diverged: u64,
    /// Total reward collected divided by the number of environments.
    pub mean_window_return: f64,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.n_envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn zeros(n_envs: usize, steps: usize, obs_dim: usize, act_dim: usize, cost_dim: usize) -> Batch {
        let n = n_envs * steps;
        Batch {
            n_envs,
            steps,
            obs_dim,
            act_dim,
            cost_dim,
            obs: vec![0.0; n * obs_dim],
            act: vec![0.0; n * act_dim],
            logp: vec![0.0; n],
            value: vec![0.0; n],
            reward: vec![0.0; n],
            done: vec![false; n],
            timeout: vec![false; n],
            boot_value: vec![0.0; n],
            adv: vec![0.0; n],
            ret: vec![0.0; n],
            cost: vec![0.0; n * cost_dim],
            cost_value: vec![0.0; n * cost_dim],
            cost_boot: vec![0.0; n * cost_dim],
            cost_adv: vec![0.0; n * cost_dim],
            cost_ret: vec![0.0; n * cost_dim],
            stats: BatchStats::default(),
        }
    }

    /// Mean discounted constraint return per cost family, the batch
    /// estimate the barrier reads.
    pub fn mean_cost_return(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.cost_dim)
            .map(|j| self.cost_ret.iter().skip(j).step_by(self.cost_dim.max(1)).sum::<f64>() / n)
            .collect()
    }
}

/// GAE over one environment's contiguous window, costs included. `boot`
/// supplies the value bootstrap at timeouts and at the window end.
#[allow(clippy::too_many_arguments)]
pub fn gae(
    reward: &[f64],
    value: &[f64],
    done: &[bool],
    timeout: &[bool],
    boot: &[f64],
    gamma: f64,
    lam: f64,
    adv: &mut [f64],
    ret: &mut [f64],
) {
    let steps = reward.len();
    let mut acc = 0.0;
    for t in (0..steps).rev() {
        let next_v = if done[t] {
            if timeout[t] {
                boot[t]
            } else {
                0.0
            }
        } else if t + 1 == steps {
            boot[t]
        } else {
            value[t + 1]
        };
        let delta = reward[t] + gamma * next_v - value[t];
        acc = delta + gamma * lam * if done[t] { 0.0 } else { acc };
        adv[t] = acc;
        ret[t] = acc + value[t];
    }
}

/// Carve a column into `count` disjoint windows of `n` elements; a zero
/// width still yields one (empty) slice per window.
pub(crate) fn carve<T>(mut v: &mut [T], n: usize, count: usize) -> Vec<&mut [T]> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (head, tail) = std::mem::take(&mut v).split_at_mut(n);
        out.push(head);
        v = tail;
    }
    out
}

/// Persistent collection state: the current observation of every
/// environment plus its action-sampling stream.
pub struct Rollouts {
    pub cur_obs: Vec<f64>,
    rngs: Vec<Rng>,
    obs_dim: usize,
}

impl Rollouts {
    /// Resets every environment and seeds one sampling stream per slot.
    pub fn new<E: RolloutEnv>(envs: &mut [E], seed: u64) -> Rollouts {
        let obs_dim = envs[0].obs_dim();
        let mut cur_obs = vec![0.0; envs.len() * obs_dim];
        for (env, obs) in envs.iter_mut().zip(cur_obs.chunks_mut(obs_dim)) {
            env.reset(obs);
        }
        let rngs = (0..envs.len()).map(|i| rng::stream(seed, 0x5a0_0000 + i as u64)).collect();
        Rollouts { cur_obs, rngs, obs_dim }
    }

    /// Roll every environment forward `steps` policy steps under the
    /// current policy, then fill advantages and returns.
    #[allow(clippy::too_many_arguments)]
    pub fn collect<E: RolloutEnv + Send>(
        &mut self,
        envs: &mut [E],
        arena: &Arena,
        policy: &PolicyNet,
        cost_critic: Option<&CostCritic>,
        steps: usize,
        gamma: f64,
        lam: f64,
        deterministic: bool,
    ) -> Batch {
        let obs_dim = self.obs_dim;
        let act_dim = envs[0].act_dim();
        let cost_dim = envs[0].cost_dim();
        assert_eq!(obs_dim, policy.spec.obs_dim, "policy and environment disagree on layout");
        assert!(policy.spec.extra_dim == 0, "latent-fed policies use the distillation path");
        if let Some(crit) = cost_critic {
            assert_eq!(crit.cost_dim, cost_dim, "cost critic width must match the environment");
        }
        let mut batch = Batch::zeros(envs.len(), steps, obs_dim, act_dim, cost_dim);

        struct Slot<'s, E> {
            env: &'s mut E,
            cur: &'s mut [f64],
            rng: &'s mut Rng,
            obs: &'s mut [f64],
            act: &'s mut [f64],
            logp: &'s mut [f64],
            value: &'s mut [f64],
            reward: &'s mut [f64],
            done: &'s mut [bool],
            timeout: &'s mut [bool],
            boot: &'s mut [f64],
            cost: &'s mut [f64],
            cost_value: &'s mut [f64],
            cost_boot: &'s mut [f64],
            stats: &'s mut BatchStats,
        }

        let n_envs = envs.len();
        let mut stats = vec![BatchStats::default(); n_envs];
        let mut slots: Vec<Slot<E>> = Vec::with_capacity(n_envs);
        {
            let mut it_env = envs.iter_mut();
            let mut it_cur = self.cur_obs.chunks_mut(obs_dim);
            let mut it_rng = self.rngs.iter_mut();
            let mut it_obs = batch.obs.chunks_mut(steps * obs_dim);
            let mut it_act = batch.act.chunks_mut(steps * act_dim);
            let mut it_logp = batch.logp.chunks_mut(steps);
            let mut it_value = batch.value.chunks_mut(steps);
            let mut it_reward = batch.reward.chunks_mut(steps);
            let mut it_done = batch.done.chunks_mut(steps);
            let mut it_timeout = batch.timeout.chunks_mut(steps);
            let mut it_boot = batch.boot_value.chunks_mut(steps);
            let mut it_cost = carve(&mut batch.cost, steps * cost_dim, n_envs).into_iter();
            let mut it_cv = carve(&mut batch.cost_value, steps * cost_dim, n_envs).into_iter();
            let mut it_cb = carve(&mut batch.cost_boot, steps * cost_dim, n_envs).into_iter();
            let mut it_stats = stats.iter_mut();
            for _ in 0..n_envs {
                slots.push(Slot {
                    env: it_env.next().unwrap(),
                    cur: it_cur.next().unwrap(),
                    rng: it_rng.next().unwrap(),
                    obs: it_obs.next().unwrap(),
                    act: it_act.next().unwrap(),
                    logp: it_logp.next().unwrap(),
                    value: it_value.next().unwrap(),
                    reward: it_reward.next().unwrap(),
                    done: it_done.next().unwrap(),
                    timeout: it_timeout.next().unwrap(),
                    boot: it_boot.next().unwrap(),
                    cost: it_cost.next().unwrap(),
                    cost_value: it_cv.next().unwrap(),
                    cost_boot: it_cb.next().unwrap(),
                    stats: it_stats.next().unwrap(),
                });
            }
        }

        slots.par_iter_mut().for_each(|s| {
            let mut pc = PolicyCache::default();
            let mut cc = MlpCache::default();
            let empty = [0.0; 0];
            for t in 0..steps {
                policy.forward(arena, s.cur, &empty, &mut pc);
                let ls = policy.log_std(arena);
                let action = if deterministic {
                    pc.mean.clone()
                } else {
                    sample_gaussian(&pc.mean, ls, s.rng)
                };
                s.logp[t] = gaussian_log_prob(&pc.mean, ls, &action);
                s.value[t] = pc.value;
                s.obs[t * obs_dim..(t + 1) * obs_dim].copy_from_slice(s.cur);
                s.act[t * act_dim..(t + 1) * act_dim].copy_from_slice(&action);
                if let Some(crit) = cost_critic {
                    let cv = crit.forward(arena, s.cur, &mut cc);
                    s.cost_value[t * cost_dim..(t + 1) * cost_dim].copy_from_slice(cv);
                }

                let tr = s.env.step(&action, s.cur, &mut s.cost[t * cost_dim..(t + 1) * cost_dim]);
                s.reward[t] = tr.reward;
                s.done[t] = tr.done;
                s.timeout[t] = tr.timeout;
                s.stats.diverged += tr.diverged as u64;
                s.stats.mean_window_return += tr.reward;

                let needs_boot = (tr.done && tr.timeout) || (t + 1 == steps && !tr.done);
                if needs_boot {
                    policy.forward(arena, s.cur, &empty, &mut pc);
                    s.boot[t] = pc.value;
                    if let Some(crit) = cost_critic {
                        let cv = crit.forward(arena, s.cur, &mut cc);
                        s.cost_boot[t * cost_dim..(t + 1) * cost_dim].copy_from_slice(cv);
                    }
                }
                if tr.done {
                    if tr.reached {
                        s.stats.episodes_reached += 1;
                    } else if tr.timeout {
                        s.stats.episodes_timed_out += 1;
                    } else {
                        s.stats.episodes_terminated += 1;
                    }
                    s.env.reset(s.cur);
                }
            }
        });
        drop(slots);

        for s in &stats {
            batch.stats.episodes_reached += s.episodes_reached;
            batch.stats.episodes_terminated += s.episodes_terminated;
            batch.stats.episodes_timed_out += s.episodes_timed_out;
            batch.stats.diverged += s.diverged;
            batch.stats.mean_window_return += s.mean_window_return;
        }
        batch.stats.mean_window_return /= envs.len() as f64;

        for e in 0..batch.n_envs {
            let r = e * steps..(e + 1) * steps;
            let (adv, ret) = (&mut batch.adv[r.clone()], &mut batch.ret[r.clone()]);
            gae(
                &batch.reward[r.clone()],
                &batch.value[r.clone()],
                &batch.done[r.clone()],
                &batch.timeout[r.clone()],
                &batch.boot_value[r.clone()],
                gamma,
                lam,
                adv,
                ret,
            );
        }
        if cost_dim > 0 {
            // Each cost family gets its own GAE pass over strided views.
            let mut creward = vec![0.0; steps];
            let mut cvalue = vec![0.0; steps];
            let mut cboot = vec![0.0; steps];
            let mut cadv = vec![0.0; steps];
            let mut cret = vec![0.0; steps];
            for e in 0..batch.n_envs {
                for j in 0..cost_dim {
                    for t in 0..steps {
                        let i = (e * steps + t) * cost_dim + j;
                        creward[t] = batch.cost[i];
                        cvalue[t] = batch.cost_value[i];
                        cboot[t] = batch.cost_boot[i];
                    }
                    let r = e * steps..(e + 1) * steps;
                    gae(
                        &creward,
                        &cvalue,
                        &batch.done[r.clone()],
                        &batch.timeout[r.clone()],
                        &cboot,
                        gamma,
                        lam,
                        &mut cadv,
                        &mut cret,
                    );
                    for t in 0..steps {
                        let i = (e * steps + t) * cost_dim + j;
                        batch.cost_adv[i] = cadv[t];
                        batch.cost_ret[i] = cret[t];
                    }
                }
            }
        }
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::policy::PolicySpec;
    use crate::rng;
    use crate::toy::{ConstrainedBandit, ReachEnv, REACH_HORIZON};

    fn reach_envs(n: usize) -> Vec<ReachEnv> {
        (0..n).map(|i| ReachEnv::new(40 + i as u64)).collect()
    }

    fn toy_policy(obs: usize, act: usize) -> (Arena, PolicyNet) {
        let mut a = Arena::new();
        let mut r = rng::root(77);
        let net = PolicyNet::new(&mut a, "p", PolicySpec::toy(obs, act, &[8, 8]), &mut r);
        (a, net)
    }

    #[test]
    fn four_envs_by_48_steps_give_192_transitions() {
        let mut envs = reach_envs(4);
        let (arena, net) = toy_policy(2, 1);
        let mut roll = Rollouts::new(&mut envs, 5);
        let batch = roll.collect(&mut envs, &arena, &net, None, 48, 0.99, 0.95, false);
        assert_eq!(batch.len(), 192);
        assert_eq!(batch.obs.len(), 192 * 2);
        assert!(batch.adv.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gae_matches_a_hand_calculation_on_three_steps() {
        // gamma = 0.5, lam = 0.5; rewards 1, 2, 3; values 0.5, 1.0, 1.5.
        // Step 1 ends an episode by termination (bootstrap 0), step 2 is
        // the window end with bootstrap 2.0.
        let reward = [1.0, 2.0, 3.0];
        let value = [0.5, 1.0, 1.5];
        let done = [false, true, false];
        let timeout = [false, false, false];
        let boot = [0.0, 0.0, 2.0];
        let mut adv = [0.0; 3];
        let mut ret = [0.0; 3];
        gae(&reward, &value, &done, &timeout, &boot, 0.5, 0.5, &mut adv, &mut ret);
        // t=2: delta = 3 + 0.5*2 - 1.5 = 2.5, adv = 2.5.
        // t=1: terminal, delta = 2 + 0 - 1 = 1, adv = 1 (chain cut).
        // t=0: delta = 1 + 0.5*1 - 0.5 = 1, adv = 1 + 0.25*1 = 1.25.
        assert_eq!(adv, [1.25, 1.0, 2.5]);
        assert_eq!(ret, [1.75, 2.0, 4.0]);

        // A timeout at step 1 instead: bootstrap with the critic value 4.
        let done = [false, true, false];
        let timeout2 = [false, true, false];
        let boot2 = [0.0, 4.0, 2.0];
        gae(&reward, &value, &done, &timeout2, &boot2, 0.5, 0.5, &mut adv, &mut ret);
        assert_eq!(adv[1], 2.0 + 0.5 * 4.0 - 1.0);
        assert_eq!(adv[0], 1.0 + 0.25 * adv[1]);
    }

    #[test]
    fn same_seed_collections_are_identical() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut envs = reach_envs(6);
                let (arena, net) = toy_policy(2, 1);
                let mut roll = Rollouts::new(&mut envs, 9);
                let b = roll.collect(&mut envs, &arena, &net, None, 30, 0.99, 0.95, false);
                (b.obs, b.act, b.logp, b.adv, b.ret)
            })
        };
        let a = run(1);
        let b = run(1);
        assert_eq!(a, b);
        // Worker count must not change anything either.
        let c = run(4);
        assert_eq!(a, c);
    }

    #[test]
    fn deterministic_policy_repeats_itself() {
        let (mut arena, net) = toy_policy(2, 1);
        let ls = net.log_std.clone();
        arena.w[ls].iter_mut().for_each(|v| *v = -20.0);
        let run = || {
            let mut envs = reach_envs(3);
            let mut roll = Rollouts::new(&mut envs, 11);
            let b = roll.collect(&mut envs, &arena, &net, None, 20, 0.99, 0.95, true);
            (b.act.clone(), b.reward.clone())
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn reach_horizon_marks_timeouts_and_bootstraps_with_the_critic() {
        let mut envs = reach_envs(1);
        let (arena, net) = toy_policy(2, 1);
        let mut roll = Rollouts::new(&mut envs, 13);
        let steps = REACH_HORIZON + 10;
        let batch = roll.collect(&mut envs, &arena, &net, None, steps, 0.99, 0.95, false);
        let t = REACH_HORIZON - 1;
        assert!(batch.done[t] && batch.timeout[t]);
        assert_eq!(batch.done.iter().filter(|d| **d).count(), 1);
        // Replaying the final transition recovers the state whose critic
        // value was recorded as the bootstrap.
        let (x, v) = (batch.obs[t * 2], batch.obs[t * 2 + 1]);
        let a = batch.act[t].clamp(-2.0, 2.0);
        let v2 = v + a * 0.1;
        let x2 = x + v2 * 0.1;
        let mut pc = PolicyCache::default();
        net.forward(&arena, &[x2, v2], &[], &mut pc);
        assert_eq!(batch.boot_value[t], pc.value);
    }

    #[test]
    fn bandit_costs_land_in_the_cost_columns() {
        let mut envs = vec![ConstrainedBandit::new(), ConstrainedBandit::new()];
        let (arena, net) = toy_policy(1, 1);
        let mut rng = rng::root(3);
        let crit = {
            let mut a2 = arena.clone();
            // Cost critic shares the arena in real training; a clone works
            // for the shape check here.
            let c = CostCritic::new(&mut a2, "cost", 1, &[8], 1, &mut rng);
            (a2, c)
        };
        let mut roll = Rollouts::new(&mut envs, 15);
        let batch = roll.collect(&mut envs, &crit.0, &net, Some(&crit.1), 40, 0.99, 0.95, false);
        assert_eq!(batch.cost.len(), 80);
        for i in 0..batch.len() {
            let picked_a = batch.act[i] > 0.0;
            assert_eq!(batch.cost[i], if picked_a { 1.0 } else { 0.0 });
        }
        assert!(batch.mean_cost_return()[0] > 0.0);
        assert!(batch.cost_adv.iter().all(|v| v.is_finite()));
    }
}
