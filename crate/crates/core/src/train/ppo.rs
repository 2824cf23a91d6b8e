//! Clipped-surrogate policy optimization with interior-point constraint
//! barriers.
//!
//! The update maximizes the usual PPO objective plus `(1/t) * ln(d_j - J_j)`
//! per cost family, where `J_j` is the batch mean of the discounted
//! constraint returns. Inside the feasible region the barrier adds a cost
//! surrogate weighted by `(1/t)/(d_j - J_j)`; within `barrier_margin` of the
//! boundary (and beyond it) the weight freezes at `(1/t)/margin`, which is
//! exactly a linear extension of the barrier with a continuous gradient.

use super::rollout::Batch;
use crate::math;
use crate::nn::policy::{
    gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grad, CostCritic, PolicyCache, PolicyNet,
};
use crate::nn::{Adam, Arena, MlpCache};
use crate::rng;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub cost_value_coef: f64,
    /// Re-uses of the batch per update and minibatches per pass.
    pub inner_epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    /// Barrier sharpness t; the barrier weight is 1/t and an infinite t
    /// turns the constraint machinery off entirely.
    pub ipo_t: f64,
    /// Distance from the threshold at which the log barrier hands over to
    /// its linear extension.
    pub barrier_margin: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            entropy_coef: 0.005,
            value_coef: 0.5,
            cost_value_coef: 0.5,
            inner_epochs: 5,
            minibatches: 4,
            max_grad_norm: 1.0,
            ipo_t: 50.0,
            barrier_margin: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(format!("clip must lie in (0,1), got {}", self.clip));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lam >= 0.0 && self.lam <= 1.0) {
            return Err("discount and lambda must lie in (0,1]".into());
        }
        if self.inner_epochs == 0 || self.minibatches == 0 {
            return Err("inner epochs and minibatches must be positive".into());
        }
        if self.ipo_t <= 0.0 {
            return Err("barrier sharpness must be positive".into());
        }
        if self.barrier_margin <= 0.0 {
            return Err("barrier margin must be positive".into());
        }
        Ok(())
    }
}

/// Constraint thresholds with their anneal from loose to tight. The linear
/// schedule reaches the final values after `anneal_frac` of the epochs; the
/// performance-triggered mode instead tightens geometrically whenever the
/// current batch was feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSchedule {
    pub final_d: Vec<f64>,
    pub start_factor: f64,
    pub anneal_frac: f64,
    pub adaptive: bool,
    current: Vec<f64>,
}

impl ThresholdSchedule {
    pub fn new(final_d: Vec<f64>, start_factor: f64, anneal_frac: f64, adaptive: bool) -> Self {
        assert!(final_d.iter().all(|d| *d >= 0.0), "thresholds must be non-negative");
        assert!(start_factor >= 1.0);
        let current = final_d.iter().map(|d| d * start_factor).collect();
        ThresholdSchedule { final_d, start_factor, anneal_frac, adaptive, current }
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.current
    }

    /// Advance the schedule for `epoch` of `total`. `feasible` reports
    /// whether the last batch satisfied every current threshold and only
    /// drives the adaptive mode.
    pub fn update(&mut self, epoch: usize, total: usize, feasible: bool) {
        if self.adaptive {
            if feasible {
                for (c, f) in self.current.iter_mut().zip(&self.final_d) {
                    *c = (*c * 0.98).max(*f);
                }
            }
            return;
        }
        let horizon = (self.anneal_frac * total as f64).max(1.0);
        let t = (epoch as f64 / horizon).min(1.0);
        for (i, c) in self.current.iter_mut().enumerate() {
            let start = self.final_d[i] * self.start_factor;
            *c = start + t * (self.final_d[i] - start);
        }
    }
}

/// Optimizer state shared across updates: Adam moments plus the one-shot
/// learning-rate halving armed by a non-finite loss.
pub struct Optimizer {
    pub adam: Adam,
    pub lr_scale: f64,
    halved: bool,
    pub incidents: u64,
}

impl Optimizer {
    pub fn new(n_params: usize) -> Optimizer {
        Optimizer { adam: Adam::new(n_params), lr_scale: 1.0, halved: false, incidents: 0 }
    }

    pub(crate) fn record_incident(&mut self) {
        self.incidents += 1;
        if !self.halved {
            self.lr_scale *= 0.5;
            self.halved = true;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub cost_value_loss: f64,
    pub entropy: f64,
    pub barrier: f64,
    pub mean_cost_return: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub skipped_minibatches: u32,
    pub lr_used: f64,
}

/// Gradient accumulation for one minibatch; the caller has zeroed the
/// arena gradients. Returns (surrogate, value, cost value, entropy) means.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_minibatch(
    arena: &mut Arena,
    policy: &PolicyNet,
    cost_critic: Option<&CostCritic>,
    batch: &Batch,
    idxs: &[usize],
    adv_n: &[f64],
    kappa: &[f64],
    cfg: &PpoConfig,
) -> (f64, f64, f64, f64) {
    let scale = 1.0 / idxs.len() as f64;
    let (od, ad, cd) = (batch.obs_dim, batch.act_dim, batch.cost_dim);
    let mut pc = PolicyCache::default();
    let mut cc = MlpCache::default();
    let mut dmean = vec![0.0; ad];
    let mut dls = vec![0.0; ad];
    let mut dlp_dmean = vec![0.0; ad];
    let mut dlp_dls = vec![0.0; ad];
    let mut dcv = vec![0.0; cd];
    let (mut surr_sum, mut v_sum, mut cv_sum) = (0.0, 0.0, 0.0);
    let empty = [0.0; 0];

    for &i in idxs {
        let obs = &batch.obs[i * od..(i + 1) * od];
        let act = &batch.act[i * ad..(i + 1) * ad];
        policy.forward(arena, obs, &empty, &mut pc);
        let ls = policy.log_std(arena);
        let lp = gaussian_log_prob(&pc.mean, ls, act);
        gaussian_log_prob_grad(&pc.mean, ls, act, &mut dlp_dmean, &mut dlp_dls);
        let ratio = (lp - batch.logp[i]).exp();
        let adv = adv_n[i];

        // Clipped surrogate: outside the trust region on the profitable
        // side the gradient vanishes.
        let clipped = (adv >= 0.0 && ratio > 1.0 + cfg.clip) || (adv < 0.0 && ratio < 1.0 - cfg.clip);
        let surr = if clipped {
            adv * if adv >= 0.0 { 1.0 + cfg.clip } else { 1.0 - cfg.clip }
        } else {
            adv * ratio
        };
        surr_sum += surr;
        let mut dlp = if clipped { 0.0 } else { -adv * ratio };

        // Cost surrogates scaled by the barrier weights.
        for j in 0..cd {
            if kappa[j] != 0.0 {
                dlp += kappa[j] * batch.cost_adv[i * cd + j] * ratio;
            }
        }

        let verr = pc.value - batch.ret[i];
        v_sum += 0.5 * verr * verr;
        let dvalue = cfg.value_coef * verr * scale;

        for k in 0..ad {
            dmean[k] = dlp * dlp_dmean[k] * scale;
            dls[k] = (dlp * dlp_dls[k] - cfg.entropy_coef) * scale;
        }
        policy.backward(arena, &pc, &dmean, dvalue, None);
        let g0 = policy.log_std.start;
        for k in 0..ad {
            arena.g[g0 + k] += dls[k];
        }

        if let Some(crit) = cost_critic {
            let cv = crit.forward(arena, obs, &mut cc).to_vec();
            for j in 0..cd {
                let e = cv[j] - batch.cost_ret[i * cd + j];
                cv_sum += 0.5 * e * e;
                dcv[j] = cfg.cost_value_coef * e * scale;
            }
            crit.backward(arena, &cc, &dcv);
        }
    }
    let ls = policy.log_std(arena);
    let ent = gaussian_entropy(ls);
    (surr_sum * scale, v_sum * scale, cv_sum * scale, ent)
}

/// One full policy update over a collected batch. `thresholds` are the
/// current constraint bounds; `lr` is the already-decayed learning rate.
#[allow(clippy::too_many_arguments)]
pub fn ppo_ipo_update(
    arena: &mut Arena,
    policy: &PolicyNet,
    cost_critic: Option<&CostCritic>,
    opt: &mut Optimizer,
    batch: &Batch,
    thresholds: &[f64],
    cfg: &PpoConfig,
    lr: f64,
    shuffle_seed: u64,
) -> UpdateStats {
    let n = batch.len();
    assert!(n > 0);
    let cd = batch.cost_dim;

    // Normalized reward advantages; cost advantages keep their raw scale
    // because the barrier weight is calibrated against true returns.
    let mean = math::mean(&batch.adv);
    let sd = math::std_dev(&batch.adv).max(1e-8);
    let adv_n: Vec<f64> = batch.adv.iter().map(|a| (a - mean) / sd).collect();

    let jc = batch.mean_cost_return();
    let weight = if cfg.ipo_t.is_finite() { 1.0 / cfg.ipo_t } else { 0.0 };
    let mut kappa = vec![0.0; cd];
    let mut barrier = 0.0;
    if weight > 0.0 && cost_critic.is_some() {
        for j in 0..cd {
            let slack = thresholds[j] - jc[j];
            kappa[j] = weight / slack.max(cfg.barrier_margin);
            barrier += if slack >= cfg.barrier_margin {
                -weight * slack.ln()
            } else {
                -weight * cfg.barrier_margin.ln()
                    + weight / cfg.barrier_margin * (cfg.barrier_margin - slack)
            };
        }
    }

    let mb_size = n.div_ceil(cfg.minibatches);
    let mut stats = UpdateStats {
        mean_cost_return: jc,
        thresholds: thresholds.to_vec(),
        barrier,
        lr_used: lr * opt.lr_scale,
        ..UpdateStats::default()
    };
    let mut batches_done = 0u32;

    for ep in 0..cfg.inner_epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = rng::stream(shuffle_seed, ep as u64);
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        for mb in perm.chunks(mb_size) {
            arena.zero_grad();
            let (surr, v, cv, ent) =
                accumulate_minibatch(arena, policy, cost_critic, batch, mb, &adv_n, &kappa, cfg);
            let loss =
                -surr + cfg.value_coef * v + cfg.cost_value_coef * cv - cfg.entropy_coef * ent;
            let finite = loss.is_finite() && arena.g.iter().all(|g| g.is_finite());
            if !finite {
                opt.record_incident();
                stats.skipped_minibatches += 1;
                continue;
            }
            let gn = arena.g.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gn > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / gn;
                arena.g.iter_mut().for_each(|g| *g *= s);
            }
            opt.adam.step(&mut arena.w, &arena.g, lr * opt.lr_scale);
            stats.surrogate += surr;
            stats.value_loss += v;
            stats.cost_value_loss += cv;
            stats.entropy += ent;
            stats.loss += loss;
            batches_done += 1;
        }
    }
    if batches_done > 0 {
        let k = batches_done as f64;
        stats.surrogate /= k;
        stats.value_loss /= k;
        stats.cost_value_loss /= k;
        stats.entropy /= k;
        stats.loss /= k;
    }
    stats
}

/// Train a policy on the constrained bandit and report the stochastic
/// violation rate of the result. The unconstrained variant (infinite t)
/// serves as the baseline that happily pays the cost.
pub fn train_bandit(seed: u64, epochs: usize, constrained: bool) -> f64 {
    use crate::nn::policy::{sample_gaussian, PolicySpec};
    use crate::toy::ConstrainedBandit;

    let mut envs: Vec<ConstrainedBandit> = (0..8).map(|_| ConstrainedBandit::new()).collect();
    let mut arena = Arena::new();
    let mut rng = rng::root(seed);
    let policy = PolicyNet::new(&mut arena, "p", PolicySpec::toy(1, 1, &[16, 16]), &mut rng);
    let critic = CostCritic::new(&mut arena, "c", 1, &[16], 1, &mut rng);
    let mut opt = Optimizer::new(arena.len());
    let cfg = PpoConfig {
        ipo_t: if constrained { 50.0 } else { f64::INFINITY },
        ..PpoConfig::default()
    };
    let mut sched = ThresholdSchedule::new(vec![0.5], 4.0, 0.3, false);
    let mut roll = super::rollout::Rollouts::new(&mut envs, seed);
    for ep in 0..epochs {
        let batch = roll.collect(&mut envs, &arena, &policy, Some(&critic), 64, cfg.gamma, cfg.lam, false);
        let feasible = batch
            .mean_cost_return()
            .iter()
            .zip(sched.thresholds())
            .all(|(j, d)| j < d);
        sched.update(ep, epochs, feasible);
        ppo_ipo_update(
            &mut arena,
            &policy,
            Some(&critic),
            &mut opt,
            &batch,
            &sched.thresholds().to_vec(),
            &cfg,
            3e-3,
            seed.wrapping_add(ep as u64),
        );
    }

    let mut pc = PolicyCache::default();
    policy.forward(&arena, &[1.0], &[], &mut pc);
    let ls = policy.log_std(&arena);
    let mut eval_rng = rng::stream(seed, 0xe7a1);
    let trials = 4000;
    let viol = (0..trials)
        .filter(|_| sample_gaussian(&pc.mean, ls, &mut eval_rng)[0] > 0.0)
        .count();
    viol as f64 / trials as f64
}
