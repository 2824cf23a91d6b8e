//! Actor-critic network with an IMU-history encoder, the recurrent belief
//! encoder used by the student, and the diagonal-Gaussian action
//! distribution helpers shared by training code.

use super::gru::{Gru, GruStepCache};
use super::{Arena, Linear, Mlp, MlpCache, Span};
use crate::math;
use crate::obs::{IMU_DIM, PRIV_DIM, PROPRIO_DIM, STUDENT_OBS_DIM, TEACHER_OBS_DIM};
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Wiring of a policy network. The observation vector may carry an IMU
/// history slice routed through its own encoder, and an externally computed
/// latent (the belief state) can be appended to the trunk input.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub obs_dim: usize,
    pub imu_off: usize,
    pub imu_len: usize,
    pub imu_latent: usize,
    pub extra_dim: usize,
    pub trunk_hidden: Vec<usize>,
    pub act_dim: usize,
    /// Bound for the soft clamp `B*tanh(u/B)` on the action mean; zero
    /// leaves the mean unbounded.
    pub squash_rad: f64,
}

impl PolicySpec {
    /// Teacher: proprioception, IMU history, height scan and privileged
    /// state in one vector.
    pub fn teacher() -> PolicySpec {
        PolicySpec {
            obs_dim: TEACHER_OBS_DIM,
            imu_off: PROPRIO_DIM,
            imu_len: IMU_DIM,
            imu_latent: 64,
            extra_dim: 0,
            trunk_hidden: vec![128, 128],
            act_dim: 8,
            squash_rad: 2.0,
        }
    }

    /// Student: noisy proprioception, IMU history and ladder channels, plus
    /// the belief latent appended by the caller.
    pub fn student(belief_dim: usize) -> PolicySpec {
        PolicySpec {
            obs_dim: STUDENT_OBS_DIM,
            imu_off: PROPRIO_DIM,
            imu_len: IMU_DIM,
            imu_latent: 64,
            extra_dim: belief_dim,
            trunk_hidden: vec![128, 128],
            act_dim: 8,
            squash_rad: 2.0,
        }
    }

    /// Plain feed-forward actor-critic for the small diagnostic tasks.
    pub fn toy(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> PolicySpec {
        PolicySpec {
            obs_dim,
            imu_off: 0,
            imu_len: 0,
            imu_latent: 0,
            extra_dim: 0,
            trunk_hidden: hidden.to_vec(),
            act_dim,
            squash_rad: 0.0,
        }
    }

    pub fn trunk_in(&self) -> usize {
        self.obs_dim - self.imu_len + self.imu_latent + self.extra_dim
    }
}

pub struct PolicyNet {
    pub spec: PolicySpec,
    imu_enc: Option<Mlp>,
    trunk: Mlp,
    actor: Linear,
    critic: Linear,
    pub log_std: Span,
}

/// Forward buffers plus the outputs; reuse across calls to avoid churn.
#[derive(Default)]
pub struct PolicyCache {
    imu: MlpCache,
    trunk: MlpCache,
    trunk_in: Vec<f64>,
    feat: Vec<f64>,
    u: Vec<f64>,
    pub mean: Vec<f64>,
    pub value: f64,
}

impl PolicyNet {
    pub fn new(a: &mut Arena, name: &str, spec: PolicySpec, rng: &mut Rng) -> PolicyNet {
        let gain = std::f64::consts::SQRT_2;
        let imu_enc = (spec.imu_len > 0).then(|| {
            Mlp::new(
                a,
                &format!("{name}.imu"),
                &[spec.imu_len, spec.imu_latent, spec.imu_latent],
                true,
                gain,
                rng,
            )
        });
        let mut trunk_dims = vec![spec.trunk_in()];
        trunk_dims.extend_from_slice(&spec.trunk_hidden);
        let trunk = Mlp::new(a, &format!("{name}.trunk"), &trunk_dims, true, gain, rng);
        let feat = *trunk_dims.last().unwrap();
        let actor = Linear::new(a, &format!("{name}.actor"), feat, spec.act_dim, gain, rng);
        let critic = Linear::new(a, &format!("{name}.critic"), feat, 1, gain, rng);
        let log_std = a.alloc(&format!("{name}.log_std"), &[spec.act_dim]);
        PolicyNet { spec, imu_enc, trunk, actor, critic, log_std }
    }

    pub fn log_std<'a>(&self, a: &'a Arena) -> &'a [f64] {
        &a.w[self.log_std.clone()]
    }

    /// Deterministic forward pass; `extra` must have length
    /// `spec.extra_dim`.
    pub fn forward(&self, a: &Arena, obs: &[f64], extra: &[f64], c: &mut PolicyCache) {
        let s = &self.spec;
        assert_eq!(obs.len(), s.obs_dim, "observation length mismatch");
        assert_eq!(extra.len(), s.extra_dim, "latent length mismatch");

        c.trunk_in.clear();
        c.trunk_in.extend_from_slice(&obs[..s.imu_off]);
        if let Some(enc) = &self.imu_enc {
            let latent = enc.forward(a, &obs[s.imu_off..s.imu_off + s.imu_len], &mut c.imu);
            c.trunk_in.extend_from_slice(latent);
        }
        c.trunk_in.extend_from_slice(&obs[s.imu_off + s.imu_len..]);
        c.trunk_in.extend_from_slice(extra);

        let feat = self.trunk.forward(a, &c.trunk_in, &mut c.trunk);
        c.feat.clear();
        c.feat.extend_from_slice(feat);

        c.u.resize(s.act_dim, 0.0);
        self.actor.forward(a, &c.feat, &mut c.u);
        c.mean.resize(s.act_dim, 0.0);
        for i in 0..s.act_dim {
            c.mean[i] = squash(c.u[i], s.squash_rad);
        }
        let mut v = [0.0];
        self.critic.forward(a, &c.feat, &mut v);
        c.value = v[0];
    }

    /// Accumulate gradients for a recorded forward pass. `dextra`, when
    /// given, receives the gradient flowing into the appended latent.
    pub fn backward(
        &self,
        a: &mut Arena,
        c: &PolicyCache,
        dmean: &[f64],
        dvalue: f64,
        dextra: Option<&mut [f64]>,
    ) {
        let s = &self.spec;
        let mut du = vec![0.0; s.act_dim];
        for i in 0..s.act_dim {
            du[i] = dmean[i] * squash_grad(c.u[i], s.squash_rad);
        }
        let mut dfeat = vec![0.0; c.feat.len()];
        self.actor.backward(a, &c.feat, &du, Some(&mut dfeat));
        if dvalue != 0.0 {
            self.critic.backward(a, &c.feat, &[dvalue], Some(&mut dfeat));
        }
        let mut din = vec![0.0; c.trunk_in.len()];
        self.trunk.backward(a, &c.trunk, &dfeat, Some(&mut din));

        if let Some(enc) = &self.imu_enc {
            let dlatent = &din[s.imu_off..s.imu_off + s.imu_latent];
            enc.backward(a, &c.imu, dlatent, None);
        }
        if let Some(dextra) = dextra {
            let start = c.trunk_in.len() - s.extra_dim;
            for i in 0..s.extra_dim {
                dextra[i] += din[start + i];
            }
        }
    }
}

fn squash(u: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        bound * (u / bound).tanh()
    } else {
        u
    }
}

fn squash_grad(u: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        let t = (u / bound).tanh();
        1.0 - t * t
    } else {
        1.0
    }
}

/// Per-family constraint-cost critic: one value head per cost channel,
/// trained on discounted cost returns and read by the barrier update.
pub struct CostCritic {
    mlp: Mlp,
    pub cost_dim: usize,
}

impl CostCritic {
    pub fn new(a: &mut Arena, name: &str, obs_dim: usize, hidden: &[usize], cost_dim: usize, rng: &mut Rng) -> CostCritic {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(cost_dim);
        let mlp = Mlp::new(a, name, &dims, false, std::f64::consts::SQRT_2, rng);
        CostCritic { mlp, cost_dim }
    }

    pub fn forward<'c>(&self, a: &Arena, obs: &[f64], c: &'c mut MlpCache) -> &'c [f64] {
        self.mlp.forward(a, obs, c)
    }

    pub fn backward(&self, a: &mut Arena, c: &MlpCache, dout: &[f64]) {
        self.mlp.backward(a, c, dout, None);
    }
}

/// Recurrent belief state over noisy student observations with a linear
/// decoder that reconstructs the privileged vector.
pub struct BeliefEncoder {
    pub gru: Gru,
    pub decoder: Linear,
}

impl BeliefEncoder {
    pub fn new(
        a: &mut Arena,
        name: &str,
        obs_dim: usize,
        hidden: usize,
        priv_dim: usize,
        rng: &mut Rng,
    ) -> BeliefEncoder {
        let gain = std::f64::consts::SQRT_2;
        let gru = Gru::new(a, &format!("{name}.gru"), obs_dim, hidden, gain, rng);
        let decoder = Linear::new(a, &format!("{name}.dec"), hidden, priv_dim, gain, rng);
        BeliefEncoder { gru, decoder }
    }

    pub fn hidden(&self) -> usize {
        self.gru.nh
    }

    pub fn priv_dim(&self) -> usize {
        self.decoder.nout
    }

    pub fn step(&self, a: &Arena, obs: &[f64], h_prev: &[f64], h_next: &mut [f64], c: &mut GruStepCache) {
        self.gru.step(a, obs, h_prev, h_next, c);
    }

    pub fn decode(&self, a: &Arena, h: &[f64], out: &mut [f64]) {
        self.decoder.forward(a, h, out);
    }
}

/// Log density of a diagonal Gaussian at `act`.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], act: &[f64]) -> f64 {
    let mut lp = 0.0;
    for i in 0..mean.len() {
        let z = (act[i] - mean[i]) / log_std[i].exp();
        lp += -0.5 * z * z - log_std[i] - 0.5 * LN_2PI;
    }
    lp
}

/// Gradient of the log density with respect to mean and log-std.
pub fn gaussian_log_prob_grad(
    mean: &[f64],
    log_std: &[f64],
    act: &[f64],
    dmean: &mut [f64],
    dlog_std: &mut [f64],
) {
    for i in 0..mean.len() {
        let z = (act[i] - mean[i]) / log_std[i].exp();
        dmean[i] = z / log_std[i].exp();
        dlog_std[i] = z * z - 1.0;
    }
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
}

pub fn sample_gaussian(mean: &[f64], log_std: &[f64], rng: &mut Rng) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let n: f64 = StandardNormal.sample(rng);
            m + ls.exp() * n
        })
        .collect()
}

/// Signature of the observation layout baked into checkpoints so stale
/// artifacts are refused instead of silently misread.
pub fn obs_signature() -> String {
    format!(
        "proprio={PROPRIO_DIM};imu={IMU_DIM};teacher={TEACHER_OBS_DIM};student={STUDENT_OBS_DIM};priv={PRIV_DIM}"
    )
}

pub fn layout_hash(a: &Arena) -> u64 {
    let mut s = obs_signature();
    s.push('|');
    s.push_str(&format!("{:016x}", a.layout_hash()));
    math::fnv1a(s.as_bytes())
}
