//! Tanh-squashed Gaussian actor, scalar critic, GAE and the clipped
//! surrogate update.

use std::f64::consts::{LN_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::Mlp;
use super::normalizer::Normalizer;
use crate::env::{Observation, ObservationLayout};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_pretrain_start: f64,
    pub lr_pretrain_end: f64,
    pub lr_finetune: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Multiplier on rewards seen by the learner only.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.9,
            gae_lambda: 0.95,
            clip_eps: 0.3,
            epochs: 4,
            minibatch: 32,
            lr_pretrain_start: 1e-4,
            lr_pretrain_end: 1e-5,
            lr_finetune: 1e-5,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: vec![256, 256],
            init_log_std: -1.5,
            reward_scale: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return bad("epochs and minibatch must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: Vec<f64>,
    /// Pre-squash Gaussian sample.
    pub u: Vec<f64>,
    /// Density of `action`, tanh change of variables included.
    pub log_prob: f64,
}

/// Actor, critic, log-std, observation normalizer and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
    pub bounds: Vec<f64>,
    pub normalizer: Normalizer,
    actor_opt: Adam,
    critic_opt: Adam,
}

/// log N(u; mu, exp(log_std)) summed over dimensions.
pub fn gaussian_log_prob(u: &[f64], mu: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mu)
        .zip(log_std)
        .map(|((u, m), s)| {
            let z = (u - m) / s.exp();
            -0.5 * z * z - s - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// log |d(λ tanh u)/du| summed over dimensions.
pub fn squash_log_det(u: &[f64], bounds: &[f64]) -> f64 {
    u.iter()
        .zip(bounds)
        .map(|(u, b)| {
            let x = -2.0 * u;
            let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
            b.ln() + 2.0 * (LN_2 - u - softplus)
        })
        .sum()
}

pub fn squashed_log_prob(u: &[f64], mu: &[f64], log_std: &[f64], bounds: &[f64]) -> f64 {
    gaussian_log_prob(u, mu, log_std) - squash_log_det(u, bounds)
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (1.0 + (2.0 * PI).ln())).sum()
}

impl Policy {
    /// Policy for an environment observation: the tap one-hot, SC bits and
    /// step index are fed to the network unnormalized.
    pub fn for_layout(layout: &ObservationLayout, bounds: Vec<f64>, cfg: &PpoConfig, seed: u64) -> Policy {
        let mut p = Policy::new(layout.len(), bounds, cfg, seed);
        p.normalizer = Normalizer::new(layout.len()).with_passthrough(layout.tap_range().start..layout.len());
        p
    }

    pub fn new(obs_len: usize, bounds: Vec<f64>, cfg: &PpoConfig, seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_act = bounds.len();
        let mut sizes = vec![obs_len];
        sizes.extend(&cfg.hidden);
        let mut a_sizes = sizes.clone();
        a_sizes.push(n_act);
        sizes.push(1);
        let actor = Mlp::new(&a_sizes, 0.01, &mut rng);
        let critic = Mlp::new(&sizes, 0.01, &mut rng);
        Policy {
            actor_opt: Adam::new(actor.param_count() + n_act),
            critic_opt: Adam::new(critic.param_count()),
            actor,
            critic,
            log_std: vec![cfg.init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); n_act],
            bounds,
            normalizer: Normalizer::new(obs_len),
        }
    }

    pub fn obs_len(&self) -> usize {
        self.actor.input_len()
    }

    pub fn action_len(&self) -> usize {
        self.bounds.len()
    }

    pub fn normalize(&self, obs: &Observation) -> Result<Vec<f64>> {
        if obs.0.len() != self.obs_len() {
            return Err(Error::Dimension {
                what: "observation",
                expected: self.obs_len(),
                got: obs.0.len(),
            });
        }
        Ok(self.normalizer.normalize(&obs.0))
    }

    /// Acts on a raw observation.
    pub fn act<R: Rng>(&self, obs: &Observation, mode: Mode, rng: &mut R) -> Result<ActOutput> {
        let x = self.normalize(obs)?;
        self.act_normalized(&x, mode, rng)
    }

    pub fn act_normalized<R: Rng>(&self, x: &[f64], mode: Mode, rng: &mut R) -> Result<ActOutput> {
        let mu = self.actor.forward(x);
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("actor output"));
        }
        let u: Vec<f64> = match mode {
            Mode::Deterministic => mu.clone(),
            Mode::Stochastic => mu
                .iter()
                .zip(&self.log_std)
                .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let log_prob = squashed_log_prob(&u, &mu, &self.log_std, &self.bounds);
        // Keep the action strictly inside the box even where tanh saturates.
        let action = u
            .iter()
            .zip(&self.bounds)
            .map(|(u, b)| b * u.tanh().clamp(-1.0 + 1e-12, 1.0 - 1e-12))
            .collect();
        Ok(ActOutput { action, u, log_prob })
    }

    pub fn value_normalized(&self, x: &[f64]) -> f64 {
        self.critic.forward(x)[0]
    }

    /// Deterministic policy as a closure for `env::run_day`.
    pub fn deterministic(&self) -> impl FnMut(&Observation) -> Vec<f64> + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        move |obs| {
            self.act(obs, Mode::Deterministic, &mut rng)
                .map(|a| a.action)
                .unwrap_or_else(|_| vec![0.0; self.action_len()])
        }
    }

    fn clamp_log_std(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

/// One rollout. `obs` are already normalized.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub obs: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Bootstrap value after the final step (0 at a terminal state).
    pub last_value: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Returns `(advantages, returns)`; advantages are not normalized here.
pub fn compute_gae(rewards: &[f64], values: &[f64], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Flattened samples ready for an update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub obs: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn from_trajectories(trajs: &[Trajectory], gamma: f64, lambda: f64) -> Batch {
        let mut b = Batch::default();
        for t in trajs {
            let (adv, ret) = compute_gae(&t.rewards, &t.values, t.last_value, gamma, lambda);
            b.obs.extend(t.obs.iter().cloned());
            b.u.extend(t.u.iter().cloned());
            b.old_log_probs.extend(&t.log_probs);
            b.advantages.extend(adv);
            b.returns.extend(ret);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }

    /// Zero mean, unit standard deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        if n < 2.0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt() + 1e-8;
        for a in &mut self.advantages {
            *a = (*a - mean) / sd;
        }
    }
}

/// Loss pieces and gradients for one minibatch.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Actor weights followed by log-std.
    pub actor_grad: Vec<f64>,
    pub critic_grad: Vec<f64>,
    pub clipped: usize,
    pub ratios: Vec<f64>,
    pub kl: f64,
}

/// Full PPO loss (negated surrogate + value MSE − entropy bonus) over the
/// given sample indices, with analytic gradients.
pub fn loss_and_grad(policy: &Policy, batch: &Batch, idx: &[usize], cfg: &PpoConfig) -> LossGrad {
    let n_act = policy.action_len();
    let n_actor = policy.actor.param_count();
    let mut actor_grad = vec![0.0; n_actor + n_act];
    let mut critic_grad = vec![0.0; policy.critic.param_count()];
    let inv_b = 1.0 / idx.len() as f64;
    let std: Vec<f64> = policy.log_std.iter().map(|s| s.exp()).collect();
    let (mut pl, mut vl, mut kl) = (0.0, 0.0, 0.0);
    let mut clipped = 0;
    let mut ratios = Vec::with_capacity(idx.len());
    let mut d_mu = vec![0.0; n_act];

    for &i in idx {
        let x = &batch.obs[i];
        let u = &batch.u[i];
        let adv = batch.advantages[i];

        let cache = policy.actor.forward_cached(x);
        let mu = cache.output();
        let new_lp = squashed_log_prob(u, mu, &policy.log_std, &policy.bounds);
        let log_ratio = new_lp - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        ratios.push(ratio);
        kl += (ratio - 1.0) - log_ratio;
        let unclipped = ratio * adv;
        let clip_val = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
        if (ratio - 1.0).abs() > cfg.clip_eps {
            clipped += 1;
        }
        pl -= unclipped.min(clip_val) * inv_b;
        // d(loss)/d(log π): only the unclipped branch carries gradient.
        let g_lp = if unclipped <= clip_val { -unclipped * inv_b } else { 0.0 };
        if g_lp != 0.0 {
            for k in 0..n_act {
                let z = (u[k] - mu[k]) / std[k];
                d_mu[k] = g_lp * z / std[k];
                actor_grad[n_actor + k] += g_lp * (z * z - 1.0);
            }
            policy.actor.backward(&cache, &d_mu, &mut actor_grad[..n_actor]);
        }

        let vcache = policy.critic.forward_cached(x);
        let v = vcache.output()[0];
        let err = v - batch.returns[i];
        vl += err * err * inv_b;
        policy
            .critic
            .backward(&vcache, &[2.0 * cfg.value_coef * err * inv_b], &mut critic_grad);
    }

    let entropy = gaussian_entropy(&policy.log_std);
    for k in 0..n_act {
        actor_grad[n_actor + k] -= cfg.entropy_coef;
    }
    LossGrad {
        loss: pl + cfg.value_coef * vl - cfg.entropy_coef * entropy,
        policy_loss: pl,
        value_loss: vl,
        entropy,
        actor_grad,
        critic_grad,
        clipped,
        ratios,
        kl: kl * inv_b,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub median_ratio: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub aborted: bool,
}

/// `epochs` passes of shuffled minibatch descent. A non-finite loss
/// restores the parameters held on entry.
pub fn ppo_update<R: Rng>(policy: &mut Policy, batch: &Batch, cfg: &PpoConfig, lr: f64, rng: &mut R) -> UpdateStats {
    if batch.is_empty() {
        return UpdateStats::default();
    }
    let mut batch = batch.clone();
    batch.normalize_advantages();
    let snapshot = policy.clone();
    let n_actor = policy.actor.param_count();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let (mut clipped, mut seen, mut kl, mut pl, mut vl, mut ent, mut batches) = (0, 0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut ratios = Vec::new();

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in order.chunks(cfg.minibatch) {
            let mut g = loss_and_grad(policy, &batch, mb, cfg);
            if !g.loss.is_finite() || g.actor_grad.iter().chain(&g.critic_grad).any(|x| !x.is_finite()) {
                log::warn!("non-finite PPO loss; update aborted");
                *policy = snapshot;
                return UpdateStats {
                    aborted: true,
                    ..UpdateStats::default()
                };
            }
            let norm = g.actor_grad.iter().chain(&g.critic_grad).map(|x| x * x).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                g.actor_grad.iter_mut().chain(g.critic_grad.iter_mut()).for_each(|x| *x *= s);
            }
            let mut actor_params: Vec<f64> = policy.actor.params().to_vec();
            actor_params.extend(&policy.log_std);
            policy.actor_opt.step(&mut actor_params, &g.actor_grad, lr);
            policy.actor.params_mut().copy_from_slice(&actor_params[..n_actor]);
            policy.log_std.copy_from_slice(&actor_params[n_actor..]);
            policy.clamp_log_std();
            let critic_opt = &mut policy.critic_opt;
            critic_opt.step(policy.critic.params_mut(), &g.critic_grad, lr);

            clipped += g.clipped;
            seen += mb.len();
            kl += g.kl;
            pl += g.policy_loss;
            vl += g.value_loss;
            ent += g.entropy;
            batches += 1.0;
            ratios.extend(g.ratios);
        }
    }
    ratios.sort_by(|a, b| a.total_cmp(b));
    UpdateStats {
        clip_fraction: clipped as f64 / seen as f64,
        approx_kl: kl / batches,
        median_ratio: ratios[ratios.len() / 2],
        policy_loss: pl / batches,
        value_loss: vl / batches,
        entropy: ent / batches,
        aborted: false,
    }
}

/// Largest relative error between analytic and central-difference
/// gradients of the full loss over every parameter.
pub fn gradient_check(policy: &Policy, batch: &Batch, cfg: &PpoConfig) -> f64 {
    const H: f64 = 1e-5;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let g = loss_and_grad(policy, batch, &idx, cfg);
    let n_actor = policy.actor.param_count();
    let loss_at = |p: &Policy| loss_and_grad(p, batch, &idx, cfg).loss;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
    let mut worst: f64 = 0.0;
    let mut p = policy.clone();

    for i in 0..n_actor + policy.action_len() {
        let bump = |p: &mut Policy, d: f64| {
            if i < n_actor {
                p.actor.params_mut()[i] += d;
            } else {
                p.log_std[i - n_actor] += d;
            }
        };
        bump(&mut p, H);
        let up = loss_at(&p);
        bump(&mut p, -2.0 * H);
        let down = loss_at(&p);
        bump(&mut p, H);
        worst = worst.max(rel(g.actor_grad[i], (up - down) / (2.0 * H)));
    }
    for i in 0..policy.critic.param_count() {
        p.critic.params_mut()[i] += H;
        let up = loss_at(&p);
        p.critic.params_mut()[i] -= 2.0 * H;
        let down = loss_at(&p);
        p.critic.params_mut()[i] += H;
        worst = worst.max(rel(g.critic_grad[i], (up - down) / (2.0 * H)));
    }
    worst
}
