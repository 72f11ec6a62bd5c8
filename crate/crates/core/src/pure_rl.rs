//! Day-ahead RL baseline: a categorical PPO agent decides the tap move and
//! capacitor switching hour by hour. Attempts that would break a grid code
//! are overridden (so emitted schedules are always valid) and cost a
//! training-only penalty.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{run_day, Env, EpisodeLog, ObservationLayout};
use crate::error::{Error, Result};
use crate::grid::{Network, OltcSpec};
use crate::rl::adam::Adam;
use crate::rl::mlp::Mlp;
use crate::rl::ppo::{compute_gae, ppo_update, Batch, Policy, PpoConfig};
use crate::rl::train::{collect_episode, linear_lr};
use crate::scenario::{RegionForecast, Scenario, HOURS, STEPS_PER_HOUR};
use crate::schedule::DaySchedule;

/// Tap head choices, index 0 first so all-equal logits mean "hold".
pub const TAP_MOVES: [i32; 3] = [0, -1, 1];
pub const DEFAULT_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayAheadLayout {
    pub regions: usize,
    pub tap_positions: usize,
    pub scs: usize,
}

impl DayAheadLayout {
    pub fn of(net: &Network) -> DayAheadLayout {
        DayAheadLayout {
            regions: net.region_count,
            tap_positions: net.oltc.positions,
            scs: net.scs.len(),
        }
    }

    /// Region and system forecasts, hour one-hot, change count, tap
    /// one-hot, then (on, used) per capacitor.
    pub fn len(&self) -> usize {
        (self.regions + 1) * HOURS + HOURS + 1 + self.tap_positions + 2 * self.scs
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Logit count: three tap moves plus keep/switch per capacitor.
    pub fn heads(&self) -> usize {
        TAP_MOVES.len() + 2 * self.scs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayAheadPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub layout: DayAheadLayout,
    pub oltc: OltcSpec,
    pub windows: Vec<(usize, usize)>,
    /// Forecasts are divided by this (MW).
    pub load_scale: f64,
    actor_opt: Adam,
    critic_opt: Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Sample,
    Argmax,
}

/// One hourly decision as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct DayAheadStep {
    pub obs: Vec<f64>,
    /// Attempted choice per head (tap head first).
    pub choices: Vec<usize>,
    pub log_prob: f64,
    pub value: f64,
    /// Penalty (≤ 0) for attempts that were overridden this hour.
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayAheadRollout {
    pub schedule: DaySchedule,
    pub penalty_total: f64,
    pub violations: usize,
    pub steps: Vec<DayAheadStep>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl DayAheadPolicy {
    pub fn new(net: &Network, cfg: &PpoConfig, seed: u64) -> DayAheadPolicy {
        let layout = DayAheadLayout::of(net);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![layout.len()];
        sizes.extend(&cfg.hidden);
        let mut a_sizes = sizes.clone();
        a_sizes.push(layout.heads());
        sizes.push(1);
        let actor = Mlp::new(&a_sizes, 0.01, &mut rng);
        let critic = Mlp::new(&sizes, 0.01, &mut rng);
        DayAheadPolicy {
            actor_opt: Adam::new(actor.param_count()),
            critic_opt: Adam::new(critic.param_count()),
            actor,
            critic,
            layout,
            oltc: net.oltc,
            windows: net.scs.iter().map(|s| s.window).collect(),
            load_scale: net.total_load_mw().max(1e-6),
        }
    }

    /// Head slices of a logit vector: the tap head, then each capacitor.
    fn heads<'a>(&self, z: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = vec![&z[..TAP_MOVES.len()]];
        for k in 0..self.layout.scs {
            let s = TAP_MOVES.len() + 2 * k;
            out.push(&z[s..s + 2]);
        }
        out
    }

    fn observe(&self, f: &RegionForecast, st: &State) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.layout.len());
        for r in &f.region {
            x.extend(r.iter().map(|v| v / self.load_scale));
        }
        x.extend(f.system.iter().map(|v| v / self.load_scale));
        let mut hour = vec![0.0; HOURS];
        hour[st.hour] = 1.0;
        x.extend(hour);
        x.push(st.changes as f64 / self.oltc.daily_change_limit.max(1) as f64);
        let mut tap = vec![0.0; self.layout.tap_positions];
        tap[self.oltc.index_of(st.tap)] = 1.0;
        x.extend(tap);
        for k in 0..self.layout.scs {
            x.push(f64::from(u8::from(st.sc_start[k].is_some())));
            x.push(f64::from(u8::from(st.sc_used[k])));
        }
        x
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.critic.forward(x)[0]
    }

    /// Joint log-probability of `choices` and the summed head entropy.
    pub fn log_prob(&self, x: &[f64], choices: &[usize]) -> (f64, f64) {
        let z = self.actor.forward(x);
        let mut lp = 0.0;
        let mut ent = 0.0;
        for (h, &c) in self.heads(&z).iter().zip(choices) {
            let p = softmax(h);
            lp += p[c].ln();
            ent -= p.iter().map(|q| q * q.ln()).sum::<f64>();
        }
        (lp, ent)
    }
}

struct State {
    hour: usize,
    tap: i32,
    changes: usize,
    sc_start: Vec<Option<usize>>,
    sc_used: Vec<bool>,
}

/// Sequential hourly rollout. `penalty` is charged per overridden attempt.
pub fn rollout_day_ahead<R: Rng>(
    policy: &DayAheadPolicy,
    forecast: &RegionForecast,
    carried_tap: i32,
    choice: Choice,
    penalty: f64,
    rng: &mut R,
) -> DayAheadRollout {
    let n_sc = policy.layout.scs;
    let half = policy.oltc.half_range();
    let limit = policy.oltc.daily_change_limit;
    let mut st = State {
        hour: 0,
        tap: carried_tap,
        changes: 0,
        sc_start: vec![None; n_sc],
        sc_used: vec![false; n_sc],
    };
    let mut taps = Vec::with_capacity(HOURS);
    let mut intervals = vec![None; n_sc];
    let mut steps = Vec::with_capacity(HOURS);
    let mut violations = 0;
    for h in 0..HOURS {
        st.hour = h;
        let x = policy.observe(forecast, &st);
        let z = policy.actor.forward(&x);
        let mut choices = Vec::with_capacity(1 + n_sc);
        let mut lp = 0.0;
        for head in policy.heads(&z) {
            let p = softmax(head);
            let c = match choice {
                Choice::Argmax => p
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &q)| if q > p[b] { i } else { b }),
                Choice::Sample => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = p.len() - 1;
                    for (i, &q) in p.iter().enumerate() {
                        acc += q;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
            lp += p[c].ln();
            choices.push(c);
        }

        let mut bad = 0;
        let want = st.tap + TAP_MOVES[choices[0]];
        if want != st.tap {
            if want.abs() > half || st.changes >= limit {
                bad += 1;
            } else {
                st.tap = want;
                st.changes += 1;
            }
        }
        taps.push(st.tap);

        for k in 0..n_sc {
            let (w0, w1) = policy.windows[k];
            let switch = choices[1 + k] == 1;
            match (st.sc_start[k], switch) {
                (Some(s), true) => {
                    intervals[k] = Some((s, h));
                    st.sc_start[k] = None;
                }
                (Some(s), false) if h >= w1 => {
                    // Holding on past the window end.
                    bad += 1;
                    intervals[k] = Some((s, w1));
                    st.sc_start[k] = None;
                }
                (None, true) => {
                    if st.sc_used[k] || h < w0 || h >= w1 {
                        bad += 1;
                    } else {
                        st.sc_start[k] = Some(h);
                        st.sc_used[k] = true;
                    }
                }
                _ => {}
            }
        }
        violations += bad;
        steps.push(DayAheadStep {
            value: policy.value(&x),
            obs: x,
            choices,
            log_prob: lp,
            penalty: -penalty * bad as f64,
        });
    }
    for k in 0..n_sc {
        if let Some(s) = st.sc_start[k] {
            intervals[k] = Some((s, HOURS.min(policy.windows[k].1)));
        }
    }
    DayAheadRollout {
        schedule: DaySchedule {
            oltc_taps: taps,
            sc_intervals: intervals,
        },
        penalty_total: steps.iter().map(|s| s.penalty).sum(),
        violations,
        steps,
    }
}

/// Samples for a categorical update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatBatch {
    pub obs: Vec<Vec<f64>>,
    pub choices: Vec<Vec<usize>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl CatBatch {
    /// Hourly rewards are the intra-day rewards of that hour plus penalties.
    pub fn from_rollout(r: &DayAheadRollout, step_rewards: &[f64], gamma: f64, lambda: f64) -> CatBatch {
        let rewards: Vec<f64> = r
            .steps
            .iter()
            .enumerate()
            .map(|(h, s)| {
                let lo = (h * STEPS_PER_HOUR).min(step_rewards.len());
                let hi = ((h + 1) * STEPS_PER_HOUR).min(step_rewards.len());
                step_rewards[lo..hi].iter().sum::<f64>() + s.penalty
            })
            .collect();
        let values: Vec<f64> = r.steps.iter().map(|s| s.value).collect();
        let (advantages, returns) = compute_gae(&rewards, &values, 0.0, gamma, lambda);
        CatBatch {
            obs: r.steps.iter().map(|s| s.obs.clone()).collect(),
            choices: r.steps.iter().map(|s| s.choices.clone()).collect(),
            old_log_probs: r.steps.iter().map(|s| s.log_prob).collect(),
            advantages,
            returns,
        }
    }
}

pub struct CatLossGrad {
    pub loss: f64,
    pub actor_grad: Vec<f64>,
    pub critic_grad: Vec<f64>,
}

/// Clipped-surrogate loss with value and entropy terms for the
/// categorical heads, with analytic gradients.
pub fn cat_loss_and_grad(policy: &DayAheadPolicy, b: &CatBatch, idx: &[usize], cfg: &PpoConfig) -> CatLossGrad {
    let mut actor_grad = vec![0.0; policy.actor.param_count()];
    let mut critic_grad = vec![0.0; policy.critic.param_count()];
    let inv_b = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    for &i in idx {
        let x = &b.obs[i];
        let cache = policy.actor.forward_cached(x);
        let z = cache.output().to_vec();
        let heads = policy.heads(&z);
        let probs: Vec<Vec<f64>> = heads.iter().map(|h| softmax(h)).collect();
        let lp: f64 = probs.iter().zip(&b.choices[i]).map(|(p, &c)| p[c].ln()).sum();
        let ratio = (lp - b.old_log_probs[i]).exp();
        let adv = b.advantages[i];
        let unclipped = ratio * adv;
        let clip_val = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
        loss -= unclipped.min(clip_val) * inv_b;
        let g_lp = if unclipped <= clip_val { -unclipped * inv_b } else { 0.0 };

        let mut dz = Vec::with_capacity(z.len());
        for (p, &c) in probs.iter().zip(&b.choices[i]) {
            let ent: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
            loss -= cfg.entropy_coef * ent * inv_b;
            for (j, &q) in p.iter().enumerate() {
                let d_lp = f64::from(u8::from(j == c)) - q;
                let d_ent = -q * (q.ln() + ent);
                dz.push(g_lp * d_lp - cfg.entropy_coef * inv_b * d_ent);
            }
        }
        policy.actor.backward(&cache, &dz, &mut actor_grad);

        let vc = policy.critic.forward_cached(x);
        let err = vc.output()[0] - b.returns[i];
        loss += cfg.value_coef * err * err * inv_b;
        policy.critic.backward(&vc, &[2.0 * cfg.value_coef * err * inv_b], &mut critic_grad);
    }
    CatLossGrad {
        loss,
        actor_grad,
        critic_grad,
    }
}

/// Same epoch/minibatch/clip scheme as the continuous agent.
pub fn cat_update<R: Rng>(policy: &mut DayAheadPolicy, batch: &CatBatch, cfg: &PpoConfig, lr: f64, rng: &mut R) -> bool {
    if batch.advantages.is_empty() {
        return true;
    }
    let mut b = batch.clone();
    let n = b.advantages.len() as f64;
    if n >= 2.0 {
        let mean = b.advantages.iter().sum::<f64>() / n;
        let sd = (b.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt() + 1e-8;
        b.advantages.iter_mut().for_each(|a| *a = (*a - mean) / sd);
    }
    let snapshot = policy.clone();
    let mut order: Vec<usize> = (0..b.advantages.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in order.chunks(cfg.minibatch) {
            let mut g = cat_loss_and_grad(policy, &b, mb, cfg);
            if !g.loss.is_finite() || g.actor_grad.iter().chain(&g.critic_grad).any(|x| !x.is_finite()) {
                log::warn!("non-finite day-ahead loss; update aborted");
                *policy = snapshot;
                return false;
            }
            let norm = g.actor_grad.iter().chain(&g.critic_grad).map(|x| x * x).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                g.actor_grad.iter_mut().chain(g.critic_grad.iter_mut()).for_each(|x| *x *= s);
            }
            policy.actor_opt.step(policy.actor.params_mut(), &g.actor_grad, lr);
            policy.critic_opt.step(policy.critic.params_mut(), &g.critic_grad, lr);
        }
    }
    true
}

#[derive(Debug, Clone)]
pub struct PureRlOutcome {
    pub day_ahead: DayAheadPolicy,
    pub intra_day: Policy,
    /// Penalty-free total reward per episode.
    pub curve: Vec<f64>,
    pub penalties: Vec<f64>,
}

/// Joint training: each episode the day-ahead agent samples a schedule, the
/// intra-day agent runs the day under it, and both are updated.
pub fn train_pure_rl(
    net: Arc<Network>,
    scenario: &Scenario,
    days: &[usize],
    episodes: usize,
    cfg: &PpoConfig,
    penalty: f64,
    seed: u64,
) -> Result<PureRlOutcome> {
    cfg.validate()?;
    let mut day_ahead = DayAheadPolicy::new(&net, cfg, seed ^ 0xDA);
    let mut intra_day = Policy::for_layout(
        &ObservationLayout::of(&net),
        net.pvs.iter().map(|p| p.lambda).collect(),
        cfg,
        seed,
    );
    let mut curve = Vec::with_capacity(episodes);
    let mut penalties = Vec::with_capacity(episodes);
    if episodes == 0 {
        return Ok(PureRlOutcome {
            day_ahead,
            intra_day,
            curve,
            penalties,
        });
    }
    if days.is_empty() {
        return Err(Error::InvalidConfig("no training days".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9A7E);
    let lr_at = linear_lr(cfg.lr_pretrain_start, cfg.lr_pretrain_end, episodes);
    let mut env = Env::new(net);
    for ep in 0..episodes {
        let day = scenario.day(days[rng.random_range(0..days.len())]);
        let forecast = scenario.forecast(&day);
        let r = rollout_day_ahead(&day_ahead, &forecast, env.carried_tap, Choice::Sample, penalty, &mut rng);
        let (mut traj, log) = collect_episode(&mut env, &mut intra_day, day, r.schedule.clone(), &mut rng)?;
        traj.rewards.iter_mut().for_each(|x| *x *= cfg.reward_scale);
        let batch = Batch::from_trajectories(&[traj], cfg.gamma, cfg.gae_lambda);
        ppo_update(&mut intra_day, &batch, cfg, lr_at(ep), &mut rng);
        let scaled: Vec<f64> = log.rewards.iter().map(|x| x * cfg.reward_scale).collect();
        let cb = CatBatch::from_rollout(&r, &scaled, cfg.gamma, cfg.gae_lambda);
        cat_update(&mut day_ahead, &cb, cfg, lr_at(ep), &mut rng);
        curve.push(log.total_reward);
        penalties.push(r.penalty_total);
        if (ep + 1) % 100 == 0 {
            log::info!("day-ahead episode {}: reward {:.4}, penalty {:.1}", ep + 1, log.total_reward, r.penalty_total);
        }
    }
    Ok(PureRlOutcome {
        day_ahead,
        intra_day,
        curve,
        penalties,
    })
}

/// Deterministic evaluation of both agents.
pub fn evaluate_pure_rl(
    day_ahead: &DayAheadPolicy,
    intra_day: &Policy,
    net: Arc<Network>,
    scenario: &Scenario,
    days: &[usize],
) -> Result<Vec<EpisodeLog>> {
    let mut env = Env::new(net);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    days.iter()
        .map(|&d| {
            let day = scenario.day(d);
            let f = scenario.forecast(&day);
            let r = rollout_day_ahead(day_ahead, &f, env.carried_tap, Choice::Argmax, 0.0, &mut rng);
            run_day(&mut env, intra_day.deterministic(), day, r.schedule)
        })
        .collect()
}
