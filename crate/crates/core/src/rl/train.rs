//! Pretrain under random schedules, finetune under a fixed schedule source.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{ppo_update, Batch, Mode, Policy, PpoConfig, Trajectory, UpdateStats};
use crate::env::{run_day, Env, EpisodeLog, ObservationLayout};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::scenario::{DayProfile, Scenario};
use crate::schedule::{random_schedule, DaySchedule};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    /// Total reward of each training episode.
    pub curve: Vec<f64>,
    pub stats: Vec<UpdateStats>,
}

/// Rolls one stochastic episode, updating the normalizer unless frozen.
pub fn collect_episode<R: Rng>(
    env: &mut Env,
    policy: &mut Policy,
    day: DayProfile,
    schedule: DaySchedule,
    rng: &mut R,
) -> Result<(Trajectory, EpisodeLog)> {
    let mut traj = Trajectory::default();
    let mut obs = env.reset(day, schedule)?;
    loop {
        policy.normalizer.update(&obs.0);
        let x = policy.normalize(&obs)?;
        let out = policy.act_normalized(&x, Mode::Stochastic, rng)?;
        traj.values.push(policy.value_normalized(&x));
        let res = env.step(&out.action)?;
        traj.obs.push(x);
        traj.u.push(out.u);
        traj.log_probs.push(out.log_prob);
        traj.rewards.push(res.reward);
        obs = res.observation;
        if res.done {
            break;
        }
    }
    traj.last_value = 0.0;
    Ok((traj, env.episode_log()?))
}

/// Shared loop: one episode, one update.
pub fn train<R, S, L>(
    policy: Policy,
    net: Arc<Network>,
    scenario: &Scenario,
    days: &[usize],
    episodes: usize,
    cfg: &PpoConfig,
    rng: &mut R,
    mut schedule_for: S,
    lr_at: L,
) -> Result<TrainOutcome>
where
    R: Rng,
    S: FnMut(&DayProfile, &mut R) -> Result<DaySchedule>,
    L: Fn(usize) -> f64,
{
    cfg.validate()?;
    let mut policy = policy;
    let mut curve = Vec::with_capacity(episodes);
    let mut stats = Vec::with_capacity(episodes);
    if episodes == 0 {
        return Ok(TrainOutcome { policy, curve, stats });
    }
    if days.is_empty() {
        return Err(Error::InvalidConfig("no training days".into()));
    }
    let mut env = Env::new(net);
    for ep in 0..episodes {
        let day = scenario.day(days[rng.random_range(0..days.len())]);
        let schedule = schedule_for(&day, rng)?;
        let (mut traj, log) = collect_episode(&mut env, &mut policy, day, schedule, rng)?;
        traj.rewards.iter_mut().for_each(|r| *r *= cfg.reward_scale);
        curve.push(log.total_reward);
        let batch = Batch::from_trajectories(&[traj], cfg.gamma, cfg.gae_lambda);
        stats.push(ppo_update(&mut policy, &batch, cfg, lr_at(ep), rng));
        if (ep + 1) % 100 == 0 {
            log::info!("episode {}: reward {:.4}", ep + 1, log.total_reward);
        }
    }
    Ok(TrainOutcome { policy, curve, stats })
}

/// Linear decay from `start` at episode 0 to `end` at the last episode.
pub fn linear_lr(start: f64, end: f64, episodes: usize) -> impl Fn(usize) -> f64 {
    move |ep| {
        if episodes <= 1 {
            start
        } else {
            start + (end - start) * ep as f64 / (episodes - 1) as f64
        }
    }
}

/// Random valid OLTC/SC schedules, learning rate decaying linearly.
pub fn pretrain(
    net: Arc<Network>,
    scenario: &Scenario,
    days: &[usize],
    episodes: usize,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let policy = Policy::for_layout(
        &ObservationLayout::of(&net),
        net.pvs.iter().map(|p| p.lambda).collect(),
        cfg,
        seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let (oltc, scs) = (net.oltc, net.scs.clone());
    train(
        policy,
        net,
        scenario,
        days,
        episodes,
        cfg,
        &mut rng,
        |_, rng| Ok(random_schedule(rng, &oltc, &scs, 0)),
        linear_lr(cfg.lr_pretrain_start, cfg.lr_pretrain_end, episodes),
    )
}

/// Continues from `policy` with a frozen normalizer and constant rate.
pub fn finetune<S>(
    policy: Policy,
    net: Arc<Network>,
    scenario: &Scenario,
    days: &[usize],
    episodes: usize,
    cfg: &PpoConfig,
    seed: u64,
    mut schedule_for: S,
) -> Result<TrainOutcome>
where
    S: FnMut(&DayProfile) -> Result<DaySchedule>,
{
    let mut policy = policy;
    policy.normalizer.frozen = true;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF1E7);
    let lr = cfg.lr_finetune;
    train(policy, net, scenario, days, episodes, cfg, &mut rng, |d, _| schedule_for(d), |_| lr)
}

/// Deterministic rollouts over `days`, schedules from `schedule_for`.
pub fn evaluate<S>(policy: &Policy, net: Arc<Network>, scenario: &Scenario, days: &[usize], mut schedule_for: S) -> Result<Vec<EpisodeLog>>
where
    S: FnMut(&DayProfile) -> Result<DaySchedule>,
{
    let mut env = Env::new(net);
    days.iter()
        .map(|&d| {
            let day = scenario.day(d);
            let s = schedule_for(&day)?;
            run_day(&mut env, policy.deterministic(), day, s)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    policy: Policy,
}

pub fn save_checkpoint(path: &Path, policy: &Policy) -> Result<()> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        policy: policy.clone(),
    };
    let text = serde_json::to_string(&ck).map_err(|e| Error::parse("checkpoint", e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse("checkpoint", e))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    Ok(ck.policy)
}

pub fn write_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Other(e.to_string()))?;
    w.write_record(["episode", "mean_reward"]).map_err(|e| Error::Other(e.to_string()))?;
    for (i, r) in curve.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string()])
            .map_err(|e| Error::Other(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
