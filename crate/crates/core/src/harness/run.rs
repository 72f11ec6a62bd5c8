use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Method, ResultTable};
use crate::env::{run_day, zero_policy, Env, EpisodeLog, ObservationLayout};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::llm::agent::{LlmAgent, Transcript};
use crate::llm::kb::KnowledgeBase;
use crate::llm::prompt::DeviceSpecs;
use crate::pure_rl::{evaluate_pure_rl, train_pure_rl};
use crate::rl::train::{evaluate, finetune, load_checkpoint, pretrain, save_checkpoint, train, write_curve};
use crate::rl::Policy;
use crate::scenario::{DayProfile, Scenario, DAYS_PER_YEAR};
use crate::schedule::DaySchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub day_index: usize,
    pub deviation: f64,
    pub violation_rate: f64,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    pub episodes: Vec<EpisodeSummary>,
    pub logs: Vec<EpisodeLog>,
}

/// Seeded disjoint split of the year into training and held-out days.
pub fn split_days(seed: u64, test_days: usize) -> (Vec<usize>, Vec<usize>) {
    let mut days: Vec<usize> = (0..DAYS_PER_YEAR).collect();
    days.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7E57));
    let n = test_days.min(DAYS_PER_YEAR - 1);
    let mut test = days[..n].to_vec();
    let mut train = days[n..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

fn tagged<T>(stage: &'static str, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        seed,
        source: Box::new(e),
    })
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::parse(path.display().to_string(), e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Everything one seed's methods share: day split, pretrained policy and
/// evolved knowledge bases.
pub struct SeedContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub net: Arc<Network>,
    pub scenario: &'a Scenario,
    pub seed: u64,
    pub dir: PathBuf,
    pub train_days: Vec<usize>,
    pub test_days: Vec<usize>,
    pretrained: Option<Policy>,
    kbs: Vec<(usize, KnowledgeBase)>,
}

impl<'a> SeedContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, net: Arc<Network>, scenario: &'a Scenario, seed: u64) -> Result<SeedContext<'a>> {
        let (train_days, test_days) = split_days(seed, cfg.test_days);
        assert!(test_days.iter().all(|d| train_days.binary_search(d).is_err()), "train/test overlap");
        let dir = cfg.seed_dir(seed);
        create_dir(&dir)?;
        write_json(&dir.join("split.json"), &serde_json::json!({"train": train_days, "test": test_days}))?;
        Ok(SeedContext {
            cfg,
            net,
            scenario,
            seed,
            dir,
            train_days,
            test_days,
            pretrained: None,
            kbs: Vec::new(),
        })
    }

    pub fn pretrained(&mut self) -> Result<Policy> {
        if let Some(p) = &self.pretrained {
            return Ok(p.clone());
        }
        let path = self.dir.join("pretrain.json");
        let policy = if self.cfg.reuse_artifacts && path.exists() {
            load_checkpoint(&path)?
        } else {
            log::info!("seed {}: pretraining for {} episodes", self.seed, self.cfg.budgets.pretrain);
            let out = tagged(
                "pretrain",
                self.seed,
                pretrain(
                    self.net.clone(),
                    self.scenario,
                    &self.train_days,
                    self.cfg.budgets.pretrain,
                    &self.cfg.ppo,
                    self.seed,
                ),
            )?;
            save_checkpoint(&path, &out.policy)?;
            write_curve(&self.dir.join("pretrain_curve.csv"), &out.curve)?;
            out.policy
        };
        self.pretrained = Some(policy.clone());
        Ok(policy)
    }

    fn kb_name(&self, n_llm: usize) -> String {
        if n_llm == self.cfg.n_llm {
            "kb".into()
        } else {
            format!("kb_n{n_llm}")
        }
    }

    /// Knowledge base evolved over the improvement budget with `n_llm`
    /// reflexion rounds per day.
    pub fn knowledge_base(&mut self, n_llm: usize) -> Result<KnowledgeBase> {
        if let Some((_, kb)) = self.kbs.iter().find(|(n, _)| *n == n_llm) {
            return Ok(kb.clone());
        }
        let name = self.kb_name(n_llm);
        let path = self.dir.join(format!("{name}.json"));
        let kb = if self.cfg.reuse_artifacts && path.exists() {
            KnowledgeBase::load(&path)?
        } else {
            log::info!("seed {}: LLM improvement for {} days ({n_llm} reflexion rounds)", self.seed, self.cfg.budgets.llm);
            let mut agent = LlmAgent::new(
                self.cfg.advisor.build(self.seed)?,
                self.cfg.advisor.clone(),
                KnowledgeBase::new(self.cfg.kb_threshold),
                DeviceSpecs::of(&self.net),
            );
            agent.transcript = Transcript::create(&self.dir.join(format!("{name}_transcript.jsonl")))?;
            let days = self.improvement_days();
            let mut env = Env::new(self.net.clone());
            let recs = tagged("llm-improve", self.seed, agent.improve(&mut env, self.scenario, &days, n_llm))?;
            let curve: Vec<f64> = recs.iter().map(|r| r.best_reward).collect();
            write_curve(&self.dir.join(format!("{name}_curve.csv")), &curve)?;
            write_json(&self.dir.join(format!("{name}_improve.json")), &recs)?;
            agent.kb.save(&path)?;
            agent.kb
        };
        self.kbs.push((n_llm, kb.clone()));
        Ok(kb)
    }

    /// Training days visited during improvement, shuffled and cycled.
    fn improvement_days(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x11A);
        let mut out = Vec::with_capacity(self.cfg.budgets.llm);
        while out.len() < self.cfg.budgets.llm {
            let mut pass = self.train_days.clone();
            pass.shuffle(&mut rng);
            out.extend(pass.into_iter().take(self.cfg.budgets.llm - out.len()));
        }
        out
    }

    /// Frozen-knowledge agent used for finetuning and evaluation.
    pub fn frozen_agent(&self, kb: KnowledgeBase) -> Result<LlmAgent> {
        Ok(LlmAgent::new(
            self.cfg.advisor.build(self.seed)?,
            self.cfg.advisor.clone(),
            kb,
            DeviceSpecs::of(&self.net),
        ))
    }

    fn method_dir(&self, m: Method) -> Result<PathBuf> {
        let d = self.dir.join(m.name());
        create_dir(&d)?;
        Ok(d)
    }

    fn finetuned(
        &mut self,
        m: Method,
        init: Policy,
        pretrained: bool,
        mut schedule_for: impl FnMut(&DayProfile) -> Result<DaySchedule>,
    ) -> Result<Policy> {
        let dir = self.method_dir(m)?;
        let path = dir.join("finetune.json");
        if self.cfg.reuse_artifacts && path.exists() {
            return load_checkpoint(&path);
        }
        let cfg = &self.cfg.ppo;
        let episodes = self.cfg.budgets.finetune;
        let out = if pretrained {
            finetune(init, self.net.clone(), self.scenario, &self.train_days, episodes, cfg, self.seed, schedule_for)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xF1E7);
            let lr = cfg.lr_finetune;
            train(
                init,
                self.net.clone(),
                self.scenario,
                &self.train_days,
                episodes,
                cfg,
                &mut rng,
                |d, _| schedule_for(d),
                |_| lr,
            )
        };
        let out = tagged("finetune", self.seed, out)?;
        save_checkpoint(&path, &out.policy)?;
        write_curve(&dir.join("finetune_curve.csv"), &out.curve)?;
        Ok(out.policy)
    }

    fn zero_q_logs(&self, mut schedule_for: impl FnMut(&DayProfile) -> Result<DaySchedule>) -> Result<Vec<EpisodeLog>> {
        let mut env = Env::new(self.net.clone());
        let n = self.net.pvs.len();
        self.test_days
            .iter()
            .map(|&d| {
                let day = self.scenario.day(d);
                let s = schedule_for(&day)?;
                run_day(&mut env, zero_policy(n), day, s)
            })
            .collect()
    }

    fn llm_schedules<'b>(&'b self, agent: &'b mut LlmAgent) -> impl FnMut(&DayProfile) -> Result<DaySchedule> + 'b {
        let scenario = self.scenario;
        move |day| {
            let f = scenario.forecast(day);
            Ok(agent.schedule_for(&f, 0, day.day_index))
        }
    }
}

/// Runs one method's pipeline for the seed and evaluates it on the
/// held-out days.
pub fn run_method(ctx: &mut SeedContext, method: Method) -> Result<MethodRun> {
    let sc_count = ctx.net.scs.len();
    let neutral = move |_: &DayProfile| Ok(DaySchedule::neutral(sc_count));
    let seed = ctx.seed;
    let n_llm = ctx.cfg.n_llm;
    let logs = match method {
        Method::Original => ctx.zero_q_logs(neutral)?,
        Method::NoLlm => {
            let p = ctx.pretrained()?;
            let p = ctx.finetuned(method, p, true, neutral)?;
            evaluate(&p, ctx.net.clone(), ctx.scenario, &ctx.test_days, neutral)?
        }
        Method::NoRl => {
            let kb = ctx.knowledge_base(n_llm)?;
            let mut agent = ctx.frozen_agent(kb)?;
            let logs = ctx.zero_q_logs(ctx.llm_schedules(&mut agent));
            logs?
        }
        Method::Proposed | Method::NoPt | Method::NoReflexion => {
            let rounds = if method == Method::NoReflexion { 0 } else { n_llm };
            let kb = ctx.knowledge_base(rounds)?;
            let (init, pretrained) = if method == Method::NoPt {
                let policy = Policy::for_layout(
                    &ObservationLayout::of(&ctx.net),
                    ctx.net.pvs.iter().map(|p| p.lambda).collect(),
                    &ctx.cfg.ppo,
                    seed,
                );
                (policy, false)
            } else {
                (ctx.pretrained()?, true)
            };
            let mut agent = ctx.frozen_agent(kb.clone())?;
            let schedules = {
                let scenario = ctx.scenario;
                move |day: &DayProfile| {
                    let f = scenario.forecast(day);
                    Ok(agent.schedule_for(&f, 0, day.day_index))
                }
            };
            let p = ctx.finetuned(method, init, pretrained, schedules)?;
            let mut agent = ctx.frozen_agent(kb)?;
            let logs = evaluate(&p, ctx.net.clone(), ctx.scenario, &ctx.test_days, ctx.llm_schedules(&mut agent));
            logs?
        }
        Method::PureRl => {
            let dir = ctx.method_dir(method)?;
            let episodes = ctx.cfg.budgets.pretrain + ctx.cfg.budgets.finetune;
            let out = tagged(
                "pure-rl",
                seed,
                train_pure_rl(
                    ctx.net.clone(),
                    ctx.scenario,
                    &ctx.train_days,
                    episodes,
                    &ctx.cfg.ppo,
                    ctx.cfg.pure_rl_penalty,
                    seed,
                ),
            )?;
            write_curve(&dir.join("train_curve.csv"), &out.curve)?;
            write_json(&dir.join("day_ahead.json"), &out.day_ahead)?;
            save_checkpoint(&dir.join("intra_day.json"), &out.intra_day)?;
            evaluate_pure_rl(&out.day_ahead, &out.intra_day, ctx.net.clone(), ctx.scenario, &ctx.test_days)?
        }
    };
    let logs = tagged("eval", seed, Ok(logs))?;
    let episodes: Vec<EpisodeSummary> = logs
        .iter()
        .map(|l| EpisodeSummary {
            seed,
            day_index: l.day_index,
            deviation: l.deviation,
            violation_rate: l.violation_rate,
            total_reward: l.total_reward,
        })
        .collect();
    write_episodes(&ctx.method_dir(method)?, &episodes, &logs)?;
    Ok(MethodRun {
        method,
        seed,
        episodes,
        logs,
    })
}

fn write_episodes(dir: &Path, eps: &[EpisodeSummary], logs: &[EpisodeLog]) -> Result<()> {
    let path = dir.join("episodes.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    for l in logs {
        let line = serde_json::to_string(l).map_err(|e| Error::parse("episode log", e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    f.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("episodes.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Other(e.to_string()))?;
    for e in eps {
        w.serialize(e).map_err(|e| Error::Other(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Every configured method over every seed (seeds in parallel), with the
/// aggregated table written to `results.csv`.
pub fn evaluate_methods(cfg: &ExperimentConfig) -> Result<(ResultTable, Vec<MethodRun>)> {
    cfg.validate()?;
    let net = Arc::new(cfg.network()?);
    let scenario = Scenario::new(&net, cfg.scenario_config(&net))?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("config.json"), cfg)?;
    let per_seed: Vec<Result<Vec<MethodRun>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut ctx = SeedContext::new(cfg, net.clone(), &scenario, seed)?;
            cfg.methods.iter().map(|&m| run_method(&mut ctx, m)).collect()
        })
        .collect();
    let mut runs = Vec::new();
    for r in per_seed {
        runs.extend(r?);
    }
    runs.sort_by_key(|r| (cfg.methods.iter().position(|&m| m == r.method), cfg.seeds.iter().position(|&s| s == r.seed)));
    let table = ResultTable::from_runs(&runs);
    let path = cfg.output_dir.join("results.csv");
    std::fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok((table, runs))
}
