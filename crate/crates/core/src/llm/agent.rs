//! The scheduling agent: retrieval-augmented proposals with re-prompting,
//! offline reflexion over simulated days, and knowledge-base evolution.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::advisor::{Advisor, RemoteAdvisor, RemoteConfig, StubAdvisor, StubConfig};
use super::kb::{KnowledgeBase, KnowledgeEntry, Retrieval, UpdateOutcome};
use super::parse::parse_response;
use super::prompt::{build_prompt, DeviceSpecs, Feedback, Message, PromptContext, Sampling};
use crate::env::{run_day, zero_policy, Env, EpisodeLog};
use crate::error::{Error, Result};
use crate::scenario::{RegionForecast, Scenario};
use crate::schedule::{validate_schedule, DaySchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorConfig {
    pub backend: Backend,
    /// Model name for the remote backend; the environment variable wins.
    pub model: String,
    pub train: Sampling,
    pub test: Sampling,
    /// Attempts per proposal before falling back.
    pub max_reprompts: usize,
    pub timeout_s: f64,
    pub retries: usize,
    pub stub: StubConfig,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig {
            backend: Backend::Stub,
            model: "gpt-4o".into(),
            train: Sampling {
                temperature: 0.7,
                top_p: 0.8,
            },
            test: Sampling {
                temperature: 0.2,
                top_p: 0.6,
            },
            max_reprompts: 3,
            timeout_s: 60.0,
            retries: 3,
            stub: StubConfig::default(),
        }
    }
}

impl AdvisorConfig {
    pub fn validate(&self) -> Result<()> {
        for s in [self.train, self.test] {
            if !(s.temperature >= 0.0) || !(0.0..=1.0).contains(&s.top_p) {
                return Err(Error::InvalidConfig(format!(
                    "sampling temperature {} / top-p {} out of range",
                    s.temperature, s.top_p
                )));
            }
        }
        if self.max_reprompts < 1 {
            return Err(Error::InvalidConfig("max_reprompts must be at least 1".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::InvalidConfig("timeout_s must be positive".into()));
        }
        Ok(())
    }

    pub fn sampling(&self, phase: Phase) -> Sampling {
        match phase {
            Phase::Train => self.train,
            Phase::Test => self.test,
        }
    }

    /// Instantiates the configured backend; `seed` keys the stub.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Advisor + Send>> {
        self.validate()?;
        Ok(match self.backend {
            Backend::Stub => Box::new(StubAdvisor::new(StubConfig {
                seed: self.stub.seed ^ seed,
                ..self.stub
            })),
            Backend::Remote => {
                let mut rc = RemoteConfig::from_env(Duration::from_secs_f64(self.timeout_s), self.retries)?;
                if std::env::var(super::advisor::ENV_MODEL).is_err() {
                    rc.model = self.model.clone();
                }
                Box::new(RemoteAdvisor::new(rc))
            }
        })
    }
}

#[derive(Serialize)]
struct TranscriptRecord<'a> {
    day: usize,
    round: usize,
    attempt: usize,
    sampling: Sampling,
    messages: &'a [Message],
    reply: Option<&'a str>,
    outcome: String,
}

/// JSON-lines log of every prompt and reply.
#[derive(Debug, Default)]
pub struct Transcript {
    out: Option<BufWriter<File>>,
}

impl Transcript {
    pub fn disabled() -> Transcript {
        Transcript { out: None }
    }

    pub fn create(path: &Path) -> Result<Transcript> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Transcript {
            out: Some(BufWriter::new(f)),
        })
    }

    fn record(&mut self, rec: &TranscriptRecord) {
        if let Some(out) = &mut self.out {
            let line = serde_json::to_string(rec).expect("transcript serializes");
            if let Err(e) = writeln!(out, "{line}") {
                log::warn!("transcript write failed: {e}");
            }
        }
    }

    pub fn flush(&mut self) {
        if let Some(out) = &mut self.out {
            let _ = out.flush();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub schedule: DaySchedule,
    pub retrieval: Retrieval,
    pub attempts: usize,
    /// Set when the advisor never produced a valid schedule.
    pub fallback: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub schedule: DaySchedule,
    pub reward: f64,
    pub log: EpisodeLog,
    /// True when the round failed and the previous candidate was reused.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reflexion {
    pub candidates: Vec<Candidate>,
    pub best: usize,
    pub retrieval: Retrieval,
    pub warnings: Vec<String>,
}

impl Reflexion {
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.best]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImproveRecord {
    pub day_index: usize,
    pub best_reward: f64,
    pub candidate_rewards: Vec<f64>,
    pub similarity: f64,
    pub outcome: UpdateOutcome,
    pub kb_size: usize,
    pub warnings: Vec<String>,
}

/// Advisor plus knowledge base for one network.
pub struct LlmAgent {
    pub advisor: Box<dyn Advisor + Send>,
    pub cfg: AdvisorConfig,
    pub kb: KnowledgeBase,
    pub specs: DeviceSpecs,
    pub transcript: Transcript,
}

impl LlmAgent {
    pub fn new(advisor: Box<dyn Advisor + Send>, cfg: AdvisorConfig, kb: KnowledgeBase, specs: DeviceSpecs) -> LlmAgent {
        LlmAgent {
            advisor,
            cfg,
            kb,
            specs,
            transcript: Transcript::disabled(),
        }
    }

    /// Retrieve, prompt, parse and validate, re-prompting in a fresh
    /// dialogue on failure. Falls back to the retrieved schedule, then to
    /// the neutral one.
    pub fn propose_schedule(
        &mut self,
        forecast: &RegionForecast,
        carried_tap: i32,
        phase: Phase,
        reflection: Option<Feedback>,
        tag: (usize, usize),
    ) -> Proposal {
        let retrieval = self.kb.retrieve(&forecast.system);
        let few_shot = self.kb.get(&retrieval).cloned();
        let sampling = self.cfg.sampling(phase);
        let scs = self.specs.sc_specs();
        let oltc = self.specs.oltc;
        let mut reason: Option<String> = None;
        let mut attempts = 0;
        let mut transport = None;
        for attempt in 0..self.cfg.max_reprompts {
            attempts += 1;
            let bundle = build_prompt(
                PromptContext {
                    specs: self.specs.clone(),
                    forecast: forecast.clone(),
                    carried_tap,
                    few_shot: few_shot.clone(),
                    similarity: retrieval.index.map(|_| retrieval.similarity),
                    reflection: reflection.clone(),
                    retry_reason: reason.clone(),
                },
                sampling,
            );
            let reply = match self.advisor.complete(&bundle) {
                Ok(r) => r,
                Err(e) => {
                    self.transcript.record(&TranscriptRecord {
                        day: tag.0,
                        round: tag.1,
                        attempt,
                        sampling,
                        messages: &bundle.messages,
                        reply: None,
                        outcome: e.to_string(),
                    });
                    transport = Some(e.to_string());
                    break;
                }
            };
            let outcome = match parse_response(&reply, &oltc, scs.len(), carried_tap) {
                Err(e) => Err(e.to_string()),
                Ok(s) => {
                    let v = validate_schedule(&s, &oltc, &scs, carried_tap);
                    if v.is_empty() {
                        Ok(s)
                    } else {
                        Err(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))
                    }
                }
            };
            self.transcript.record(&TranscriptRecord {
                day: tag.0,
                round: tag.1,
                attempt,
                sampling,
                messages: &bundle.messages,
                reply: Some(&reply),
                outcome: match &outcome {
                    Ok(_) => "ok".into(),
                    Err(e) => e.clone(),
                },
            });
            match outcome {
                Ok(schedule) => {
                    return Proposal {
                        schedule,
                        retrieval,
                        attempts,
                        fallback: false,
                        warning: None,
                    }
                }
                Err(e) => reason = Some(e),
            }
        }
        let warning = match transport {
            Some(t) => format!("advisor unavailable ({t}); using fallback schedule"),
            None => format!(
                "no valid schedule after {attempts} attempts ({}); using fallback schedule",
                reason.unwrap_or_default()
            ),
        };
        log::warn!("day {}: {warning}", tag.0);
        let schedule = few_shot
            .map(|e| e.schedule)
            .filter(|s| validate_schedule(s, &oltc, &scs, carried_tap).is_empty())
            .unwrap_or_else(|| DaySchedule::neutral(scs.len()));
        Proposal {
            schedule,
            retrieval,
            attempts,
            fallback: true,
            warning: Some(warning),
        }
    }

    /// Initial proposal plus `n_llm` refinement rounds, each evaluated with
    /// zero inverter reactive power. A failed round repeats the candidate it
    /// was asked to refine.
    pub fn reflect_and_improve(
        &mut self,
        env: &mut Env,
        day: &crate::scenario::DayProfile,
        forecast: &RegionForecast,
        n_llm: usize,
        phase: Phase,
    ) -> Result<Reflexion> {
        let n_pv = env.action_len();
        let carried = env.carried_tap;
        let first = self.propose_schedule(forecast, carried, phase, None, (day.day_index, 0));
        let retrieval = first.retrieval;
        let mut warnings: Vec<String> = first.warning.into_iter().collect();
        let log = run_day(env, zero_policy(n_pv), day.clone(), first.schedule.clone())?;
        let mut candidates = vec![Candidate {
            schedule: first.schedule,
            reward: log.total_reward,
            log,
            reused: false,
        }];
        let mut best = 0;
        for round in 1..=n_llm {
            let b = &candidates[best];
            let feedback = Feedback {
                schedule: b.schedule.clone(),
                total_reward: b.reward,
                hourly_system: b.log.hourly_system.clone(),
                hourly_region: b.log.hourly_region.clone(),
            };
            let p = self.propose_schedule(forecast, carried, phase, Some(feedback), (day.day_index, round));
            let cand = if p.fallback {
                warnings.extend(p.warning);
                Candidate {
                    reused: true,
                    ..candidates[best].clone()
                }
            } else {
                let log = run_day(env, zero_policy(n_pv), day.clone(), p.schedule.clone())?;
                Candidate {
                    schedule: p.schedule,
                    reward: log.total_reward,
                    log,
                    reused: false,
                }
            };
            if cand.reward > candidates[best].reward {
                best = candidates.len();
            }
            candidates.push(cand);
        }
        Ok(Reflexion {
            candidates,
            best,
            retrieval,
            warnings,
        })
    }

    /// One improvement episode: reflexion on the day, then the
    /// threshold-gated knowledge-base update.
    pub fn improve_day(
        &mut self,
        env: &mut Env,
        day: &crate::scenario::DayProfile,
        forecast: &RegionForecast,
        n_llm: usize,
    ) -> Result<ImproveRecord> {
        let r = self.reflect_and_improve(env, day, forecast, n_llm, Phase::Train)?;
        let b = r.best();
        let entry = KnowledgeEntry {
            day_index: day.day_index,
            system_forecast: forecast.system.clone(),
            region_forecast: forecast.region.clone(),
            schedule: b.schedule.clone(),
            reward: b.reward,
            hourly_system: b.log.hourly_system.clone(),
            hourly_region: b.log.hourly_region.clone(),
        };
        let outcome = self.kb.update(entry, &r.retrieval);
        Ok(ImproveRecord {
            day_index: day.day_index,
            best_reward: b.reward,
            candidate_rewards: r.candidates.iter().map(|c| c.reward).collect(),
            similarity: r.retrieval.similarity,
            outcome,
            kb_size: self.kb.len(),
            warnings: r.warnings,
        })
    }

    /// Runs the improvement phase over `days` in order.
    pub fn improve(&mut self, env: &mut Env, scenario: &Scenario, days: &[usize], n_llm: usize) -> Result<Vec<ImproveRecord>> {
        let mut out = Vec::with_capacity(days.len());
        for &d in days {
            let day = scenario.day(d);
            let forecast = scenario.forecast(&day);
            out.push(self.improve_day(env, &day, &forecast, n_llm)?);
        }
        self.transcript.flush();
        Ok(out)
    }

    /// Frozen-policy schedule for a day (test sampling, no reflexion).
    pub fn schedule_for(&mut self, forecast: &RegionForecast, carried_tap: i32, day_index: usize) -> DaySchedule {
        self.propose_schedule(forecast, carried_tap, Phase::Test, None, (day_index, 0)).schedule
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::Network;
    use crate::llm::advisor::{GarbageAdvisor, ScriptedAdvisor};
    use crate::scenario::ScenarioConfig;

    fn setup() -> (Env, Scenario, DeviceSpecs) {
        let net = Network::ieee33();
        let sc = Scenario::new(&net, ScenarioConfig::for_network(&net, 3)).unwrap();
        let specs = DeviceSpecs::of(&net);
        (Env::new(Arc::new(net)), sc, specs)
    }

    fn stub_agent(specs: DeviceSpecs) -> LlmAgent {
        let cfg = AdvisorConfig::default();
        LlmAgent::new(cfg.build(7).unwrap(), cfg, KnowledgeBase::default(), specs)
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = AdvisorConfig::default();
        assert_eq!((c.train.temperature, c.train.top_p), (0.7, 0.8));
        assert_eq!((c.test.temperature, c.test.top_p), (0.2, 0.6));
        assert_eq!(c.max_reprompts, 3);
        c.validate().unwrap();
        let bad = AdvisorConfig {
            max_reprompts: 0,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
        let bad = AdvisorConfig {
            train: Sampling {
                temperature: -0.1,
                top_p: 0.8,
            },
            ..c
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn garbage_falls_back_to_neutral() {
        let (_, sc, specs) = setup();
        let cfg = AdvisorConfig::default();
        let mut agent = LlmAgent::new(Box::new(GarbageAdvisor::default()), cfg, KnowledgeBase::default(), specs);
        let day = sc.day(5);
        let p = agent.propose_schedule(&sc.forecast(&day), 0, Phase::Train, None, (5, 0));
        assert!(p.fallback);
        assert_eq!(p.attempts, 3);
        assert_eq!(p.schedule, DaySchedule::neutral(3));
        assert!(p.warning.unwrap().contains("missing answer block"));
    }

    #[test]
    fn fallback_prefers_retrieved_schedule() {
        let (_, sc, specs) = setup();
        let day = sc.day(5);
        let f = sc.forecast(&day);
        let mut kb = KnowledgeBase::default();
        let mut e = crate::llm::kb::tests::entry(f.system.clone(), -1.0);
        e.schedule = DaySchedule {
            oltc_taps: vec![2; 24],
            sc_intervals: vec![None; 3],
        };
        kb.entries.push(e.clone());
        let mut agent = LlmAgent::new(Box::new(GarbageAdvisor::default()), AdvisorConfig::default(), kb, specs);
        let p = agent.propose_schedule(&f, 0, Phase::Test, None, (5, 0));
        assert!(p.fallback);
        assert_eq!(p.schedule, e.schedule);
    }

    #[test]
    fn reprompt_recovers_with_reason() {
        let (_, sc, specs) = setup();
        let day = sc.day(5);
        let good = "```answer\nOLTC: 0=1, 12=-1\nSC1: OFF\nSC2: ON 18-20\nSC3: OFF\n```".to_string();
        let advisor = ScriptedAdvisor::new(vec!["```\nOLTC: 0=+9\n```".into(), good]);
        let mut agent = LlmAgent::new(Box::new(advisor), AdvisorConfig::default(), KnowledgeBase::default(), specs);
        let p = agent.propose_schedule(&sc.forecast(&day), 0, Phase::Train, None, (5, 0));
        assert!(!p.fallback);
        assert_eq!(p.attempts, 2);
        assert_eq!(p.schedule.oltc_taps[11], 1);
        assert_eq!(p.schedule.oltc_taps[12], -1);
    }

    #[test]
    fn grid_code_violation_is_reprompted() {
        let (_, sc, specs) = setup();
        let day = sc.day(5);
        // Five tap changes, then a capacitor outside its window.
        let replies = vec![
            "```\nOLTC: 0=1, 2=2, 4=3, 6=4, 8=5\nSC1: OFF\nSC2: OFF\nSC3: OFF\n```".into(),
            "```\nOLTC: 0=1\nSC1: ON 2-5\nSC2: OFF\nSC3: OFF\n```".into(),
        ];
        let mut agent = LlmAgent::new(
            Box::new(ScriptedAdvisor::new(replies)),
            AdvisorConfig::default(),
            KnowledgeBase::default(),
            specs,
        );
        let p = agent.propose_schedule(&sc.forecast(&day), 0, Phase::Train, None, (5, 0));
        assert!(p.fallback);
        assert!(p.warning.unwrap().contains("outside allowed window"));
    }

    #[test]
    fn reflexion_candidate_counts() {
        let (mut env, sc, specs) = setup();
        let mut agent = stub_agent(specs);
        let day = sc.day(170);
        let f = sc.forecast(&day);
        let r0 = agent.reflect_and_improve(&mut env, &day, &f, 0, Phase::Train).unwrap();
        assert_eq!(r0.candidates.len(), 1);
        let r3 = agent.reflect_and_improve(&mut env, &day, &f, 3, Phase::Train).unwrap();
        assert_eq!(r3.candidates.len(), 4);
        assert_eq!(r3.candidates[0].schedule, r0.candidates[0].schedule);
        let best = r3.best().reward;
        assert!(r3.candidates.iter().all(|c| c.reward <= best));
    }

    #[test]
    fn improvement_phase_is_reproducible() {
        let (mut env, sc, specs) = setup();
        let days = [10, 100, 101, 200];
        let run = |env: &mut Env| {
            let mut agent = stub_agent(specs.clone());
            let recs = agent.improve(env, &sc, &days, 2).unwrap();
            (recs, agent.kb)
        };
        let (a, kb_a) = run(&mut env);
        let (b, kb_b) = run(&mut env);
        assert_eq!(a, b);
        assert_eq!(kb_a.to_json(), kb_b.to_json());
        assert_eq!(a[0].outcome, UpdateOutcome::Appended);
        for (rec, kb_len) in a.iter().zip(1..) {
            assert!(rec.kb_size <= kb_len);
        }
    }

    #[test]
    fn transcript_lines_are_json() {
        let (_, sc, specs) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut agent = stub_agent(specs);
        agent.transcript = Transcript::create(&path).unwrap();
        let day = sc.day(1);
        agent.propose_schedule(&sc.forecast(&day), 0, Phase::Train, None, (1, 0));
        agent.transcript.flush();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["outcome"], "ok");
        assert_eq!(v["messages"][0]["role"], "system");
    }
}
