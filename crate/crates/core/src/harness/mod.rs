//! Experiment orchestration: per-seed pipelines for every method, held-out
//! evaluation, result tables and smoothed training curves.

pub mod report;
pub mod run;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{load_case, Network};
use crate::llm::agent::AdvisorConfig;
use crate::llm::kb::DEFAULT_THRESHOLD;
use crate::pure_rl::DEFAULT_PENALTY;
use crate::rl::PpoConfig;
use crate::scenario::{ScenarioConfig, DAYS_PER_YEAR};

pub use report::{moving_average, report};
pub use run::{evaluate_methods, run_method, split_days, EpisodeSummary, MethodRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Proposed,
    Original,
    NoLlm,
    NoRl,
    PureRl,
    NoPt,
    NoReflexion,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Proposed,
        Method::Original,
        Method::NoLlm,
        Method::NoRl,
        Method::PureRl,
        Method::NoPt,
        Method::NoReflexion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Original => "original",
            Method::NoLlm => "no-llm",
            Method::NoRl => "no-rl",
            Method::PureRl => "pure-rl",
            Method::NoPt => "no-pt",
            Method::NoReflexion => "no-reflexion",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// LLM improvement episodes (days).
    pub llm: usize,
    pub pretrain: usize,
    pub finetune: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            llm: 200,
            pretrain: 1500,
            finetune: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Case file; the embedded 33-bus feeder when absent.
    pub case: Option<PathBuf>,
    pub scenario_seed: u64,
    /// Multiplier on every PV rating (calibration knob).
    pub pv_scale: f64,
    /// Overrides the scenario's load scale when set.
    pub load_scale: Option<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub budgets: Budgets,
    pub test_days: usize,
    /// Reflexion rounds per improvement day.
    pub n_llm: usize,
    pub kb_threshold: f64,
    pub advisor: AdvisorConfig,
    pub ppo: PpoConfig,
    pub pure_rl_penalty: f64,
    pub output_dir: PathBuf,
    /// Load stage artifacts already on disk instead of recomputing them.
    pub reuse_artifacts: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            case: None,
            scenario_seed: 2024,
            pv_scale: 1.0,
            load_scale: None,
            methods: vec![Method::Proposed],
            seeds: vec![1, 2, 3],
            budgets: Budgets::default(),
            test_days: 25,
            n_llm: 3,
            kb_threshold: DEFAULT_THRESHOLD,
            advisor: AdvisorConfig::default(),
            ppo: PpoConfig::default(),
            pure_rl_penalty: DEFAULT_PENALTY,
            output_dir: PathBuf::from("runs"),
            reuse_artifacts: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::parse("experiment config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if self.test_days == 0 || self.test_days >= DAYS_PER_YEAR {
            return Err(Error::InvalidConfig(format!(
                "test_days must be in 1..{DAYS_PER_YEAR}"
            )));
        }
        if !(self.pv_scale >= 0.0) || self.load_scale.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::InvalidConfig("scales must be non-negative".into()));
        }
        if !(self.pure_rl_penalty >= 0.0) {
            return Err(Error::InvalidConfig("pure_rl_penalty must be non-negative".into()));
        }
        self.advisor.validate()?;
        self.ppo.validate()
    }

    pub fn network(&self) -> Result<Network> {
        let base = match &self.case {
            Some(p) => load_case(p)?,
            None => Network::ieee33(),
        };
        Ok(base.with_pv_scale(self.pv_scale))
    }

    pub fn scenario_config(&self, net: &Network) -> ScenarioConfig {
        let mut sc = ScenarioConfig::for_network(net, self.scenario_seed);
        if let Some(s) = self.load_scale {
            sc.load_scale = s;
        }
        sc
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed_{seed}"))
    }
}

/// Mean and standard deviation per method over all test episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub episodes: usize,
    pub deviation_mean: f64,
    pub deviation_std: f64,
    pub violation_mean: f64,
    pub violation_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ResultTable {
    pub fn from_runs(runs: &[MethodRun]) -> ResultTable {
        let mut methods: Vec<Method> = runs.iter().map(|r| r.method).collect();
        methods.dedup();
        let rows = methods
            .into_iter()
            .map(|m| {
                let eps: Vec<&EpisodeSummary> = runs
                    .iter()
                    .filter(|r| r.method == m)
                    .flat_map(|r| &r.episodes)
                    .collect();
                let dev: Vec<f64> = eps.iter().map(|e| e.deviation).collect();
                let vio: Vec<f64> = eps.iter().map(|e| e.violation_rate).collect();
                let (dm, ds) = mean_std(&dev);
                let (vm, vs) = mean_std(&vio);
                ResultRow {
                    method: m,
                    episodes: eps.len(),
                    deviation_mean: dm,
                    deviation_std: ds,
                    violation_mean: vm,
                    violation_std: vs,
                }
            })
            .collect();
        ResultTable { rows }
    }

    pub fn row(&self, m: Method) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == m)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "episodes", "deviation_mean_pu", "deviation_std_pu", "violation_mean_pct", "violation_std_pct"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.method.to_string(),
                r.episodes.to_string(),
                format!("{:e}", r.deviation_mean),
                format!("{:e}", r.deviation_std),
                r.violation_mean.to_string(),
                r.violation_std.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>5} {:>22} {:>18}", "method", "eps", "deviation (p.u.)", "violation (%)")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<14} {:>5} {:>10.3e} ± {:<9.2e} {:>7.2} ± {:<7.2}",
                r.method.name(),
                r.episodes,
                r.deviation_mean,
                r.deviation_std,
                r.violation_mean,
                r.violation_std
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let j = serde_json::to_string(&m).unwrap();
            assert_eq!(j, format!("\"{}\"", m.name()));
        }
        assert!("llm".parse::<Method>().is_err());
    }

    #[test]
    fn config_defaults_and_json() {
        let c = ExperimentConfig::default();
        assert_eq!((c.budgets.llm, c.budgets.pretrain, c.budgets.finetune), (200, 1500, 150));
        assert_eq!(c.seeds.len(), 3);
        assert_eq!(c.test_days, 25);
        let parsed = ExperimentConfig::from_json(r#"{"seeds":[4],"budgets":{"pretrain":10}}"#).unwrap();
        assert_eq!(parsed.seeds, vec![4]);
        assert_eq!(parsed.budgets.pretrain, 10);
        assert_eq!(parsed.budgets.llm, 200);
        assert!(ExperimentConfig::from_json(r#"{"seeds":[]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seeds":[1,1]}"#).is_err());
    }

    #[test]
    fn identical_episodes_have_zero_std() {
        assert_eq!(mean_std(&[0.02; 5]), (0.02, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
