use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use voltctl::grid::{load_case, validate_network, Network};
use voltctl::harness::run::SeedContext;
use voltctl::harness::{evaluate_methods, report, run_method, ExperimentConfig, Method, ResultTable};
use voltctl::powerflow::{assemble_injections, root_voltage_from_tap, solve_powerflow};
use voltctl::scenario::{Scenario, STEPS_PER_HOUR};

#[derive(Parser)]
#[command(name = "voltctl", version, about = "Two-stage volt/var control experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Network case utilities.
    Case {
        #[command(subcommand)]
        cmd: CaseCmd,
    },
    /// Solve one power flow snapshot and print bus voltages.
    Pf {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 0)]
        day: usize,
        #[arg(long, default_value_t = 12)]
        hour: usize,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        tap: i32,
    },
    /// Scenario utilities.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Pretrain the intra-day policy under random schedules.
    Pretrain {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Evolve the knowledge base over the improvement budget.
    LlmImprove {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Reflexion rounds per day (defaults to the config value).
        #[arg(long)]
        n_llm: Option<usize>,
    },
    /// Finetune (and evaluate) one method, reusing earlier stage artifacts.
    Finetune {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "proposed")]
        method: Method,
    },
    /// Run methods over seeds and print the result table.
    Eval {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Load artifacts already on disk.
        #[arg(long)]
        reuse: bool,
    },
    /// Smooth training curves of a run directory into report CSVs.
    Report {
        dir: PathBuf,
        #[arg(long, default_value_t = 25)]
        window: usize,
    },
}

#[derive(Subcommand)]
enum CaseCmd {
    /// Check a case file (or a built-in feeder) and list violations.
    Validate {
        path: Option<PathBuf>,
        #[arg(long, default_value = "ieee33")]
        builtin: String,
    },
    /// Print a built-in case as JSON.
    Dump {
        #[arg(default_value = "ieee33")]
        name: String,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Write day profiles and their forecasts as JSON lines.
    Gen {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 365)]
        days: usize,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment config (JSON); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Case file overriding the config.
    #[arg(long)]
    case: Option<PathBuf>,
    /// Output directory overriding the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ExpArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_json(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(c) = &self.case {
            cfg.case = Some(c.clone());
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn builtin(name: &str) -> Result<Network> {
    match name {
        "ieee33" => Ok(Network::ieee33()),
        "toy5" => Ok(Network::toy5()),
        other => bail!("unknown built-in case {other:?} (ieee33, toy5)"),
    }
}

fn with_seed<T>(
    exp: &ExpArgs,
    seed: u64,
    reuse: bool,
    f: impl FnOnce(&mut SeedContext) -> voltctl::Result<T>,
) -> Result<T> {
    let mut cfg = exp.load()?;
    cfg.reuse_artifacts = reuse;
    cfg.validate()?;
    let net = Arc::new(cfg.network()?);
    let scenario = Scenario::new(&net, cfg.scenario_config(&net))?;
    let mut ctx = SeedContext::new(&cfg, net.clone(), &scenario, seed)?;
    Ok(f(&mut ctx)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Case { cmd: CaseCmd::Validate { path, builtin: name } } => {
            let net = match path {
                Some(p) => load_case(&p)?,
                None => builtin(&name)?,
            };
            let v = validate_network(&net);
            if v.is_empty() {
                println!("ok: {} buses, {} PV, {} SC", net.bus_count(), net.pvs.len(), net.scs.len());
            } else {
                for x in &v {
                    println!("{x}");
                }
                bail!("{} violation(s)", v.len());
            }
        }
        Cmd::Case { cmd: CaseCmd::Dump { name } } => println!("{}", builtin(&name)?.to_json()),
        Cmd::Pf { exp, day, hour, tap } => {
            let cfg = exp.load()?;
            let net = cfg.network()?;
            let scenario = Scenario::new(&net, cfg.scenario_config(&net))?;
            if hour >= 24 {
                bail!("hour must be below 24");
            }
            let d = scenario.day(day);
            let step = hour * STEPS_PER_HOUR;
            let col = |m: &Vec<Vec<f64>>| m.iter().map(|r| r[step]).collect::<Vec<f64>>();
            let inj = assemble_injections(
                &net,
                &col(&d.p_load),
                &col(&d.q_load),
                &col(&d.pv_p),
                &vec![0.0; net.pvs.len()],
                &vec![false; net.scs.len()],
            )?;
            let sol = solve_powerflow(&net, &inj, root_voltage_from_tap(tap, &net.oltc, net.v_ref)?)?;
            println!("bus,v_pu,angle_rad");
            for (i, (v, a)) in sol.v_mag.iter().zip(&sol.v_ang).enumerate() {
                println!("{i},{v:.6},{a:.6}");
            }
            eprintln!("{} iterations, mismatch {:.2e}", sol.iterations, sol.max_mismatch);
        }
        Cmd::Scenario { cmd: ScenarioCmd::Gen { exp, out, days } } => {
            let cfg = exp.load()?;
            let net = cfg.network()?;
            let scenario = Scenario::new(&net, cfg.scenario_config(&net))?;
            std::fs::create_dir_all(&out)?;
            let mut profiles = String::new();
            let mut forecasts = String::new();
            for i in 0..days.min(voltctl::scenario::DAYS_PER_YEAR) {
                let d = scenario.day(i);
                forecasts.push_str(&serde_json::to_string(&scenario.forecast(&d))?);
                forecasts.push('\n');
                profiles.push_str(&serde_json::to_string(&d)?);
                profiles.push('\n');
            }
            std::fs::write(out.join("days.jsonl"), profiles)?;
            std::fs::write(out.join("forecasts.jsonl"), forecasts)?;
            std::fs::write(out.join("scenario.json"), serde_json::to_string_pretty(&scenario.cfg)?)?;
        }
        Cmd::Pretrain { exp, seed } => {
            with_seed(&exp, seed, false, |ctx| ctx.pretrained().map(|_| ()))?;
        }
        Cmd::LlmImprove { exp, seed, n_llm } => {
            let kb = with_seed(&exp, seed, false, |ctx| {
                let n = n_llm.unwrap_or(ctx.cfg.n_llm);
                ctx.knowledge_base(n)
            })?;
            println!("knowledge base: {} entries", kb.len());
        }
        Cmd::Finetune { exp, seed, method } => {
            let cfg = exp.load()?;
            let stale = cfg.seed_dir(seed).join(method.name()).join("finetune.json");
            if stale.exists() {
                std::fs::remove_file(&stale)?;
            }
            let run = with_seed(&exp, seed, true, |ctx| run_method(ctx, method))?;
            println!("{}", ResultTable::from_runs(&[run]));
        }
        Cmd::Eval { exp, method, seeds, reuse } => {
            let mut cfg = exp.load()?;
            if !method.is_empty() {
                cfg.methods = method;
            }
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            cfg.reuse_artifacts = reuse;
            let (table, _) = evaluate_methods(&cfg)?;
            println!("{table}");
        }
        Cmd::Report { dir, window } => {
            for p in report(&dir, window)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
