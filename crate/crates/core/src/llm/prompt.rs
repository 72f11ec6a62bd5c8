//! Prompt assembly. A bundle carries the chat messages sent to a remote
//! model and the structured context they were rendered from, which the
//! scripted stub reads directly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::kb::KnowledgeEntry;
use super::parse::format_answer;
use crate::grid::{Network, OltcSpec, ScSpec};
use crate::scenario::{RegionForecast, HOURS};
use crate::schedule::DaySchedule;

pub const SECTION_TASK: &str = "## 1. Environment and task";
pub const SECTION_FORMAT: &str = "## 2. Output format";
pub const SECTION_REASONING: &str = "## 3. Reasoning steps";
pub const SECTION_REFERENCE: &str = "## 4. Reference day";
pub const SECTION_REFINE: &str = "## 5. Refinement";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

/// Device limits and voltage band the agent must respect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpecs {
    pub network: String,
    pub buses: usize,
    pub regions: usize,
    pub v_ref: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub oltc: OltcSpec,
    /// `(bus, MVAr, window start, window end)` per capacitor.
    pub scs: Vec<(usize, f64, usize, usize)>,
    pub sc_regions: Vec<usize>,
    pub pv_count: usize,
}

impl DeviceSpecs {
    pub fn of(net: &Network) -> DeviceSpecs {
        DeviceSpecs {
            network: net.name.clone(),
            buses: net.bus_count(),
            regions: net.region_count,
            v_ref: net.v_ref,
            v_min: net.v_min,
            v_max: net.v_max,
            oltc: net.oltc,
            scs: net.scs.iter().map(|s| (s.bus, s.q_mvar, s.window.0, s.window.1)).collect(),
            sc_regions: net.sc_regions(),
            pv_count: net.pvs.len(),
        }
    }

    pub fn sc_specs(&self) -> Vec<ScSpec> {
        self.scs
            .iter()
            .map(|&(bus, q_mvar, a, b)| ScSpec {
                bus,
                q_mvar,
                window: (a, b),
            })
            .collect()
    }
}

/// Outcome of a previously executed schedule, fed back for refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub schedule: DaySchedule,
    pub total_reward: f64,
    pub hourly_system: Vec<f64>,
    pub hourly_region: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub specs: DeviceSpecs,
    pub forecast: RegionForecast,
    pub carried_tap: i32,
    pub few_shot: Option<KnowledgeEntry>,
    pub similarity: Option<f64>,
    pub reflection: Option<Feedback>,
    /// Why the previous attempt in this exchange was rejected.
    pub retry_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub messages: Vec<Message>,
    pub sampling: Sampling,
    pub context: PromptContext,
}

fn series(xs: &[f64], digits: usize) -> String {
    xs.iter().map(|x| format!("{x:.digits$}")).collect::<Vec<_>>().join(", ")
}

fn task_section(s: &DeviceSpecs, carried_tap: i32) -> String {
    let mut t = String::new();
    let half = s.oltc.half_range();
    writeln!(t, "{SECTION_TASK}").unwrap();
    writeln!(
        t,
        "You schedule voltage control devices for the {} distribution feeder ({} buses, {} regions, {} PV inverters).",
        s.network, s.buses, s.regions, s.pv_count
    )
    .unwrap();
    writeln!(
        t,
        "Goal: keep every bus voltage close to {:.3} p.u. and inside [{:.2}, {:.2}] p.u. over the next day.",
        s.v_ref, s.v_min, s.v_max
    )
    .unwrap();
    writeln!(
        t,
        "The substation OLTC has {} positions, taps -{half}..+{half}; each step moves the root voltage by {:.4} p.u. (positive taps raise it).",
        s.oltc.positions, s.oltc.step_pu
    )
    .unwrap();
    for (k, &(bus, q, _, _)) in s.scs.iter().enumerate() {
        writeln!(
            t,
            "SC{}: {q:.3} MVAr shunt capacitor at bus {bus} in region {}.",
            k + 1,
            s.sc_regions[k] + 1
        )
        .unwrap();
    }
    writeln!(t, "The tap in effect at the start of the day is {carried_tap}.").unwrap();
    writeln!(t, "Hard constraints (grid codes):").unwrap();
    writeln!(
        t,
        "- The OLTC may change position at most {} times during the day, counting a change at hour 0 against the starting tap.",
        s.oltc.daily_change_limit
    )
    .unwrap();
    for (k, &(_, _, a, b)) in s.scs.iter().enumerate() {
        writeln!(
            t,
            "- SC{} may be switched on at most once, for one interval lying within hours [{a}, {b}).",
            k + 1
        )
        .unwrap();
    }
    writeln!(
        t,
        "PV inverters are dispatched separately every 15 minutes; you decide only the OLTC and capacitor schedule."
    )
    .unwrap();
    t
}

fn format_section(s: &DeviceSpecs) -> String {
    let mut t = String::new();
    writeln!(t, "{SECTION_FORMAT}").unwrap();
    writeln!(t, "End your reply with one fenced block tagged `answer`:").unwrap();
    writeln!(t, "```answer").unwrap();
    writeln!(t, "OLTC: <hour>=<tap>, <hour>=<tap>, ...").unwrap();
    for k in 0..s.scs.len() {
        writeln!(t, "SC{}: ON <start>-<end>  or  SC{}: OFF", k + 1, k + 1).unwrap();
    }
    writeln!(t, "```").unwrap();
    writeln!(
        t,
        "OLTC entries are change events in hours 0-23; a tap holds until the next event and hours before the first event keep the starting tap."
    )
    .unwrap();
    writeln!(t, "SC intervals are half-open [start, end) in hours. List every capacitor exactly once.").unwrap();
    t
}

fn reasoning_section() -> String {
    let mut t = String::new();
    writeln!(t, "{SECTION_REASONING}").unwrap();
    writeln!(t, "1. Describe the trend and magnitude of the system and regional net load across the day.").unwrap();
    writeln!(t, "2. Decide for each region whether its capacitor should be on, and when.").unwrap();
    writeln!(
        t,
        "3. Decide the OLTC trajectory: lower taps when PV surplus lifts voltages, higher taps under heavy load."
    )
    .unwrap();
    writeln!(t, "4. Check both grid codes, then emit the answer block.").unwrap();
    t
}

fn forecast_lines(t: &mut String, f: &RegionForecast) {
    writeln!(t, "System net load (MW, hours 0-23): {}", series(&f.system, 3)).unwrap();
    for (r, s) in f.region.iter().enumerate() {
        writeln!(t, "Region {} net load (MW): {}", r + 1, series(s, 3)).unwrap();
    }
}

fn voltage_lines(t: &mut String, system: &[f64], region: &[Vec<f64>]) {
    writeln!(t, "Hourly mean voltage, system (p.u.): {}", series(system, 4)).unwrap();
    for (r, s) in region.iter().enumerate() {
        writeln!(t, "Hourly mean voltage, region {} (p.u.): {}", r + 1, series(s, 4)).unwrap();
    }
}

fn reference_section(e: &KnowledgeEntry, similarity: Option<f64>, carried_tap: i32) -> String {
    let mut t = String::new();
    writeln!(t, "{SECTION_REFERENCE}").unwrap();
    match similarity {
        Some(s) => writeln!(t, "The most similar stored day (similarity {s:.4}) is shown as an example.").unwrap(),
        None => writeln!(t, "A stored day is shown as an example.").unwrap(),
    }
    forecast_lines(
        &mut t,
        &RegionForecast {
            region: e.region_forecast.clone(),
            system: e.system_forecast.clone(),
        },
    );
    writeln!(t, "Its schedule:").unwrap();
    writeln!(t, "{}", format_answer(&e.schedule, carried_tap)).unwrap();
    writeln!(t, "Total reward of that day: {:.6}", e.reward).unwrap();
    voltage_lines(&mut t, &e.hourly_system, &e.hourly_region);
    t
}

fn refine_section(f: &Feedback, carried_tap: i32, v_ref: f64) -> String {
    let mut t = String::new();
    writeln!(t, "{SECTION_REFINE}").unwrap();
    writeln!(t, "Your previous schedule for this day was:").unwrap();
    writeln!(t, "{}", format_answer(&f.schedule, carried_tap)).unwrap();
    writeln!(t, "Total reward of the day: {:.6}", f.total_reward).unwrap();
    voltage_lines(&mut t, &f.hourly_system, &f.hourly_region);
    let off: Vec<String> = f
        .hourly_system
        .iter()
        .enumerate()
        .filter(|(_, v)| (*v - v_ref).abs() > 0.01)
        .map(|(h, v)| format!("{h} ({:+.4})", v - v_ref))
        .collect();
    if !off.is_empty() {
        writeln!(t, "Hours with system mean voltage more than 0.01 p.u. from the reference: {}", off.join(", ")).unwrap();
    }
    writeln!(
        t,
        "Reflect on which hours drove the voltage away from the reference and return an improved schedule."
    )
    .unwrap();
    t
}

/// Renders the prompt. Identical inputs give byte-identical messages.
pub fn build_prompt(context: PromptContext, sampling: Sampling) -> PromptBundle {
    assert_eq!(context.forecast.system.len(), HOURS, "forecast must cover 24 hours");
    let system = task_section(&context.specs, context.carried_tap);
    let mut user = String::new();
    user.push_str(&format_section(&context.specs));
    user.push('\n');
    user.push_str(&reasoning_section());
    if let Some(e) = &context.few_shot {
        user.push('\n');
        user.push_str(&reference_section(e, context.similarity, context.carried_tap));
    }
    user.push_str("\n## Forecast for the day to schedule\n");
    forecast_lines(&mut user, &context.forecast);
    if let Some(f) = &context.reflection {
        user.push('\n');
        user.push_str(&refine_section(f, context.carried_tap, context.specs.v_ref));
    }
    if let Some(r) = &context.retry_reason {
        writeln!(user, "\nA previous reply was rejected: {r}. Follow the output format and the grid codes exactly.").unwrap();
    }
    PromptBundle {
        messages: vec![
            Message {
                role: "system".into(),
                content: system,
            },
            Message {
                role: "user".into(),
                content: user,
            },
        ],
        sampling,
        context,
    }
}
