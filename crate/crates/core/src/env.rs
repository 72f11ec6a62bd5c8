//! Intra-day environment: executes a validated day-ahead schedule at
//! 15-minute resolution while an inverter policy chooses PV reactive power.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::powerflow::{assemble_injections, root_voltage_from_tap, solve_powerflow, PfSolution};
use crate::scenario::{DayProfile, HOURS, STEPS_PER_DAY, STEPS_PER_HOUR};
use crate::schedule::{validate_schedule, DaySchedule};

/// Slack allowed on action bounds before an action is rejected.
const ACTION_SLACK: f64 = 1e-9;

/// Flat observation vector. Layout (see [`ObservationLayout`]): active and
/// reactive loads and voltages per bus, PV active and reactive output, OLTC
/// one-hot, SC bits, normalized step of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationLayout {
    pub buses: usize,
    pub pvs: usize,
    pub tap_positions: usize,
    pub scs: usize,
}

impl ObservationLayout {
    pub fn of(net: &Network) -> Self {
        ObservationLayout {
            buses: net.bus_count(),
            pvs: net.pvs.len(),
            tap_positions: net.oltc.positions,
            scs: net.scs.len(),
        }
    }

    pub fn len(&self) -> usize {
        3 * self.buses + 2 * self.pvs + self.tap_positions + self.scs + 1
    }

    pub fn voltage_range(&self) -> std::ops::Range<usize> {
        2 * self.buses..3 * self.buses
    }

    pub fn tap_range(&self) -> std::ops::Range<usize> {
        let start = 3 * self.buses + 2 * self.pvs;
        start..start + self.tap_positions
    }

    pub fn sc_range(&self) -> std::ops::Range<usize> {
        let start = self.tap_range().end;
        start..start + self.scs
    }

    pub fn pv_p_range(&self) -> std::ops::Range<usize> {
        3 * self.buses..3 * self.buses + self.pvs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub day_index: usize,
    pub schedule: DaySchedule,
    pub v_ref: f64,
    pub rewards: Vec<f64>,
    pub total_reward: f64,
    /// `[step][bus]`, p.u.
    pub voltages: Vec<Vec<f64>>,
    /// `[region][hour]` mean voltage.
    pub hourly_region: Vec<Vec<f64>>,
    pub hourly_system: Vec<f64>,
    pub deviation: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean |V − V_ref| over all (bus, step), p.u.
    pub deviation: f64,
    /// Percentage of (bus, step) samples outside [v_min, v_max].
    pub violation_rate: f64,
}

/// Reward of one solved step: negative mean absolute deviation from V_ref.
pub fn step_reward(v_mag: &[f64], v_ref: f64) -> f64 {
    -v_mag.iter().map(|v| (v - v_ref).abs()).sum::<f64>() / v_mag.len() as f64
}

pub fn voltage_metrics(voltages: &[Vec<f64>], v_ref: f64, v_min: f64, v_max: f64) -> Metrics {
    let mut dev = 0.0;
    let mut bad = 0usize;
    let mut count = 0usize;
    for row in voltages {
        for &v in row {
            dev += (v - v_ref).abs();
            if v < v_min || v > v_max {
                bad += 1;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Metrics {
            deviation: 0.0,
            violation_rate: 0.0,
        };
    }
    Metrics {
        deviation: dev / count as f64,
        violation_rate: 100.0 * bad as f64 / count as f64,
    }
}

pub fn metrics(log: &EpisodeLog, v_min: f64, v_max: f64) -> Metrics {
    voltage_metrics(&log.voltages, log.v_ref, v_min, v_max)
}

#[derive(Debug)]
struct Episode {
    day: DayProfile,
    schedule: DaySchedule,
    step: usize,
    last: PfSolution,
    last_pv_q: Vec<f64>,
    rewards: Vec<f64>,
    voltages: Vec<Vec<f64>>,
}

/// One stateful episode runner over a shared network.
#[derive(Debug)]
pub struct Env {
    net: Arc<Network>,
    layout: ObservationLayout,
    /// Tap carried in from the previous day. Episodic training keeps it at
    /// 0; multi-day runs set it to the previous schedule's final tap.
    pub carried_tap: i32,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(net: Arc<Network>) -> Env {
        let layout = ObservationLayout::of(&net);
        Env {
            net,
            layout,
            carried_tap: 0,
            episode: None,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn layout(&self) -> ObservationLayout {
        self.layout
    }

    pub fn observation_len(&self) -> usize {
        self.layout.len()
    }

    pub fn action_len(&self) -> usize {
        self.net.pvs.len()
    }

    /// Per-PV action bound λ.
    pub fn action_bounds(&self) -> Vec<f64> {
        self.net.pvs.iter().map(|p| p.lambda).collect()
    }

    pub fn step_index(&self) -> Option<usize> {
        self.episode.as_ref().map(|e| e.step)
    }

    fn solve(&self, day: &DayProfile, schedule: &DaySchedule, step: usize, pv_q: &[f64]) -> Result<PfSolution> {
        let net = &*self.net;
        let hour = step / STEPS_PER_HOUR;
        let loads_p: Vec<f64> = day.p_load.iter().map(|b| b[step]).collect();
        let loads_q: Vec<f64> = day.q_load.iter().map(|b| b[step]).collect();
        let pv_p: Vec<f64> = day.pv_p.iter().map(|p| p[step]).collect();
        let sc_on: Vec<bool> = (0..net.scs.len()).map(|k| schedule.sc_on_at(k, hour)).collect();
        let inj = assemble_injections(net, &loads_p, &loads_q, &pv_p, pv_q, &sc_on)?;
        let v_root = root_voltage_from_tap(schedule.tap_at(hour), &net.oltc, net.v_ref)?;
        solve_powerflow(net, &inj, v_root)
    }

    /// Validates the schedule, solves step 0 with zero inverter reactive
    /// power and returns the initial observation.
    pub fn reset(&mut self, day: DayProfile, schedule: DaySchedule) -> Result<Observation> {
        let violations = validate_schedule(&schedule, &self.net.oltc, &self.net.scs, self.carried_tap);
        if !violations.is_empty() {
            let joined: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidSchedule(joined.join("; ")));
        }
        let n_bus = self.net.bus_count();
        let n_pv = self.net.pvs.len();
        if day.p_load.len() != n_bus || day.q_load.len() != n_bus {
            return Err(Error::Dimension {
                what: "day profile buses",
                expected: n_bus,
                got: day.p_load.len(),
            });
        }
        if day.pv_p.len() != n_pv {
            return Err(Error::Dimension {
                what: "day profile PVs",
                expected: n_pv,
                got: day.pv_p.len(),
            });
        }
        let zero_q = vec![0.0; n_pv];
        let last = self.solve(&day, &schedule, 0, &zero_q)?;
        self.episode = Some(Episode {
            day,
            schedule,
            step: 0,
            last,
            last_pv_q: zero_q,
            rewards: Vec::with_capacity(STEPS_PER_DAY),
            voltages: Vec::with_capacity(STEPS_PER_DAY),
        });
        Ok(self.observe())
    }

    fn observe(&self) -> Observation {
        let ep = self.episode.as_ref().expect("observe requires an episode");
        let net = &*self.net;
        let t = ep.step.min(STEPS_PER_DAY - 1);
        let hour = t / STEPS_PER_HOUR;
        let mut obs = Vec::with_capacity(self.layout.len());
        obs.extend(ep.day.p_load.iter().map(|b| b[t]));
        obs.extend(ep.day.q_load.iter().map(|b| b[t]));
        obs.extend_from_slice(&ep.last.v_mag);
        obs.extend(ep.day.pv_p.iter().map(|p| p[t]));
        obs.extend_from_slice(&ep.last_pv_q);
        let mut onehot = vec![0.0; net.oltc.positions];
        onehot[net.oltc.index_of(ep.schedule.tap_at(hour))] = 1.0;
        obs.extend(onehot);
        obs.extend((0..net.scs.len()).map(|k| if ep.schedule.sc_on_at(k, hour) { 1.0 } else { 0.0 }));
        obs.push(ep.step as f64 / STEPS_PER_DAY as f64);
        Observation(obs)
    }

    /// Reactive output (MVAr) for normalized actions at the current step.
    pub fn reactive_output(&self, action: &[f64]) -> Result<Vec<f64>> {
        let ep = self.episode.as_ref().ok_or(Error::NoEpisode)?;
        let t = ep.step.min(STEPS_PER_DAY - 1);
        self.map_action(action, |k| ep.day.pv_p[k][t])
    }

    fn map_action(&self, action: &[f64], p_of: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
        let net = &*self.net;
        if action.len() != net.pvs.len() {
            return Err(Error::Dimension {
                what: "action",
                expected: net.pvs.len(),
                got: action.len(),
            });
        }
        action
            .iter()
            .zip(&net.pvs)
            .enumerate()
            .map(|(k, (&a, pv))| {
                if !a.is_finite() || a.abs() > pv.lambda + ACTION_SLACK {
                    return Err(Error::ActionOutOfBounds {
                        index: k,
                        value: a,
                        bound: pv.lambda,
                    });
                }
                let a = a.clamp(-pv.lambda, pv.lambda);
                let p = p_of(k);
                let headroom = (pv.s_mva * pv.s_mva - p * p).max(0.0).sqrt();
                Ok(a * headroom)
            })
            .collect()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let pv_q = self.reactive_output(action)?;
        let ep = self.episode.as_ref().ok_or(Error::NoEpisode)?;
        if ep.step >= STEPS_PER_DAY {
            return Err(Error::NoEpisode);
        }
        let sol = match self.solve(&ep.day, &ep.schedule, ep.step, &pv_q) {
            Ok(s) => s,
            Err(e) => {
                self.episode = None;
                return Err(e);
            }
        };
        let reward = step_reward(&sol.v_mag, self.net.v_ref);
        let ep = self.episode.as_mut().expect("episode checked above");
        ep.voltages.push(sol.v_mag.clone());
        ep.rewards.push(reward);
        ep.last = sol;
        ep.last_pv_q = pv_q;
        ep.step += 1;
        let done = ep.step == STEPS_PER_DAY;
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done,
        })
    }

    /// Summarizes the finished (or current) episode.
    pub fn episode_log(&self) -> Result<EpisodeLog> {
        let ep = self.episode.as_ref().ok_or(Error::NoEpisode)?;
        Ok(build_log(&self.net, ep.day.day_index, &ep.schedule, &ep.rewards, &ep.voltages))
    }
}

fn build_log(net: &Network, day_index: usize, schedule: &DaySchedule, rewards: &[f64], voltages: &[Vec<f64>]) -> EpisodeLog {
    let regions = net.region_buses();
    let mut hourly_region = vec![vec![0.0; HOURS]; net.region_count];
    let mut hourly_system = vec![0.0; HOURS];
    for h in 0..HOURS {
        let rows = &voltages[(h * STEPS_PER_HOUR).min(voltages.len())..((h + 1) * STEPS_PER_HOUR).min(voltages.len())];
        if rows.is_empty() {
            continue;
        }
        for (r, buses) in regions.iter().enumerate() {
            let s: f64 = rows.iter().map(|row| buses.iter().map(|&b| row[b]).sum::<f64>()).sum();
            hourly_region[r][h] = s / (rows.len() * buses.len()) as f64;
        }
        let s: f64 = rows.iter().map(|row| row.iter().sum::<f64>()).sum();
        hourly_system[h] = s / (rows.len() * net.bus_count()) as f64;
    }
    let m = voltage_metrics(voltages, net.v_ref, net.v_min, net.v_max);
    EpisodeLog {
        day_index,
        schedule: schedule.clone(),
        v_ref: net.v_ref,
        rewards: rewards.to_vec(),
        total_reward: rewards.iter().sum(),
        voltages: voltages.to_vec(),
        hourly_region,
        hourly_system,
        deviation: m.deviation,
        violation_rate: m.violation_rate,
    }
}

/// Runs a full day under `policy` and returns its log.
pub fn run_day<P>(env: &mut Env, mut policy: P, day: DayProfile, schedule: DaySchedule) -> Result<EpisodeLog>
where
    P: FnMut(&Observation) -> Vec<f64>,
{
    let mut obs = env.reset(day, schedule)?;
    loop {
        let action = policy(&obs);
        let res = env.step(&action)?;
        obs = res.observation;
        if res.done {
            break;
        }
    }
    env.episode_log()
}

/// The zero-reactive inverter policy.
pub fn zero_policy(n: usize) -> impl FnMut(&Observation) -> Vec<f64> {
    move |_| vec![0.0; n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Scenario, ScenarioConfig};

    fn setup() -> (Env, Scenario) {
        let net = Network::ieee33();
        let sc = Scenario::new(&net, ScenarioConfig::for_network(&net, 1)).unwrap();
        (Env::new(Arc::new(net)), sc)
    }

    #[test]
    fn neutral_reset_encoding() {
        let (mut env, sc) = setup();
        let obs = env.reset(sc.day(10), DaySchedule::neutral(3)).unwrap();
        let lay = env.layout();
        assert_eq!(obs.0.len(), lay.len());
        let onehot = &obs.0[lay.tap_range()];
        assert_eq!(onehot.iter().sum::<f64>(), 1.0);
        assert_eq!(onehot[5], 1.0);
        assert!(obs.0[lay.sc_range()].iter().all(|&x| x == 0.0));
        assert!(obs.0[lay.pv_p_range()].iter().all(|&x| x == 0.0));
        let again = env.reset(sc.day(10), DaySchedule::neutral(3)).unwrap();
        assert_eq!(obs, again);
    }

    #[test]
    fn reactive_mapping_uses_headroom() {
        let mut net = Network::ieee33();
        net.pvs[0].s_mva = 1.0;
        net.pvs[0].lambda = 0.3;
        let sc = Scenario::new(&net, ScenarioConfig::for_network(&net, 1)).unwrap();
        let mut day = sc.day(0);
        day.pv_p[0][0] = 0.8;
        let mut env = Env::new(Arc::new(net));
        env.reset(day, DaySchedule::neutral(3)).unwrap();
        let q = env.reactive_output(&[0.3, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((q[0] - 0.18).abs() < 1e-12);
        assert!(env.reactive_output(&[0.31, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(env.reactive_output(&[0.3 + 5e-10, 0.0, 0.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(env.reactive_output(&[0.0; 5]).is_err());
    }

    #[test]
    fn reward_hand_values() {
        assert_eq!(step_reward(&[1.0; 5], 1.0), 0.0);
        let r = step_reward(&[1.00, 1.02, 0.98, 1.05], 1.0);
        assert!((r + 0.0225).abs() < 1e-12);
    }

    #[test]
    fn metric_counting() {
        let ok = vec![vec![0.96, 1.0, 1.04]; 96];
        assert_eq!(voltage_metrics(&ok, 1.0, 0.95, 1.05).violation_rate, 0.0);
        let mut one_bad = vec![vec![1.0; 33]; 96];
        for row in &mut one_bad {
            row[17] = 0.93;
        }
        let m = voltage_metrics(&one_bad, 1.0, 0.95, 1.05);
        assert!((m.violation_rate - 100.0 / 33.0).abs() < 1e-12);
        let flat = vec![vec![1.01; 33]; 96];
        assert!((voltage_metrics(&flat, 1.0, 0.95, 1.05).deviation - 0.01).abs() < 1e-12);
    }

    #[test]
    fn run_day_totals_and_determinism() {
        let (mut env, sc) = setup();
        let log = run_day(&mut env, zero_policy(6), sc.day(3), DaySchedule::neutral(3)).unwrap();
        assert_eq!(log.rewards.len(), 96);
        assert_eq!(log.total_reward, log.rewards.iter().sum::<f64>());
        assert!(log.rewards.iter().all(|&r| r <= 0.0));
        let again = run_day(&mut env, zero_policy(6), sc.day(3), DaySchedule::neutral(3)).unwrap();
        assert_eq!(log, again);
        let m = metrics(&log, 0.95, 1.05);
        assert_eq!(m.deviation, log.deviation);
    }

    #[test]
    fn invalid_schedule_refused() {
        let (mut env, sc) = setup();
        let mut s = DaySchedule::neutral(3);
        s.sc_intervals[0] = Some((2, 4));
        assert!(matches!(env.reset(sc.day(0), s), Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn hourly_means_by_region() {
        let (mut env, sc) = setup();
        let log = run_day(&mut env, zero_policy(6), sc.day(3), DaySchedule::neutral(3)).unwrap();
        let buses = env.network().region_buses();
        let h = 7;
        let mut s = 0.0;
        for t in h * 4..h * 4 + 4 {
            s += buses[1].iter().map(|&b| log.voltages[t][b]).sum::<f64>();
        }
        assert!((log.hourly_region[1][h] - s / (4.0 * buses[1].len() as f64)).abs() < 1e-12);
    }

    #[test]
    fn raising_tap_raises_every_voltage() {
        let (mut env, sc) = setup();
        let day = sc.day(50);
        let low = run_day(&mut env, zero_policy(6), day.clone(), DaySchedule::neutral(3)).unwrap();
        let mut s = DaySchedule::neutral(3);
        s.oltc_taps = vec![1; 24];
        env.carried_tap = 1;
        let high = run_day(&mut env, zero_policy(6), day, s).unwrap();
        for (a, b) in low.voltages.iter().zip(&high.voltages) {
            assert!(a.iter().zip(b).all(|(x, y)| y > x));
        }
    }
}
