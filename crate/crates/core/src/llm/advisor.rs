//! Advisor backends: a remote chat-completion endpoint, the scripted stub
//! used for deterministic runs, and a garbage emitter for failure tests.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parse::format_answer;
use super::prompt::{PromptBundle, PromptContext};
use crate::error::{Error, Result};
use crate::scenario::HOURS;
use crate::schedule::DaySchedule;

pub const ENV_ENDPOINT: &str = "VOLTCTL_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "VOLTCTL_LLM_API_KEY";
pub const ENV_MODEL: &str = "VOLTCTL_LLM_MODEL";

pub trait Advisor {
    /// Returns the raw reply text for one fresh dialogue.
    fn complete(&mut self, prompt: &PromptBundle) -> Result<String>;
}

/// Constants of the scripted rule table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubConfig {
    /// System net load (MW) at which tap 0 is ideal.
    pub zero_tap_load_mw: f64,
    /// Net-load change (MW) worth one tap step.
    pub mw_per_tap: f64,
    /// Hourly mean-voltage error (p.u.) that triggers a reflexion shift.
    pub reflect_band: f64,
    /// Capacitor commitment length, hours.
    pub sc_hours: usize,
    pub seed: u64,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            zero_tap_load_mw: -0.45,
            mw_per_tap: 0.55,
            reflect_band: 0.01,
            sc_hours: 2,
            seed: 0,
        }
    }
}

/// Rule-based advisor. Its randomness is keyed on the prompt text so a reply
/// depends only on the prompt and the seed, not on call order.
#[derive(Debug, Clone)]
pub struct StubAdvisor {
    pub cfg: StubConfig,
}

impl StubAdvisor {
    pub fn new(cfg: StubConfig) -> StubAdvisor {
        StubAdvisor { cfg }
    }

    /// Real-valued tap target per hour.
    fn target(&self, ctx: &PromptContext) -> Vec<f64> {
        let c = &self.cfg;
        let load = &ctx.forecast.system;
        if let Some(f) = &ctx.reflection {
            let v_ref = ctx.specs.v_ref;
            return (0..HOURS)
                .map(|h| {
                    let err = f.hourly_system[h] - v_ref;
                    let shift = if err < -c.reflect_band {
                        1.0
                    } else if err > c.reflect_band {
                        -1.0
                    } else {
                        0.0
                    };
                    f.schedule.oltc_taps[h] as f64 + shift
                })
                .collect();
        }
        if let Some(e) = &ctx.few_shot {
            return (0..HOURS)
                .map(|h| e.schedule.oltc_taps[h] as f64 + (load[h] - e.system_forecast[h]) / c.mw_per_tap)
                .collect();
        }
        load.iter().map(|l| (l - c.zero_tap_load_mw) / c.mw_per_tap).collect()
    }

    fn sc_intervals(&self, ctx: &PromptContext) -> Vec<Option<(usize, usize)>> {
        let len = self.cfg.sc_hours.max(1);
        ctx.specs
            .scs
            .iter()
            .zip(&ctx.specs.sc_regions)
            .map(|(&(_, _, w0, w1), &r)| {
                let load = &ctx.forecast.region[r];
                let w1 = w1.min(HOURS);
                if w1 < w0 + len {
                    return None;
                }
                let mut best = (f64::NEG_INFINITY, w0);
                for h in w0..=w1 - len {
                    let s: f64 = load[h..h + len].iter().sum();
                    if s > best.0 {
                        best = (s, h);
                    }
                }
                (best.0 > 0.0).then_some((best.1, best.1 + len))
            })
            .collect()
    }

    pub fn propose(&self, prompt: &PromptBundle) -> DaySchedule {
        let ctx = &prompt.context;
        let mut target = self.target(ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ fnv1a(prompt));
        let p = (0.5 * prompt.sampling.temperature * prompt.sampling.top_p).clamp(0.0, 1.0);
        for t in target.iter_mut() {
            if rng.random_bool(p) {
                *t += if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
        let half = ctx.specs.oltc.half_range();
        let taps = fit_taps(&target, ctx.carried_tap, half, ctx.specs.oltc.daily_change_limit);
        DaySchedule {
            oltc_taps: taps,
            sc_intervals: self.sc_intervals(ctx),
        }
    }
}

impl Advisor for StubAdvisor {
    fn complete(&mut self, prompt: &PromptBundle) -> Result<String> {
        let s = self.propose(prompt);
        let load = &prompt.context.forecast.system;
        let (hmax, lmax) = argmax(load);
        let (hmin, lmin) = argmax(&load.iter().map(|x| -x).collect::<Vec<_>>());
        Ok(format!(
            "Net load peaks at {lmax:.3} MW in hour {hmax} and bottoms at {:.3} MW in hour {hmin}.\n{}\n",
            -lmin,
            format_answer(&s, prompt.context.carried_tap)
        ))
    }
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    xs.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, x)| if x > b.1 { (i, x) } else { b })
}

fn fnv1a(prompt: &PromptBundle) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for m in &prompt.messages {
        for b in m.content.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Least-squares tap trajectory with at most `limit` changes, counting a
/// change at hour 0 against `carried`.
pub fn fit_taps(target: &[f64], carried: i32, half: i32, limit: usize) -> Vec<i32> {
    let n = target.len();
    let m = (2 * half + 1) as usize;
    let idx = |t: i32| (t + half) as usize;
    const INF: f64 = f64::INFINITY;
    // cost[h][tap][changes] and the tap chosen at h-1.
    let mut cost = vec![vec![vec![INF; limit + 1]; m]; n];
    let mut back = vec![vec![vec![(0usize, 0usize); limit + 1]; m]; n];
    for t in -half..=half {
        let c = usize::from(t != carried);
        if c <= limit {
            cost[0][idx(t)][c] = (t as f64 - target[0]).powi(2);
        }
    }
    for h in 1..n {
        for t in 0..m {
            let e = ((t as i32 - half) as f64 - target[h]).powi(2);
            for k in 0..=limit {
                let mut best = (INF, (0, 0));
                for p in 0..m {
                    let pk = if p == t {
                        k
                    } else if k == 0 {
                        continue;
                    } else {
                        k - 1
                    };
                    let c = cost[h - 1][p][pk];
                    if c < best.0 {
                        best = (c, (p, pk));
                    }
                }
                if best.0 < INF {
                    cost[h][t][k] = best.0 + e;
                    back[h][t][k] = best.1;
                }
            }
        }
    }
    let mut end = (INF, (0, 0));
    for t in 0..m {
        for k in 0..=limit {
            if cost[n - 1][t][k] < end.0 {
                end = (cost[n - 1][t][k], (t, k));
            }
        }
    }
    let (mut t, mut k) = end.1;
    let mut taps = vec![0; n];
    for h in (0..n).rev() {
        taps[h] = t as i32 - half;
        if h > 0 {
            (t, k) = back[h][t][k];
        }
    }
    taps
}

/// Always answers with prose and no answer block.
#[derive(Debug, Clone, Default)]
pub struct GarbageAdvisor {
    pub calls: usize,
}

impl Advisor for GarbageAdvisor {
    fn complete(&mut self, _prompt: &PromptBundle) -> Result<String> {
        self.calls += 1;
        Ok("I think the voltage will be fine, keep everything as it is.".into())
    }
}

/// Replays canned replies in order, then repeats the last one.
#[derive(Debug, Clone)]
pub struct ScriptedAdvisor {
    pub replies: Vec<String>,
    pub calls: usize,
}

impl ScriptedAdvisor {
    pub fn new(replies: Vec<String>) -> ScriptedAdvisor {
        ScriptedAdvisor { replies, calls: 0 }
    }
}

impl Advisor for ScriptedAdvisor {
    fn complete(&mut self, _prompt: &PromptBundle) -> Result<String> {
        let i = self.calls.min(self.replies.len().saturating_sub(1));
        self.calls += 1;
        self.replies.get(i).cloned().ok_or_else(|| Error::Transport("no scripted reply".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Transport retries after the first attempt.
    pub retries: usize,
    pub backoff: Duration,
}

impl RemoteConfig {
    /// Reads endpoint, key and model from the environment.
    pub fn from_env(timeout: Duration, retries: usize) -> Result<RemoteConfig> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| Error::InvalidConfig(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(RemoteConfig {
            endpoint,
            api_key: std::env::var(ENV_API_KEY).ok(),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".into()),
            timeout,
            retries,
            backoff: Duration::from_millis(500),
        })
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [super::prompt::Message],
    temperature: f64,
    top_p: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// JSON chat-completion client with exponential backoff.
#[derive(Debug)]
pub struct RemoteAdvisor {
    pub cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteAdvisor {
    pub fn new(cfg: RemoteConfig) -> RemoteAdvisor {
        let agent = ureq::Agent::config_builder().timeout_global(Some(cfg.timeout)).build().into();
        RemoteAdvisor { cfg, agent }
    }

    fn once(&self, prompt: &PromptBundle) -> std::result::Result<String, String> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: &prompt.messages,
            temperature: prompt.sampling.temperature,
            top_p: prompt.sampling.top_p,
        };
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "response has no choices".to_string())
    }
}

impl Advisor for RemoteAdvisor {
    fn complete(&mut self, prompt: &PromptBundle) -> Result<String> {
        let mut delay = self.cfg.backoff;
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            match self.once(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("advisor request {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
            if attempt < self.cfg.retries {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(Error::Transport(last))
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;
    use crate::grid::Network;
    use crate::llm::parse::parse_response;
    use crate::llm::prompt::{build_prompt, DeviceSpecs, Sampling};
    use crate::scenario::RegionForecast;
    use crate::schedule::validate_schedule;

    const TEST: Sampling = Sampling {
        temperature: 0.0,
        top_p: 0.6,
    };

    fn bundle(system: Vec<f64>, region: Vec<Vec<f64>>) -> PromptBundle {
        let net = Network::ieee33();
        build_prompt(
            PromptContext {
                specs: DeviceSpecs::of(&net),
                forecast: RegionForecast { region, system },
                carried_tap: 0,
                few_shot: None,
                similarity: None,
                reflection: None,
                retry_reason: None,
            },
            TEST,
        )
    }

    #[test]
    fn fit_taps_respects_budget() {
        let target: Vec<f64> = (0..24).map(|h| (h as f64 * 0.7).sin() * 6.0).collect();
        for limit in 0..=4 {
            let taps = fit_taps(&target, 1, 5, limit);
            let s = DaySchedule {
                oltc_taps: taps.clone(),
                sc_intervals: vec![],
            };
            assert!(s.tap_changes(1) <= limit);
            assert!(taps.iter().all(|t| t.abs() <= 5));
        }
        assert_eq!(fit_taps(&[2.2; 24], 0, 5, 4), vec![2; 24]);
        assert_eq!(fit_taps(&[2.2; 24], 0, 5, 0), vec![0; 24]);
    }

    #[test]
    fn midday_surplus_lowers_tap() {
        // Heavy load at night, PV surplus around noon.
        let system: Vec<f64> = (0..24).map(|h| if (10..15).contains(&h) { -2.0 } else { 1.5 }).collect();
        let b = bundle(system, vec![vec![0.5; 24]; 3]);
        let s = StubAdvisor::new(StubConfig::default()).propose(&b);
        assert!(s.oltc_taps[12] < s.oltc_taps[3]);
        assert!(s.oltc_taps[12] < 0);
    }

    #[test]
    fn evening_peak_commits_capacitor() {
        let mut region = vec![vec![0.2; 24]; 3];
        region[1][19] = 1.5;
        region[1][20] = 1.4;
        let b = bundle(vec![0.5; 24], region);
        let net = Network::ieee33();
        let s = StubAdvisor::new(StubConfig::default()).propose(&b);
        let k = net.sc_regions().iter().position(|&r| r == 1).unwrap();
        let (on, off) = s.sc_intervals[k].unwrap();
        assert!(on <= 19 && 19 < off);
        assert!(on >= net.scs[k].window.0 && off <= net.scs[k].window.1);
    }

    #[test]
    fn stub_reply_parses_and_validates() {
        let net = Network::ieee33();
        let system: Vec<f64> = (0..24).map(|h| 2.0 * ((h as f64 - 12.0) / 4.0).cos() - 0.5).collect();
        let mut b = bundle(system, vec![vec![0.4; 24]; 3]);
        b.sampling = Sampling {
            temperature: 1.5,
            top_p: 1.0,
        };
        let mut stub = StubAdvisor::new(StubConfig::default());
        let reply = stub.complete(&b).unwrap();
        let s = parse_response(&reply, &net.oltc, 3, 0).unwrap();
        assert!(validate_schedule(&s, &net.oltc, &net.scs, 0).is_empty());
        assert_eq!(stub.complete(&b).unwrap(), reply);
    }

    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn remote(url: String, retries: usize) -> RemoteAdvisor {
        RemoteAdvisor::new(RemoteConfig {
            endpoint: url,
            api_key: Some("k".into()),
            model: "m".into(),
            timeout: Duration::from_secs(5),
            retries,
            backoff: Duration::from_millis(1),
        })
    }

    #[test]
    fn remote_retries_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#.to_string();
        let (url, handle) = serve(vec![(500, "{}".into()), (200, ok)]);
        let b = bundle(vec![0.5; 24], vec![vec![0.2; 24]; 3]);
        assert_eq!(remote(url, 3).complete(&b).unwrap(), "hello");
        let bodies = handle.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let req: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(req["model"], "m");
        assert_eq!(req["temperature"], 0.0);
        assert_eq!(req["top_p"], 0.6);
        assert_eq!(req["messages"][0]["role"], "system");
    }

    #[test]
    fn remote_gives_up_after_retries() {
        let (url, handle) = serve(vec![(503, "{}".into()), (503, "{}".into())]);
        let b = bundle(vec![0.5; 24], vec![vec![0.2; 24]; 3]);
        let err = remote(url, 1).complete(&b).unwrap_err();
        assert!(matches!(err, Error::Transport(_)));
        assert_eq!(handle.join().unwrap().len(), 2);
    }
}
