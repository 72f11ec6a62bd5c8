//! Static feeder description: buses, branches, per-unit bases and the
//! controllable devices (root OLTC, shunt capacitors, PV inverters).
//!
//! Networks are loaded from the case JSON format and checked for radiality
//! and device placement before anything downstream may use them.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IEEE33_JSON: &str = include_str!("../cases/ieee33.json");
const TOY5_JSON: &str = include_str!("../cases/toy5.json");

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub region: usize,
    /// Nominal (peak) active load, MW.
    pub p_load_mw: f64,
    /// Nominal (peak) reactive load, MVAr.
    pub q_load_mvar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OltcSpec {
    pub positions: usize,
    pub step_pu: f64,
    pub daily_change_limit: usize,
}

impl Default for OltcSpec {
    fn default() -> Self {
        OltcSpec {
            positions: 11,
            step_pu: 0.006,
            daily_change_limit: 4,
        }
    }
}

impl OltcSpec {
    /// Largest tap magnitude; taps run over `-half..=half`.
    pub fn half_range(&self) -> i32 {
        (self.positions / 2) as i32
    }

    pub fn contains(&self, tap: i32) -> bool {
        tap.abs() <= self.half_range()
    }

    /// Index of `tap` in a one-hot encoding of all positions.
    pub fn index_of(&self, tap: i32) -> usize {
        (tap + self.half_range()) as usize
    }

    pub fn taps(&self) -> impl Iterator<Item = i32> {
        let h = self.half_range();
        -h..=h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScSpec {
    pub bus: usize,
    pub q_mvar: f64,
    /// Allowed commitment window `[start, end)` in hours.
    pub window: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvSpec {
    pub bus: usize,
    pub s_mva: f64,
    /// Reactive capacity factor (the action bound of the inverter).
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub base_kv: f64,
    pub v_ref: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub region_count: usize,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub oltc: OltcSpec,
    pub scs: Vec<ScSpec>,
    pub pvs: Vec<PvSpec>,
    tree: Tree,
}

/// Breadth-first ordering of a radial feeder rooted at bus 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Tree {
    /// Buses in BFS order starting at the root. Only reachable buses appear.
    pub order: Vec<usize>,
    /// For each bus, `(parent bus, branch index)`; `None` for the root and
    /// unreachable buses.
    pub parent: Vec<Option<(usize, usize)>>,
}

impl Tree {
    fn build(n: usize, branches: &[Branch]) -> Tree {
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (k, br) in branches.iter().enumerate() {
            if br.from < n && br.to < n && br.from != br.to {
                adj[br.from].push((br.to, k));
                adj[br.to].push((br.from, k));
            }
        }
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::new();
        if n > 0 {
            seen[0] = true;
            queue.push_back(0);
        }
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, k) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, k));
                    queue.push_back(v);
                }
            }
        }
        Tree { order, parent }
    }
}

/// One broken invariant, located at a bus where that makes sense.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub bus: Option<usize>,
    pub rule: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bus {
            Some(b) => write!(f, "bus {b}: {} ({})", self.rule, self.detail),
            None => write!(f, "{} ({})", self.rule, self.detail),
        }
    }
}

// Wire format.

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseFile {
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    pub base_kv: f64,
    pub v_ref: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub buses: Vec<CaseBus>,
    pub branches: Vec<CaseBranch>,
    #[serde(default)]
    pub oltc: OltcSpec,
    #[serde(default)]
    pub scs: Vec<CaseSc>,
    #[serde(default)]
    pub pvs: Vec<CasePv>,
    pub regions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseBus {
    pub id: usize,
    pub region: usize,
    #[serde(default)]
    pub p_mw: f64,
    #[serde(default)]
    pub q_mvar: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseBranch {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseSc {
    pub bus: usize,
    pub q_mvar: f64,
    #[serde(default = "default_sc_window")]
    pub window: [usize; 2],
}

fn default_sc_window() -> [usize; 2] {
    [6, 22]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CasePv {
    pub bus: usize,
    pub s_mva: f64,
    pub lambda: f64,
}

impl Network {
    /// Builds a network without checking it. Use [`load_case`] or
    /// [`Network::from_json`] for checked loading.
    pub fn from_case(case: CaseFile) -> Network {
        let buses: Vec<Bus> = case
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                region: b.region,
                p_load_mw: b.p_mw,
                q_load_mvar: b.q_mvar,
            })
            .collect();
        let branches: Vec<Branch> = case
            .branches
            .iter()
            .map(|b| Branch {
                from: b.from,
                to: b.to,
                r_pu: b.r_pu,
                x_pu: b.x_pu,
            })
            .collect();
        let tree = Tree::build(buses.len(), &branches);
        Network {
            name: case.name,
            base_mva: case.base_mva,
            base_kv: case.base_kv,
            v_ref: case.v_ref,
            v_min: case.v_min,
            v_max: case.v_max,
            region_count: case.regions,
            buses,
            branches,
            oltc: case.oltc,
            scs: case
                .scs
                .iter()
                .map(|s| ScSpec {
                    bus: s.bus,
                    q_mvar: s.q_mvar,
                    window: (s.window[0], s.window[1]),
                })
                .collect(),
            pvs: case
                .pvs
                .iter()
                .map(|p| PvSpec {
                    bus: p.bus,
                    s_mva: p.s_mva,
                    lambda: p.lambda,
                })
                .collect(),
            tree,
        }
    }

    pub fn to_case(&self) -> CaseFile {
        CaseFile {
            name: self.name.clone(),
            base_mva: self.base_mva,
            base_kv: self.base_kv,
            v_ref: self.v_ref,
            v_min: self.v_min,
            v_max: self.v_max,
            buses: self
                .buses
                .iter()
                .map(|b| CaseBus {
                    id: b.id,
                    region: b.region,
                    p_mw: b.p_load_mw,
                    q_mvar: b.q_load_mvar,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|b| CaseBranch {
                    from: b.from,
                    to: b.to,
                    r_pu: b.r_pu,
                    x_pu: b.x_pu,
                })
                .collect(),
            oltc: self.oltc,
            scs: self
                .scs
                .iter()
                .map(|s| CaseSc {
                    bus: s.bus,
                    q_mvar: s.q_mvar,
                    window: [s.window.0, s.window.1],
                })
                .collect(),
            pvs: self
                .pvs
                .iter()
                .map(|p| CasePv {
                    bus: p.bus,
                    s_mva: p.s_mva,
                    lambda: p.lambda,
                })
                .collect(),
            regions: self.region_count,
        }
    }

    /// Parses and validates a case JSON document.
    pub fn from_json(text: &str) -> Result<Network> {
        let case: CaseFile = serde_json::from_str(text).map_err(|e| Error::parse("case JSON", e))?;
        let net = Network::from_case(case);
        let violations = validate_network(&net);
        if !violations.is_empty() {
            let joined: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidCase(joined.join("; ")));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_case()).expect("case serialization is infallible")
    }

    /// The embedded IEEE 33-bus feeder (3 regions, 3 SCs, 6 PVs).
    pub fn ieee33() -> Network {
        Network::from_json(IEEE33_JSON).expect("embedded 33-bus case is valid")
    }

    /// Five-bus chain with one large PV at the far end and a fine-step
    /// regulator; used for learning sanity checks.
    pub fn toy5() -> Network {
        Network::from_json(TOY5_JSON).expect("embedded toy case is valid")
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Buses of each region, in ascending id order.
    pub fn region_buses(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.region_count];
        for b in &self.buses {
            if b.region < self.region_count {
                out[b.region].push(b.id);
            }
        }
        out
    }

    /// Region of each SC, by its bus.
    pub fn sc_regions(&self) -> Vec<usize> {
        self.scs.iter().map(|s| self.buses[s.bus].region).collect()
    }

    pub fn total_load_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.p_load_mw).sum()
    }

    pub(crate) fn tree(&self) -> &Tree {
        &self.tree
    }

    /// Returns a copy with every PV capacity multiplied by `scale`.
    pub fn with_pv_scale(&self, scale: f64) -> Network {
        let mut net = self.clone();
        for pv in &mut net.pvs {
            pv.s_mva *= scale;
        }
        net
    }
}

/// Loads and validates a case file from disk.
pub fn load_case(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Network::from_json(&text)
}

/// Checks every network invariant; an empty result means the network is
/// usable. Violations are sorted by bus (network-level entries first).
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |bus: Option<usize>, rule: &str, detail: String| {
        out.push(Violation {
            bus,
            rule: rule.to_string(),
            detail,
        })
    };
    let n = net.buses.len();

    if !(net.base_mva > 0.0) || !(net.base_kv > 0.0) {
        push(
            None,
            "bases",
            format!("base_mva {} and base_kv {} must be positive", net.base_mva, net.base_kv),
        );
    }
    if !(net.v_min < net.v_ref && net.v_ref < net.v_max) {
        push(
            None,
            "voltage band",
            format!("need v_min < v_ref < v_max, got {} / {} / {}", net.v_min, net.v_ref, net.v_max),
        );
    }
    if net.region_count == 0 {
        push(None, "regions", "region count must be at least 1".into());
    }
    if n == 0 {
        push(None, "buses", "network has no buses".into());
    }
    if net.oltc.positions % 2 == 0 || !(net.oltc.step_pu > 0.0) {
        push(
            None,
            "oltc",
            format!(
                "positions must be odd and step positive, got {} / {}",
                net.oltc.positions, net.oltc.step_pu
            ),
        );
    }
    if n > 0 && net.branches.len() != n - 1 {
        push(
            None,
            "radiality",
            format!("{} branches for {} buses (need {})", net.branches.len(), n, n - 1),
        );
    }

    for (k, b) in net.buses.iter().enumerate() {
        if b.id != k {
            push(Some(k), "bus ids", format!("bus at position {k} has id {}", b.id));
        }
        if b.region >= net.region_count {
            push(
                Some(k),
                "region",
                format!("region {} not in 0..{}", b.region, net.region_count),
            );
        }
        if !(b.p_load_mw >= 0.0) {
            push(Some(k), "load", format!("negative base load {}", b.p_load_mw));
        }
    }
    let mut region_seen = vec![false; net.region_count];
    for b in &net.buses {
        if b.region < net.region_count {
            region_seen[b.region] = true;
        }
    }
    for (r, seen) in region_seen.iter().enumerate() {
        if !seen {
            push(None, "region", format!("region {r} has no buses"));
        }
    }

    for (k, br) in net.branches.iter().enumerate() {
        if br.from >= n || br.to >= n {
            push(
                None,
                "branch",
                format!("branch {k} ({} -> {}) references an unknown bus", br.from, br.to),
            );
            continue;
        }
        if br.from == br.to {
            push(Some(br.from), "branch", format!("branch {k} is a self-loop"));
        }
        if !(br.r_pu >= 0.0) || !br.x_pu.is_finite() {
            push(
                Some(br.from.min(br.to)),
                "branch",
                format!("branch {k} has r={} x={}", br.r_pu, br.x_pu),
            );
        }
        if br.r_pu == 0.0 && br.x_pu == 0.0 {
            push(Some(br.from.min(br.to)), "branch", format!("branch {k} has zero impedance"));
        }
    }
    let reached = net.tree.order.len();
    if n > 0 && reached != n {
        for (b, p) in net.tree.parent.iter().enumerate() {
            if b != 0 && p.is_none() {
                push(Some(b), "radiality", "bus not connected to the root".into());
            }
        }
    }

    let mut device = vec![None::<&str>; n];
    for (k, sc) in net.scs.iter().enumerate() {
        if sc.bus >= n {
            push(None, "sc", format!("SC {k} on unknown bus {}", sc.bus));
            continue;
        }
        if sc.bus == 0 {
            push(Some(0), "sc", format!("SC {k} on the root bus"));
        }
        if !(sc.q_mvar > 0.0) {
            push(Some(sc.bus), "sc", format!("SC {k} capacity {} not positive", sc.q_mvar));
        }
        if !(sc.window.0 < sc.window.1 && sc.window.1 <= 24) {
            push(
                Some(sc.bus),
                "sc",
                format!("SC {k} window [{}, {}) is empty or beyond 24 h", sc.window.0, sc.window.1),
            );
        }
        if device[sc.bus].is_some() {
            push(Some(sc.bus), "device", "more than one device on bus".into());
        }
        device[sc.bus] = Some("sc");
    }
    for (k, pv) in net.pvs.iter().enumerate() {
        if pv.bus >= n {
            push(None, "pv", format!("PV {k} on unknown bus {}", pv.bus));
            continue;
        }
        if pv.bus == 0 {
            push(Some(0), "pv", format!("PV {k} on the root bus"));
        }
        if !(pv.s_mva > 0.0) {
            push(Some(pv.bus), "pv", format!("PV {k} capacity {} not positive", pv.s_mva));
        }
        if !(0.0..=1.0).contains(&pv.lambda) {
            push(Some(pv.bus), "pv", format!("PV {k} reactive factor {} not in [0, 1]", pv.lambda));
        }
        match device[pv.bus] {
            Some("sc") => push(Some(pv.bus), "device", "SC and PV on the same bus".into()),
            Some(_) => push(Some(pv.bus), "device", "more than one device on bus".into()),
            None => {}
        }
        device[pv.bus] = Some("pv");
    }

    out.sort();
    out
}
