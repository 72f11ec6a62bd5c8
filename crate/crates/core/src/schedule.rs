//! Day-ahead OLTC/capacitor schedules and the grid-code checks applied to
//! them before they may be executed.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::grid::{OltcSpec, ScSpec};
use crate::scenario::HOURS;

/// OLTC tap per hour plus at most one commitment interval `[on, off)` per SC.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DaySchedule {
    pub oltc_taps: Vec<i32>,
    pub sc_intervals: Vec<Option<(usize, usize)>>,
}

impl DaySchedule {
    /// Taps at 0 all day and every SC off.
    pub fn neutral(sc_count: usize) -> Self {
        DaySchedule {
            oltc_taps: vec![0; HOURS],
            sc_intervals: vec![None; sc_count],
        }
    }

    pub fn tap_at(&self, hour: usize) -> i32 {
        self.oltc_taps[hour.min(HOURS - 1)]
    }

    pub fn sc_on_at(&self, sc: usize, hour: usize) -> bool {
        matches!(self.sc_intervals[sc], Some((on, off)) if on <= hour && hour < off)
    }

    /// Number of tap movements, counting a change at hour 0 against the
    /// tap carried in from the previous day.
    pub fn tap_changes(&self, carried_tap: i32) -> usize {
        let mut prev = carried_tap;
        let mut count = 0;
        for &t in &self.oltc_taps {
            if t != prev {
                count += 1;
            }
            prev = t;
        }
        count
    }

    pub fn final_tap(&self) -> i32 {
        *self.oltc_taps.last().unwrap_or(&0)
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleWire {
    oltc_taps: Vec<i32>,
    scs: Vec<ScWire>,
}

#[derive(Serialize, Deserialize)]
struct ScWire {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    on: Option<[usize; 2]>,
}

impl Serialize for DaySchedule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ScheduleWire {
            oltc_taps: self.oltc_taps.clone(),
            scs: self
                .sc_intervals
                .iter()
                .enumerate()
                .map(|(id, iv)| ScWire {
                    id,
                    on: iv.map(|(a, b)| [a, b]),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DaySchedule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = ScheduleWire::deserialize(d)?;
        let n = wire.scs.iter().map(|s| s.id + 1).max().unwrap_or(0);
        let mut sc_intervals = vec![None; n];
        for sc in wire.scs {
            sc_intervals[sc.id] = sc.on.map(|[a, b]| (a, b));
        }
        Ok(DaySchedule {
            oltc_taps: wire.oltc_taps,
            sc_intervals,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleViolation {
    pub device: String,
    pub rule: String,
    pub hour: Option<usize>,
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hour {
            Some(h) => write!(f, "{}: {} (hour {h})", self.device, self.rule),
            None => write!(f, "{}: {}", self.device, self.rule),
        }
    }
}

/// Checks the grid codes: tap range, daily OLTC change limit, and each SC
/// interval lying inside its allowed window. Empty result means valid.
pub fn validate_schedule(
    s: &DaySchedule,
    oltc: &OltcSpec,
    scs: &[ScSpec],
    carried_tap: i32,
) -> Vec<ScheduleViolation> {
    let mut out = Vec::new();
    let v = |device: &str, rule: String, hour: Option<usize>| ScheduleViolation {
        device: device.to_string(),
        rule,
        hour,
    };

    if s.oltc_taps.len() != HOURS {
        out.push(v("OLTC", format!("expected {HOURS} hourly taps, got {}", s.oltc_taps.len()), None));
    }
    for (h, &tap) in s.oltc_taps.iter().enumerate() {
        if !oltc.contains(tap) {
            out.push(v("OLTC", format!("tap {tap} outside ±{}", oltc.half_range()), Some(h)));
        }
    }
    let mut prev = carried_tap;
    let mut changes = 0;
    for (h, &tap) in s.oltc_taps.iter().enumerate() {
        if tap != prev {
            changes += 1;
            if changes == oltc.daily_change_limit + 1 {
                out.push(v(
                    "OLTC",
                    format!(
                        "{} tap changes exceed the daily limit of {}",
                        s.tap_changes(carried_tap),
                        oltc.daily_change_limit
                    ),
                    Some(h),
                ));
            }
        }
        prev = tap;
    }

    if s.sc_intervals.len() != scs.len() {
        out.push(v(
            "SC",
            format!("expected {} capacitor entries, got {}", scs.len(), s.sc_intervals.len()),
            None,
        ));
    }
    for (k, (iv, spec)) in s.sc_intervals.iter().zip(scs).enumerate() {
        let name = format!("SC{}", k + 1);
        if let Some((on, off)) = *iv {
            if on >= off || off > HOURS {
                out.push(v(&name, format!("interval [{on}, {off}) is empty or beyond 24 h"), Some(on)));
            } else if on < spec.window.0 || off > spec.window.1 {
                out.push(v(
                    &name,
                    format!(
                        "interval [{on}, {off}) outside allowed window [{}, {})",
                        spec.window.0, spec.window.1
                    ),
                    Some(if on < spec.window.0 { on } else { spec.window.1 }),
                ));
            }
        }
    }
    out
}

/// Uniformly random valid schedule: `k` change hours with fresh taps, and
/// each SC committed with probability 1/2 over a random sub-window.
pub fn random_schedule<R: Rng>(rng: &mut R, oltc: &OltcSpec, scs: &[ScSpec], carried_tap: i32) -> DaySchedule {
    let half = oltc.half_range();
    let k = rng.random_range(0..=oltc.daily_change_limit.min(HOURS));
    let mut hours: Vec<usize> = (0..HOURS).collect();
    // Partial Fisher-Yates for k distinct change hours.
    for i in 0..k {
        let j = rng.random_range(i..HOURS);
        hours.swap(i, j);
    }
    let mut change_at = [false; HOURS];
    for &h in &hours[..k] {
        change_at[h] = true;
    }
    let mut tap = carried_tap.clamp(-half, half);
    let mut taps = Vec::with_capacity(HOURS);
    for &change in change_at.iter() {
        if change && half > 0 {
            // Any position other than the current one.
            let mut next = rng.random_range(-half..half);
            if next >= tap {
                next += 1;
            }
            tap = next;
        }
        taps.push(tap);
    }

    let sc_intervals = scs
        .iter()
        .map(|sc| {
            if rng.random_bool(0.5) {
                let (w0, w1) = sc.window;
                let a = rng.random_range(w0..=w1);
                let mut b = rng.random_range(w0..w1);
                if b >= a {
                    b += 1;
                }
                Some((a.min(b), a.max(b)))
            } else {
                None
            }
        })
        .collect();
    DaySchedule {
        oltc_taps: taps,
        sc_intervals,
    }
}
