//! Answer-block grammar shared by prompts, the stub advisor and the parser.
//!
//! ````text
//! ```answer
//! OLTC: 0=0, 10=-2, 16=0
//! SC1: ON 18-21
//! SC2: OFF
//! ```
//! ````
//!
//! OLTC entries are change events (hour=tap); the tap holds until the next
//! event and hours before the first event keep the carried-in tap. SC
//! intervals are `[on, off)` in hours. Lines may also be separated by ` / `.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;

use crate::grid::OltcSpec;
use crate::scenario::HOURS;
use crate::schedule::DaySchedule;

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[ \t]*([A-Za-z]*)[ \t]*\r?\n(.*?)```").unwrap());
static OLTC_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^OLTC\s*:\s*(.*)$").unwrap());
static EVENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{1,2})\s*=\s*([+-]?\d+)$").unwrap());
static SC_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^SC(\d+)\s*:\s*(?:(OFF)|ON\s+(\d{1,2})\s*-\s*(\d{1,2}))$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    MissingAnswerBlock,
    MissingOltcLine,
    MalformedLine(String),
    TapOutOfRange { tap: i64, half: i32 },
    HourOutOfRange(i64),
    DuplicateHour(usize),
    UnknownSc(usize),
    DuplicateSc(usize),
    MissingSc(usize),
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::MissingAnswerBlock => write!(f, "missing answer block"),
            ParseError::MissingOltcLine => write!(f, "answer block has no OLTC line"),
            ParseError::MalformedLine(l) => write!(f, "malformed line: {l:?}"),
            ParseError::TapOutOfRange { tap, half } => write!(f, "tap out of range: {tap} not in -{half}..+{half}"),
            ParseError::HourOutOfRange(h) => write!(f, "hour out of range: {h}"),
            ParseError::DuplicateHour(h) => write!(f, "duplicate OLTC event at hour {h}"),
            ParseError::UnknownSc(k) => write!(f, "unknown capacitor SC{k}"),
            ParseError::DuplicateSc(k) => write!(f, "SC{k} listed twice"),
            ParseError::MissingSc(k) => write!(f, "missing line for SC{k}"),
        }
    }
}

impl std::error::Error for ParseError {}

/// Renders a schedule in the answer grammar, fences included.
pub fn format_answer(s: &DaySchedule, carried_tap: i32) -> String {
    let mut events = Vec::new();
    let mut prev = carried_tap;
    for (h, &t) in s.oltc_taps.iter().enumerate() {
        if h == 0 || t != prev {
            events.push(format!("{h}={t}"));
        }
        prev = t;
    }
    let mut out = String::from("```answer\n");
    out.push_str(&format!("OLTC: {}\n", events.join(", ")));
    for (k, iv) in s.sc_intervals.iter().enumerate() {
        match iv {
            Some((a, b)) => out.push_str(&format!("SC{}: ON {a}-{b}\n", k + 1)),
            None => out.push_str(&format!("SC{}: OFF\n", k + 1)),
        }
    }
    out.push_str("```");
    out
}

/// Extracts the last fenced block with an OLTC line and expands it into a
/// 24-hour schedule. Grid-code checks are left to `validate_schedule`.
pub fn parse_response(text: &str, oltc: &OltcSpec, sc_count: usize, carried_tap: i32) -> Result<DaySchedule, ParseError> {
    let block = FENCE
        .captures_iter(text)
        .map(|c| c.get(2).unwrap().as_str())
        .filter(|b| b.lines().any(|l| l.trim_start().starts_with("OLTC")))
        .last()
        .ok_or(ParseError::MissingAnswerBlock)?;

    let half = oltc.half_range();
    let mut events: Vec<Option<i32>> = vec![None; HOURS];
    let mut saw_oltc = false;
    let mut scs: Vec<Option<Option<(usize, usize)>>> = vec![None; sc_count];

    let lines = block
        .lines()
        .flat_map(|l| l.split(" / "))
        .map(str::trim)
        .filter(|l| !l.is_empty());
    for line in lines {
        if let Some(c) = OLTC_LINE.captures(line) {
            if saw_oltc {
                return Err(ParseError::MalformedLine(line.to_string()));
            }
            saw_oltc = true;
            for ev in c[1].split(',').map(str::trim).filter(|e| !e.is_empty()) {
                let e = EVENT
                    .captures(ev)
                    .ok_or_else(|| ParseError::MalformedLine(line.to_string()))?;
                let hour: i64 = e[1].parse().map_err(|_| ParseError::MalformedLine(line.to_string()))?;
                let tap: i64 = e[2].parse().map_err(|_| ParseError::MalformedLine(line.to_string()))?;
                if hour >= HOURS as i64 {
                    return Err(ParseError::HourOutOfRange(hour));
                }
                if tap.abs() > half as i64 {
                    return Err(ParseError::TapOutOfRange { tap, half });
                }
                let slot = &mut events[hour as usize];
                if slot.is_some() {
                    return Err(ParseError::DuplicateHour(hour as usize));
                }
                *slot = Some(tap as i32);
            }
        } else if let Some(c) = SC_LINE.captures(line) {
            let k: usize = c[1].parse().map_err(|_| ParseError::MalformedLine(line.to_string()))?;
            if k == 0 || k > sc_count {
                return Err(ParseError::UnknownSc(k));
            }
            if scs[k - 1].is_some() {
                return Err(ParseError::DuplicateSc(k));
            }
            scs[k - 1] = Some(if c.get(2).is_some() {
                None
            } else {
                let a: i64 = c[3].parse().map_err(|_| ParseError::MalformedLine(line.to_string()))?;
                let b: i64 = c[4].parse().map_err(|_| ParseError::MalformedLine(line.to_string()))?;
                for h in [a, b] {
                    if h > HOURS as i64 {
                        return Err(ParseError::HourOutOfRange(h));
                    }
                }
                Some((a as usize, b as usize))
            });
        } else {
            return Err(ParseError::MalformedLine(line.to_string()));
        }
    }
    if !saw_oltc {
        return Err(ParseError::MissingOltcLine);
    }
    let mut taps = Vec::with_capacity(HOURS);
    let mut tap = carried_tap;
    for ev in events {
        if let Some(t) = ev {
            tap = t;
        }
        taps.push(tap);
    }
    let sc_intervals = scs
        .into_iter()
        .enumerate()
        .map(|(k, s)| s.ok_or(ParseError::MissingSc(k + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DaySchedule {
        oltc_taps: taps,
        sc_intervals,
    })
}
