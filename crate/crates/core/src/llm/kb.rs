//! Knowledge base of past days with threshold-gated updates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::similarity::similarity;
use crate::error::{Error, Result};
use crate::schedule::DaySchedule;

pub const KB_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub day_index: usize,
    /// System net-load forecast, MW per hour.
    pub system_forecast: Vec<f64>,
    /// `[region][hour]`, MW.
    pub region_forecast: Vec<Vec<f64>>,
    pub schedule: DaySchedule,
    /// Best daily total reward obtained with this schedule.
    pub reward: f64,
    pub hourly_system: Vec<f64>,
    pub hourly_region: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieval {
    pub index: Option<usize>,
    /// Similarity of the best match; `-inf` for an empty base.
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOutcome {
    Appended,
    Replaced(usize),
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub threshold: f64,
    pub entries: Vec<KnowledgeEntry>,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        KnowledgeBase::new(DEFAULT_THRESHOLD)
    }
}

#[derive(Serialize, Deserialize)]
struct KbFile {
    schema_version: u32,
    #[serde(flatten)]
    kb: KnowledgeBase,
}

impl KnowledgeBase {
    pub fn new(threshold: f64) -> KnowledgeBase {
        KnowledgeBase {
            threshold,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Most similar stored day by system forecast (first on ties).
    pub fn retrieve(&self, system_forecast: &[f64]) -> Retrieval {
        let mut best = Retrieval {
            index: None,
            similarity: f64::NEG_INFINITY,
        };
        for (i, e) in self.entries.iter().enumerate() {
            let s = similarity(system_forecast, &e.system_forecast);
            if s > best.similarity {
                best = Retrieval {
                    index: Some(i),
                    similarity: s,
                };
            }
        }
        best
    }

    pub fn get(&self, r: &Retrieval) -> Option<&KnowledgeEntry> {
        r.index.map(|i| &self.entries[i])
    }

    /// Appends novel days, replaces a similar day when the new reward is
    /// higher, otherwise keeps the base unchanged.
    pub fn update(&mut self, candidate: KnowledgeEntry, matched: &Retrieval) -> UpdateOutcome {
        match matched.index {
            Some(j) if matched.similarity >= self.threshold => {
                if candidate.reward > self.entries[j].reward {
                    self.entries[j] = candidate;
                    UpdateOutcome::Replaced(j)
                } else {
                    UpdateOutcome::Discarded
                }
            }
            _ => {
                self.entries.push(candidate);
                UpdateOutcome::Appended
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&KbFile {
            schema_version: KB_SCHEMA_VERSION,
            kb: self.clone(),
        })
        .expect("knowledge base serializes")
    }

    pub fn from_json(text: &str) -> Result<KnowledgeBase> {
        let f: KbFile = serde_json::from_str(text).map_err(|e| Error::parse("knowledge base", e))?;
        if f.schema_version != KB_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "knowledge base schema {} (expected {KB_SCHEMA_VERSION})",
                f.schema_version
            )));
        }
        Ok(f.kb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<KnowledgeBase> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KnowledgeBase::from_json(&text)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn entry(system: Vec<f64>, reward: f64) -> KnowledgeEntry {
        KnowledgeEntry {
            day_index: 0,
            system_forecast: system,
            region_forecast: vec![vec![0.0; 24]],
            schedule: DaySchedule::neutral(0),
            reward,
            hourly_system: vec![1.0; 24],
            hourly_region: vec![vec![1.0; 24]],
        }
    }

    #[test]
    fn retrieve_identical_and_empty() {
        let mut kb = KnowledgeBase::default();
        let r = kb.retrieve(&[1.0; 24]);
        assert_eq!(r.index, None);
        assert_eq!(r.similarity, f64::NEG_INFINITY);
        kb.entries.push(entry(vec![1.0; 24], -1.0));
        let r = kb.retrieve(&[1.0; 24]);
        assert_eq!(r.index, Some(0));
        assert!((r.similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn retrieve_picks_highest() {
        let q = vec![1.0; 24];
        let mut kb = KnowledgeBase::default();
        // Magnitude ratios 0.3 and 0.9 with identical shape.
        kb.entries.push(entry(vec![0.3; 24], -1.0));
        kb.entries.push(entry(vec![0.9; 24], -1.0));
        let r = kb.retrieve(&q);
        assert_eq!(r.index, Some(1));
        assert!((r.similarity - 0.9).abs() < 1e-12);
    }

    #[test]
    fn update_branches() {
        let mut kb = KnowledgeBase::default();
        kb.entries.push(entry(vec![1.0; 24], -4.2));
        let low = Retrieval {
            index: Some(0),
            similarity: 0.5,
        };
        assert_eq!(kb.update(entry(vec![2.0; 24], -9.0), &low), UpdateOutcome::Appended);
        assert_eq!(kb.len(), 2);
        let high = Retrieval {
            index: Some(0),
            similarity: 0.8,
        };
        assert_eq!(kb.update(entry(vec![1.0; 24], -5.0), &high), UpdateOutcome::Discarded);
        assert_eq!(kb.entries[0].reward, -4.2);
        assert_eq!(kb.update(entry(vec![1.0; 24], -3.0), &high), UpdateOutcome::Replaced(0));
        assert_eq!(kb.len(), 2);
        assert_eq!(kb.entries[0].reward, -3.0);
    }

    #[test]
    fn json_roundtrip_with_version() {
        let mut kb = KnowledgeBase::default();
        kb.entries.push(entry(vec![0.5; 24], -2.0));
        let text = kb.to_json();
        assert!(text.contains("\"schema_version\": 1"));
        assert_eq!(KnowledgeBase::from_json(&text).unwrap(), kb);
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(KnowledgeBase::from_json(&bumped).is_err());
    }
}
