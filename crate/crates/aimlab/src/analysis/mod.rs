//! Interpretability toolkit over finished runs.
//!
//! Everything here is a pure function of a RunLog (plus the codebook for
//! geometry): a usage dictionary with first/last sightings, ranked frequency
//! spectra, power-law fits over those spectra, a 2D projection of the
//! codebook, code/behavior covariance tables, and a trace of when each
//! agent's dominant sequence changed.

mod covariance;
mod powerlaw;
mod topology;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{action_of, Action};
use crate::trainer::{EpisodeRecord, RunLog};
use crate::vqvae::AimSequence;

pub use covariance::{policy_code_covariance, CodeStats, CovarianceReport};
pub use powerlaw::{fit_power_law, fit_power_law_points, PowerLawFit};
pub use topology::{topology_projection, ProjectedCode, TopologyProjection};

/// Which side of the channel a sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    A,
    B,
}

/// Accumulated statistics for one (agent, sequence) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DictEntry {
    /// What the sequence does to the game, straight from the action rule.
    pub action: Action,
    pub count: usize,
    pub first_seen: usize,
    pub last_seen: usize,
    /// Running mean of the joint reward over episodes using the sequence.
    pub mean_joint: f64,
}

/// Usage ledger for every sequence either agent has spoken.
#[derive(Debug, Clone, PartialEq)]
pub struct AimDictionary {
    k: usize,
    episodes: usize,
    entries: BTreeMap<(AgentId, AimSequence), DictEntry>,
}

impl AimDictionary {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            episodes: 0,
            entries: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, record: &EpisodeRecord) {
        self.episodes += 1;
        for (agent, aim) in [(AgentId::A, &record.aim_a), (AgentId::B, &record.aim_b)] {
            let entry = self
                .entries
                .entry((agent, aim.clone()))
                .or_insert_with(|| DictEntry {
                    action: action_of(aim, self.k),
                    count: 0,
                    first_seen: record.episode,
                    last_seen: record.episode,
                    mean_joint: 0.0,
                });
            entry.count += 1;
            entry.last_seen = record.episode;
            entry.mean_joint += (record.joint - entry.mean_joint) / entry.count as f64;
        }
    }

    pub fn from_log(log: &RunLog) -> Self {
        let mut dict = Self::new(log.config.k);
        for record in &log.records {
            dict.update(record);
        }
        dict
    }

    pub fn entries(&self) -> &BTreeMap<(AgentId, AimSequence), DictEntry> {
        &self.entries
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Sum of all entry counts; always two per processed episode.
    pub fn total_count(&self) -> usize {
        self.entries.values().map(|e| e.count).sum()
    }
}

/// Ranked sequence counts over an episode range, both agents pooled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencySpectrum {
    /// First episode index counted.
    pub start: usize,
    /// One past the last episode index counted.
    pub end: usize,
    /// (sequence, count), count descending, ties in token order.
    pub entries: Vec<(AimSequence, usize)>,
}

impl FrequencySpectrum {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, c)| c).sum()
    }

    /// Fraction of all uses taken by the `n` highest-ranked sequences.
    pub fn top_share(&self, n: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let top: usize = self.entries.iter().take(n).map(|(_, c)| c).sum();
        top as f64 / total as f64
    }
}

/// Counts both agents' sequences over `records[start..end]`. An empty or
/// out-of-range window yields an empty spectrum.
pub fn frequency_spectrum(log: &RunLog, start: usize, end: usize) -> FrequencySpectrum {
    let end = end.min(log.records.len());
    let start = start.min(end);
    let mut counts: BTreeMap<&AimSequence, usize> = BTreeMap::new();
    for record in &log.records[start..end] {
        *counts.entry(&record.aim_a).or_insert(0) += 1;
        *counts.entry(&record.aim_b).or_insert(0) += 1;
    }
    let mut entries: Vec<(AimSequence, usize)> = counts
        .into_iter()
        .map(|(seq, count)| (seq.clone(), count))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    FrequencySpectrum {
        start,
        end,
        entries,
    }
}

/// One dominant-sequence handover.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeEvent {
    pub agent: AgentId,
    /// First episode of the window that switched.
    pub episode: usize,
    pub old: AimSequence,
    pub new: AimSequence,
}

fn dominant(records: &[EpisodeRecord], agent: AgentId) -> Option<AimSequence> {
    let mut counts: BTreeMap<&AimSequence, usize> = BTreeMap::new();
    for record in records {
        let aim = match agent {
            AgentId::A => &record.aim_a,
            AgentId::B => &record.aim_b,
        };
        *counts.entry(aim).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(seq, _)| seq.clone())
}

/// Splits the run into consecutive windows of `window` episodes and reports
/// every change of the per-agent dominant sequence between one window and
/// the next. Within a window, ties go to the lexicographically smallest
/// sequence. A zero window or a log shorter than two windows yields an
/// empty trace.
pub fn decision_change_trace(log: &RunLog, window: usize) -> Vec<ChangeEvent> {
    if window == 0 {
        return Vec::new();
    }
    let mut events = Vec::new();
    for agent in [AgentId::A, AgentId::B] {
        let mut previous: Option<AimSequence> = None;
        let mut start = 0;
        while start + window <= log.records.len() {
            let current = dominant(&log.records[start..start + window], agent)
                .expect("window is nonempty");
            if let Some(prev) = previous {
                if prev != current {
                    events.push(ChangeEvent {
                        agent,
                        episode: start,
                        old: prev,
                        new: current.clone(),
                    });
                }
            }
            previous = Some(current);
            start += window;
        }
    }
    events.sort_by_key(|e| (e.episode, e.agent));
    events
}
