//! Line-delimited run persistence.
//!
//! A run file is one header line (mode plus full config) followed by one
//! JSON object per episode. Files are append-only; a truncated final line
//! is tolerated on load so a crashed run stays readable.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpisodeRecord, TrainConfig};
use crate::{AimError, Result};

/// Which trainer produced a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Aim,
    Baseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    mode: RunMode,
    config: TrainConfig,
}

/// A completed (or loaded) training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: RunMode,
    pub config: TrainConfig,
    pub records: Vec<EpisodeRecord>,
}

/// Disjoint-window summary used by traces and reward curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowAggregate {
    /// First episode index in the window.
    pub start: usize,
    /// One past the last episode index.
    pub end: usize,
    pub mean_joint: f64,
    /// Distinct AIM sequences Agent A used in the window.
    pub unique_a: usize,
    pub unique_b: usize,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean joint reward over `records[start..end]`.
    pub fn mean_joint_range(&self, start: usize, end: usize) -> Option<f64> {
        if start >= end || end > self.records.len() {
            return None;
        }
        let sum: f64 = self.records[start..end].iter().map(|r| r.joint).sum();
        Some(sum / (end - start) as f64)
    }

    /// Mean joint reward of the last `n` episodes.
    pub fn trailing_mean_joint(&self, n: usize) -> Option<f64> {
        if n == 0 || n > self.records.len() {
            return None;
        }
        self.mean_joint_range(self.records.len() - n, self.records.len())
    }

    /// Earliest episode count at which the trailing `window` episodes
    /// average at least `threshold`. Returns the 1-based count, so a run
    /// that converges immediately reports `window`.
    pub fn convergence_episode(&self, window: usize, threshold: f64) -> Option<usize> {
        if window == 0 || window > self.records.len() {
            return None;
        }
        let mut sum: f64 = self.records[..window].iter().map(|r| r.joint).sum();
        if sum / window as f64 >= threshold {
            return Some(window);
        }
        for end in window..self.records.len() {
            sum += self.records[end].joint - self.records[end - window].joint;
            if sum / window as f64 >= threshold {
                return Some(end + 1);
            }
        }
        None
    }

    /// Splits the run into disjoint windows of `window` episodes (the last
    /// may be shorter) and summarizes each.
    pub fn window_aggregates(&self, window: usize) -> Vec<WindowAggregate> {
        if window == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.records.len() {
            let end = (start + window).min(self.records.len());
            let slice = &self.records[start..end];
            let mean_joint =
                slice.iter().map(|r| r.joint).sum::<f64>() / slice.len() as f64;
            let unique_a: HashSet<&[usize]> =
                slice.iter().map(|r| r.aim_a.tokens.as_slice()).collect();
            let unique_b: HashSet<&[usize]> =
                slice.iter().map(|r| r.aim_b.tokens.as_slice()).collect();
            out.push(WindowAggregate {
                start,
                end,
                mean_joint,
                unique_a: unique_a.len(),
                unique_b: unique_b.len(),
            });
            start = end;
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = RunLogWriter::create(path, self.mode, &self.config)?;
        for record in &self.records {
            writer.append(record)?;
        }
        writer.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let text =
            std::fs::read_to_string(path).map_err(|e| AimError::io(shown.clone(), e))?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| AimError::format(&shown, "run log is empty"))?;
        let header: Header = serde_json::from_str(header_line)
            .map_err(|e| AimError::format(&shown, format!("bad header line: {e}")))?;
        let rest: Vec<&str> = lines.collect();
        let mut records = Vec::with_capacity(rest.len());
        for (i, line) in rest.iter().enumerate() {
            match serde_json::from_str::<EpisodeRecord>(line) {
                Ok(record) => records.push(record),
                // A torn final line means the writer died mid-record; any
                // earlier malformed line is corruption.
                Err(e) if i + 1 == rest.len() => {
                    let _ = e;
                    break;
                }
                Err(e) => {
                    return Err(AimError::format(
                        &shown,
                        format!("record line {} malformed: {e}", i + 2),
                    ));
                }
            }
        }
        Ok(Self {
            mode: header.mode,
            config: header.config,
            records,
        })
    }
}

/// Incremental writer used during training.
pub struct RunLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLogWriter {
    pub fn create(path: &Path, mode: RunMode, config: &TrainConfig) -> Result<Self> {
        let file = File::create(path)
            .map_err(|e| AimError::io(path.display().to_string(), e))?;
        let mut writer = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        let header = Header {
            mode,
            config: config.clone(),
        };
        writer.line(&serde_json::to_string(&header).expect("header serializes"))?;
        Ok(writer)
    }

    pub fn append(&mut self, record: &EpisodeRecord) -> Result<()> {
        self.line(&serde_json::to_string(record).expect("record serializes"))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out
            .flush()
            .map_err(|e| AimError::io(self.path.display().to_string(), e))
    }

    fn line(&mut self, s: &str) -> Result<()> {
        self.out
            .write_all(s.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| AimError::io(self.path.display().to_string(), e))
    }
}
