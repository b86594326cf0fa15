//! CSV tables and static SVG charts emitted by `analyze` and `compare`.
//! Floats are written with Rust's shortest round-trip formatting so reruns
//! are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::analysis::{
    fit_power_law, AgentId, AimDictionary, CovarianceReport, FrequencySpectrum,
    TopologyProjection,
};
use crate::trainer::{RunLog, WindowAggregate};
use crate::vqvae::AimSequence;
use crate::{AimError, Result};

/// Episodes per smoothing window in charts and the change trace.
pub const TRACE_WINDOW: usize = 50;
/// Trailing episodes summarized by `compare` and the convergence rule.
pub const CONVERGENCE_WINDOW: usize = 200;
/// Window mean joint reward that counts as converged (95% of the
/// full-cooperation mean of 9).
pub const CONVERGENCE_THRESHOLD: f64 = 8.5;
/// Spectrum and power-law fits look at this many final episodes.
pub const SPECTRUM_WINDOW: usize = 1000;

pub fn sequence_label(seq: &AimSequence) -> String {
    let parts: Vec<String> = seq.tokens.iter().map(|t| t.to_string()).collect();
    parts.join("-")
}

pub fn agent_label(agent: AgentId) -> &'static str {
    match agent {
        AgentId::A => "A",
        AgentId::B => "B",
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| AimError::io(&path.display().to_string(), e))
}

/// rank,sequence,count,share with competition ranks (ties share a rank).
pub fn spectrum_csv(path: &Path, spectrum: &FrequencySpectrum) -> Result<()> {
    let total = spectrum.total();
    let mut out = String::from("rank,sequence,count,share\n");
    for (seq, count) in &spectrum.entries {
        let rank = 1 + spectrum
            .entries
            .iter()
            .filter(|(_, other)| other > count)
            .count();
        let share = if total == 0 {
            0.0
        } else {
            *count as f64 / total as f64
        };
        writeln!(out, "{rank},{},{count},{share}", sequence_label(seq)).unwrap();
    }
    write_text(path, &out)
}

/// status,alpha,intercept,r_squared; an insufficient-data fit is reported,
/// not fatal.
pub fn powerlaw_csv(path: &Path, spectrum: &FrequencySpectrum) -> Result<()> {
    let mut out = String::from("status,alpha,intercept,r_squared\n");
    match fit_power_law(spectrum) {
        Ok(fit) => {
            writeln!(out, "ok,{},{},{}", fit.alpha, fit.intercept, fit.r_squared).unwrap()
        }
        Err(AimError::InsufficientData(_)) => out.push_str("insufficient_data,,,\n"),
        Err(e) => return Err(e),
    }
    write_text(path, &out)
}

pub fn covariance_csv(path: &Path, report: &CovarianceReport) -> Result<()> {
    let mut out = String::from(
        "scope,key,occurrences,episodes_present,p_cooperate,reward_correlation,degenerate\n",
    );
    for (token, stats) in &report.first_token {
        writeln!(
            out,
            "token,{token},{},{},{},{},{}",
            stats.occurrences,
            stats.episodes_present,
            stats.p_cooperate,
            stats.reward_correlation,
            stats.degenerate
        )
        .unwrap();
    }
    for (seq, stats) in &report.full_sequence {
        writeln!(
            out,
            "sequence,{},{},{},{},{},{}",
            sequence_label(seq),
            stats.occurrences,
            stats.episodes_present,
            stats.p_cooperate,
            stats.reward_correlation,
            stats.degenerate
        )
        .unwrap();
    }
    write_text(path, &out)
}

pub fn trace_csv(path: &Path, log: &RunLog) -> Result<()> {
    let mut out = String::from("agent,episode,old,new\n");
    for event in crate::analysis::decision_change_trace(log, TRACE_WINDOW) {
        writeln!(
            out,
            "{},{},{},{}",
            agent_label(event.agent),
            event.episode,
            sequence_label(&event.old),
            sequence_label(&event.new)
        )
        .unwrap();
    }
    write_text(path, &out)
}

/// Most-used sequences first, so the head of the file is the vocabulary that
/// matters.
pub fn dictionary_csv(path: &Path, dict: &AimDictionary) -> Result<()> {
    let mut rows: Vec<_> = dict.entries().iter().collect();
    rows.sort_by(|((agent_a, seq_a), entry_a), ((agent_b, seq_b), entry_b)| {
        entry_b
            .count
            .cmp(&entry_a.count)
            .then_with(|| agent_a.cmp(agent_b))
            .then_with(|| seq_a.cmp(seq_b))
    });
    let mut out =
        String::from("agent,sequence,action,count,first_seen,last_seen,mean_joint\n");
    for ((agent, seq), entry) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            agent_label(*agent),
            sequence_label(seq),
            entry.action,
            entry.count,
            entry.first_seen,
            entry.last_seen,
            entry.mean_joint
        )
        .unwrap();
    }
    write_text(path, &out)
}

pub fn topology_csv(path: &Path, projection: &TopologyProjection) -> Result<()> {
    let mut out = String::from("index,x,y,weight,variance_captured,degenerate\n");
    for p in &projection.points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.index, p.x, p.y, p.weight, projection.variance_captured, projection.degenerate
        )
        .unwrap();
    }
    write_text(path, &out)
}

const CHART_WIDTH: f64 = 640.0;
const CHART_HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 52.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 18.0;
const MARGIN_BOTTOM: f64 = 42.0;

fn fmt_coord(v: f64) -> String {
    format!("{:.2}", v)
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        MARGIN_LEFT + (v - self.x_min) / span * (CHART_WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        CHART_HEIGHT
            - MARGIN_BOTTOM
            - (v - self.y_min) / span * (CHART_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn svg_open(title: &str, x_min: f64, x_max: f64) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" data-x-min=\"{xmin}\" data-x-max=\"{xmax}\" ",
            "font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"14\" text-anchor=\"middle\">{title}</text>\n"
        ),
        w = CHART_WIDTH,
        h = CHART_HEIGHT,
        xmin = x_min,
        xmax = x_max,
        tx = CHART_WIDTH / 2.0,
        title = title,
    )
}

fn axes(out: &mut String, frame: &Frame, x_ticks: &[f64], y_ticks: &[f64]) {
    let x0 = frame.x(frame.x_min);
    let x1 = frame.x(frame.x_max);
    let y0 = frame.y(frame.y_min);
    let y1 = frame.y(frame.y_max);
    writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt_coord(x0),
        fmt_coord(y0),
        fmt_coord(x1),
        fmt_coord(y0)
    )
    .unwrap();
    writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt_coord(x0),
        fmt_coord(y0),
        fmt_coord(x0),
        fmt_coord(y1)
    )
    .unwrap();
    for &t in x_ticks {
        let x = frame.x(t);
        writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{x}\" y2=\"{y2}\" stroke=\"black\"/>",
            x = fmt_coord(x),
            y = fmt_coord(y0),
            y2 = fmt_coord(y0 + 5.0)
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\">{t}</text>",
            x = fmt_coord(x),
            y = fmt_coord(y0 + 20.0)
        )
        .unwrap();
    }
    for &t in y_ticks {
        let y = frame.y(t);
        writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>",
            x = fmt_coord(x0 - 5.0),
            x2 = fmt_coord(x0),
            y = fmt_coord(y)
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\">{t}</text>",
            x = fmt_coord(x0 - 8.0),
            y = fmt_coord(y + 4.0)
        )
        .unwrap();
    }
}

/// Joint reward per episode (light) and per-window mean (dark). The root
/// element's data-x-min/data-x-max carry the exact episode range.
pub fn reward_curve_svg(path: &Path, log: &RunLog) -> Result<()> {
    let first = log.records.first().map(|r| r.episode).unwrap_or(0);
    let last = log.records.last().map(|r| r.episode).unwrap_or(0);
    let frame = Frame {
        x_min: first as f64,
        x_max: last as f64,
        y_min: 0.0,
        y_max: 10.0,
    };
    let mut out = svg_open("joint reward", frame.x_min, frame.x_max);

    let mut x_ticks = vec![frame.x_min];
    let span = frame.x_max - frame.x_min;
    if span > 0.0 {
        for i in 1..=4 {
            x_ticks.push((frame.x_min + span * i as f64 / 4.0).round());
        }
    }
    x_ticks.dedup();
    let y_ticks: Vec<f64> = (0..=5).map(|i| 2.0 * i as f64).collect();
    axes(&mut out, &frame, &x_ticks, &y_ticks);

    let raw: Vec<String> = log
        .records
        .iter()
        .map(|r| format!("{},{}", fmt_coord(frame.x(r.episode as f64)), fmt_coord(frame.y(r.joint))))
        .collect();
    if raw.len() > 1 {
        writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#bbccee\" stroke-width=\"1\"/>",
            raw.join(" ")
        )
        .unwrap();
    }

    let windows: Vec<WindowAggregate> = log.window_aggregates(TRACE_WINDOW);
    let smooth: Vec<String> = windows
        .iter()
        .map(|w| {
            let mid = (w.start + w.end - 1) as f64 / 2.0;
            format!("{},{}", fmt_coord(frame.x(mid)), fmt_coord(frame.y(w.mean_joint)))
        })
        .collect();
    if smooth.len() > 1 {
        writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#203080\" stroke-width=\"2\"/>",
            smooth.join(" ")
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    write_text(path, &out)
}

/// Bar chart of the spectrum's top 20 sequences.
pub fn spectrum_svg(path: &Path, spectrum: &FrequencySpectrum) -> Result<()> {
    let bars: Vec<_> = spectrum.entries.iter().take(20).collect();
    let max_count = bars.iter().map(|(_, c)| *c).max().unwrap_or(0).max(1);
    let frame = Frame {
        x_min: 0.0,
        x_max: bars.len().max(1) as f64,
        y_min: 0.0,
        y_max: max_count as f64,
    };
    let mut out = svg_open("sequence usage", frame.x_min, frame.x_max);
    let y_ticks = vec![0.0, (max_count as f64 / 2.0).round(), max_count as f64];
    axes(&mut out, &frame, &[], &y_ticks);
    let slot = (frame.x(1.0) - frame.x(0.0)).max(1.0);
    for (i, (seq, count)) in bars.iter().enumerate() {
        let x = frame.x(i as f64) + slot * 0.1;
        let y = frame.y(*count as f64);
        let height = frame.y(0.0) - y;
        writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#3060a0\"/>",
            fmt_coord(x),
            fmt_coord(y),
            fmt_coord(slot * 0.8),
            fmt_coord(height)
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{}</text>",
            fmt_coord(frame.x(i as f64) + slot * 0.5),
            fmt_coord(frame.y(0.0) + 14.0),
            sequence_label(seq)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    write_text(path, &out)
}

/// One `compare` row, precomputed from a run log.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub mode: String,
    pub episodes: usize,
    pub convergence: Option<usize>,
    pub trailing_mean: f64,
    pub top5_share: f64,
}

impl CompareRow {
    pub fn from_log(name: &str, log: &RunLog) -> Self {
        let episodes = log.len();
        let spectrum_start = episodes.saturating_sub(SPECTRUM_WINDOW);
        let spectrum = crate::analysis::frequency_spectrum(log, spectrum_start, episodes);
        let window = CONVERGENCE_WINDOW.min(episodes).max(1);
        Self {
            name: name.to_string(),
            mode: match log.mode {
                crate::trainer::RunMode::Aim => "aim".to_string(),
                crate::trainer::RunMode::Baseline => "baseline".to_string(),
            },
            episodes,
            convergence: log.convergence_episode(window, CONVERGENCE_THRESHOLD),
            trailing_mean: log.trailing_mean_joint(window).unwrap_or(f64::NAN),
            top5_share: spectrum.top_share(5),
        }
    }
}

/// Converged runs first (earlier convergence wins), then higher trailing
/// mean.
pub fn rank_rows(rows: &mut [CompareRow]) {
    rows.sort_by(|a, b| {
        let ka = a.convergence.unwrap_or(usize::MAX);
        let kb = b.convergence.unwrap_or(usize::MAX);
        ka.cmp(&kb)
            .then_with(|| b.trailing_mean.total_cmp(&a.trailing_mean))
            .then_with(|| a.name.cmp(&b.name))
    });
}

pub fn comparison_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut out =
        String::from("run,mode,episodes,convergence_episode,trailing_mean_joint,top5_share\n");
    for r in rows {
        let convergence = r
            .convergence
            .map(|c| c.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.name, r.mode, r.episodes, convergence, r.trailing_mean, r.top5_share
        )
        .unwrap();
    }
    write_text(path, &out)
}

pub fn comparison_table(rows: &[CompareRow]) -> String {
    let mut names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    names.push("run");
    let name_width = names.iter().map(|n| n.len()).max().unwrap_or(3);
    let mut out = format!(
        "{:<name_width$}  {:<8}  {:>8}  {:>11}  {:>13}  {:>10}\n",
        "run", "mode", "episodes", "convergence", "trailing_mean", "top5_share"
    );
    for r in rows {
        let convergence = r
            .convergence
            .map(|c| c.to_string())
            .unwrap_or_else(|| "-".to_string());
        writeln!(
            out,
            "{:<name_width$}  {:<8}  {:>8}  {:>11}  {:>13.3}  {:>10.3}",
            r.name, r.mode, r.episodes, convergence, r.trailing_mean, r.top5_share
        )
        .unwrap();
    }
    out
}
