//! Summary of a finished run: steady-state windows, episode timings and
//! threshold checks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::runner::{first_init_duration, TimingBreakdown, METRICS_CSV, QPM_LOG, TIMING_CSV};
use crate::qpm::{EventKind, MitigationEvent};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyStateThresholds {
    pub skr_bps: f64,
    pub skr_rel_tol: f64,
    pub qber: f64,
    pub qber_abs_tol: f64,
    pub min_duration_s: f64,
}

/// Acceptance bands, read from a thresholds file.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Applied to the final steady-state window.
    pub steady_state: SteadyStateThresholds,
    pub controller_reinit_ratio_max: f64,
    pub reinit_parity_rel_tol: f64,
}

impl Thresholds {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ReportError::Missing(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Parse(path.display().to_string(), e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read {0}: {1}")]
    Missing(String, std::io::Error),
    #[error("cannot parse {0}: {1}")]
    Parse(String, String),
}

/// Stretch of the run spent on one path. Statistics cover the polls taken
/// while the monitor was watching for failures, which leaves out
/// re-initialization and the grace period.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub path: String,
    pub start_t: f64,
    pub end_t: f64,
    pub samples: usize,
    pub duration_s: f64,
    pub skr_mean: f64,
    pub skr_std: f64,
    pub qber_mean: f64,
    pub qber_std: f64,
}

impl Window {
    pub fn skipped(&self) -> bool {
        self.samples == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    /// `None` when there was nothing to check.
    pub pass: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: usize,
    pub windows: Vec<Window>,
    pub episodes: Vec<TimingBreakdown>,
    pub first_init_s: Option<f64>,
    pub final_path: Option<String>,
    pub exhausted: bool,
    pub checks: Vec<Check>,
}

impl Summary {
    /// False if any check failed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass != Some(false))
    }

    /// The last window, if it has samples.
    pub fn final_window(&self) -> Option<&Window> {
        self.windows.last().filter(|w| !w.skipped())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "polls: {}", self.rows);
        let _ = writeln!(s, "final path: {}", self.final_path.as_deref().unwrap_or("none"));
        let _ = writeln!(s, "exhausted: {}", if self.exhausted { "yes" } else { "no" });
        match self.first_init_s {
            Some(v) => {
                let _ = writeln!(s, "first initialization: {v:.3} s");
            }
            None => s.push_str("first initialization: n/a\n"),
        }
        s.push_str("\nsteady-state windows\n");
        for (i, w) in self.windows.iter().enumerate() {
            if w.skipped() {
                let _ = writeln!(
                    s,
                    "  {} {} t={}..{} SKIPPED (no monitoring samples)",
                    i + 1,
                    w.path,
                    w.start_t,
                    w.end_t
                );
            } else {
                let _ = writeln!(
                    s,
                    "  {} {} t={}..{} samples={} skr_mean={:.3} skr_std={:.3} qber_mean={:.6} qber_std={:.6}",
                    i + 1,
                    w.path,
                    w.start_t,
                    w.end_t,
                    w.samples,
                    w.skr_mean,
                    w.skr_std,
                    w.qber_mean,
                    w.qber_std
                );
            }
        }
        s.push_str("\nepisodes\n");
        if self.episodes.is_empty() {
            s.push_str("  none\n");
        }
        for e in &self.episodes {
            let _ = writeln!(
                s,
                "  {} detect_s={:.3} controller_s={:.6} reinit_s={:.3} total_s={:.3} controller/reinit={:.2e}",
                e.episode,
                e.detect_s,
                e.controller_s,
                e.reinit_s,
                e.total_s,
                ratio(e)
            );
        }
        if !self.checks.is_empty() {
            s.push_str("\nchecks\n");
            for c in &self.checks {
                let verdict = match c.pass {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "SKIPPED",
                };
                let _ = writeln!(s, "{verdict} {}: {}", c.name, c.detail);
            }
        }
        s
    }
}

fn ratio(e: &TimingBreakdown) -> f64 {
    e.controller_s / e.reinit_s
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

struct Row {
    t: f64,
    path: String,
    skr: f64,
    qber: f64,
    state: String,
}

fn read_metrics(path: &Path) -> Result<Vec<Row>, ReportError> {
    let label = path.display().to_string();
    let parse_err = |e: String| ReportError::Parse(label.clone(), e);
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => ReportError::Missing(label.clone(), io),
        other => ReportError::Parse(label.clone(), format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(format!("missing column {name}")))
    };
    let (t, path_col, skr, qber, state) = (col("t")?, col("active_path")?, col("skr_bps")?, col("qber")?, col("qpm_state")?);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let num = |c: usize| {
            rec.get(c)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| parse_err(format!("row {}: {e}", i + 1)))
        };
        rows.push(Row {
            t: num(t)?,
            path: rec.get(path_col).unwrap_or("none").to_owned(),
            skr: num(skr)?,
            qber: num(qber)?,
            state: rec.get(state).unwrap_or("").to_owned(),
        });
    }
    Ok(rows)
}

fn windows(rows: &[Row]) -> Vec<Window> {
    let period = match rows {
        [a, b, ..] => b.t - a.t,
        _ => 0.0,
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let mut j = i;
        while j < rows.len() && rows[j].path == rows[i].path {
            j += 1;
        }
        if rows[i].path != "none" {
            let steady: Vec<&Row> = rows[i..j].iter().filter(|r| r.state == "MONITORING").collect();
            let skr: Vec<f64> = steady.iter().map(|r| r.skr).collect();
            let qber: Vec<f64> = steady.iter().map(|r| r.qber).collect();
            let ((skr_mean, skr_std), (qber_mean, qber_std)) = if steady.is_empty() {
                ((f64::NAN, f64::NAN), (f64::NAN, f64::NAN))
            } else {
                (mean_std(&skr), mean_std(&qber))
            };
            out.push(Window {
                path: rows[i].path.clone(),
                start_t: rows[i].t,
                end_t: rows[j - 1].t + period,
                samples: steady.len(),
                duration_s: steady.len() as f64 * period,
                skr_mean,
                skr_std,
                qber_mean,
                qber_std,
            });
        }
        i = j;
    }
    out
}

fn read_events(path: &Path) -> Result<Vec<MitigationEvent>, ReportError> {
    let label = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| ReportError::Missing(label.clone(), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ReportError::Parse(label.clone(), format!("line {}: {e}", i + 1))))
        .collect()
}

fn read_timing(path: &Path) -> Result<Vec<TimingBreakdown>, ReportError> {
    let label = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => ReportError::Missing(label.clone(), io),
        other => ReportError::Parse(label.clone(), format!("{other:?}")),
    })?;
    reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ReportError::Parse(label, e.to_string()))
}

fn checks(summary: &Summary, th: &Thresholds) -> Vec<Check> {
    let mut out = Vec::new();
    let ss = &th.steady_state;
    match summary.final_window() {
        None => out.push(Check {
            name: "steady state".into(),
            pass: Some(false),
            detail: "no steady-state samples in the final window".into(),
        }),
        Some(w) => {
            let rel = (w.skr_mean - ss.skr_bps).abs() / ss.skr_bps;
            out.push(Check {
                name: "steady-state SKR".into(),
                pass: Some(rel <= ss.skr_rel_tol),
                detail: format!(
                    "mean {:.3} b/s on {} vs {} b/s +/- {}%",
                    w.skr_mean,
                    w.path,
                    ss.skr_bps,
                    ss.skr_rel_tol * 100.0
                ),
            });
            let abs = (w.qber_mean - ss.qber).abs();
            out.push(Check {
                name: "steady-state QBER".into(),
                pass: Some(abs <= ss.qber_abs_tol),
                detail: format!("mean {:.6} vs {} +/- {}", w.qber_mean, ss.qber, ss.qber_abs_tol),
            });
            out.push(Check {
                name: "steady-state duration".into(),
                pass: Some(w.duration_s >= ss.min_duration_s),
                detail: format!("{} s vs at least {} s", w.duration_s, ss.min_duration_s),
            });
        }
    }
    if summary.episodes.is_empty() {
        out.push(Check {
            name: "controller/reinit ratio".into(),
            pass: None,
            detail: "no mitigation episodes".into(),
        });
    }
    for e in &summary.episodes {
        out.push(Check {
            name: format!("controller/reinit ratio, episode {}", e.episode),
            pass: Some(ratio(e) < th.controller_reinit_ratio_max),
            detail: format!("{:.3e} vs below {}", ratio(e), th.controller_reinit_ratio_max),
        });
    }
    match summary.first_init_s {
        Some(first) if !summary.episodes.is_empty() => {
            for e in &summary.episodes {
                let rel = (e.reinit_s - first).abs() / first;
                out.push(Check {
                    name: format!("re-init parity, episode {}", e.episode),
                    pass: Some(rel <= th.reinit_parity_rel_tol),
                    detail: format!(
                        "{:.3} s vs first {:.3} s ({:.2}% apart, at most {}%)",
                        e.reinit_s,
                        first,
                        rel * 100.0,
                        th.reinit_parity_rel_tol * 100.0
                    ),
                });
            }
        }
        _ => out.push(Check {
            name: "re-init parity".into(),
            pass: None,
            detail: "no episodes or no first initialization on record".into(),
        }),
    }
    out
}

/// Builds the summary of the run stored in `out_dir`. The monitor log is
/// read from `qpm_log`, or from the output directory when not given; it is
/// optional.
pub fn summarize(out_dir: &Path, qpm_log: Option<&Path>, thresholds: Option<&Thresholds>) -> Result<Summary, ReportError> {
    let rows = read_metrics(&out_dir.join(METRICS_CSV))?;
    let episodes = read_timing(&out_dir.join(TIMING_CSV))?;
    let log_path = qpm_log.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join(QPM_LOG));
    let events = if log_path.exists() {
        read_events(&log_path)?
    } else {
        Vec::new()
    };
    let mut summary = Summary {
        rows: rows.len(),
        windows: windows(&rows),
        episodes,
        first_init_s: first_init_duration(&events),
        final_path: rows.last().map(|r| r.path.clone()).filter(|p| p != "none"),
        exhausted: events.last().is_some_and(|e| e.kind == EventKind::Exhausted),
        checks: Vec::new(),
    };
    if let Some(th) = thresholds {
        summary.checks = checks(&summary, th);
    }
    Ok(summary)
}
