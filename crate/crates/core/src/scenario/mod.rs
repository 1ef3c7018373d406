//! Scenario files, the attack schedule and the simulation runner.
//!
//! A scenario lists timed attacker events. Each event sets one link's
//! injected power at a given simulated time, either as a step or as the
//! start of a linear ramp. The runner drives every component from one
//! simulated clock and writes CSV metrics, event logs and a summary.

mod report;
mod runner;
mod sweep;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::LinkId;
use crate::physics::ATTACK_OFF;
use crate::topology::Topology;

pub use report::{summarize, Check, ReportError, SteadyStateThresholds, Summary, Thresholds, Window};
pub use runner::{
    first_init_duration, simulate, write_outputs, MetricsRecord, OutputOptions, RunConfig, RunError, RunResult,
    TimingBreakdown, CONTROLLER_LOG, METRICS_CSV, QPM_LOG, SUMMARY_TXT, TIMING_CSV,
};
pub use sweep::{sweep_attack_power, write_sweep, SweepError, SweepRow, SWEEP_CSV};

/// Attacker output on a link: a power in dBm or switched off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackPower {
    Off,
    Dbm(f64),
}

impl AttackPower {
    pub fn dbm(self) -> f64 {
        match self {
            AttackPower::Off => ATTACK_OFF,
            AttackPower::Dbm(p) => p,
        }
    }
}

impl fmt::Display for AttackPower {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackPower::Off => f.write_str("off"),
            AttackPower::Dbm(p) => write!(f, "{p}"),
        }
    }
}

impl Serialize for AttackPower {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AttackPower::Off => s.serialize_str("off"),
            AttackPower::Dbm(p) => s.serialize_f64(*p),
        }
    }
}

impl<'de> Deserialize<'de> for AttackPower {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) if p.is_finite() => Ok(AttackPower::Dbm(p)),
            Raw::Num(p) => Err(serde::de::Error::custom(format!("power {p} is not finite"))),
            Raw::Word(w) if w == "off" => Ok(AttackPower::Off),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a number or \"off\", got {w:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    pub t: f64,
    pub link: LinkId,
    pub attack_power_dbm: AttackPower,
    /// Power rises from `attack_power_dbm` at this rate until the next
    /// event on the same link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_db_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration_s: f64,
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {file}: {source}")]
    Io { file: String, source: std::io::Error },
    #[error("{file}:{line}:{column}: {msg}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("{file}: {msg}")]
    Invalid { file: String, msg: String },
    #[error("{file}: event {index}: {msg}")]
    Event { file: String, index: usize, msg: String },
}

impl Scenario {
    /// Reads and validates a scenario file against the topology.
    pub fn load(path: impl AsRef<Path>, topology: &Topology) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            file: file.clone(),
            source,
        })?;
        Self::parse(&text, &file, topology)
    }

    /// `file` only labels error messages.
    pub fn parse(text: &str, file: &str, topology: &Topology) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            file: file.to_owned(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        scenario.validate(file, topology)?;
        Ok(scenario)
    }

    pub fn validate(&self, file: &str, topology: &Topology) -> Result<(), ScenarioError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(ScenarioError::Invalid {
                file: file.to_owned(),
                msg: format!("duration_s must be positive, got {}", self.duration_s),
            });
        }
        let event_err = |index: usize, msg: String| ScenarioError::Event {
            file: file.to_owned(),
            index,
            msg,
        };
        for (i, ev) in self.events.iter().enumerate() {
            if !(ev.t.is_finite() && ev.t >= 0.0) {
                return Err(event_err(i, format!("t must be a non-negative time, got {}", ev.t)));
            }
            if topology.link(ev.link.as_str()).is_none() {
                return Err(event_err(i, format!("unknown link {}", ev.link)));
            }
            if let Some(rate) = ev.ramp_db_per_s {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(event_err(i, format!("ramp_db_per_s must be positive, got {rate}")));
                }
                if ev.attack_power_dbm == AttackPower::Off {
                    return Err(event_err(i, "a ramp needs a starting power".into()));
                }
            }
            if i > 0 {
                let prev = &self.events[i - 1];
                if ev.t < prev.t {
                    return Err(event_err(i, format!("events out of order: t={} after t={}", ev.t, prev.t)));
                }
                if self.events[..i].iter().any(|p| p.t == ev.t && p.link == ev.link) {
                    return Err(event_err(i, format!("second event for {} at t={}", ev.link, ev.t)));
                }
            }
        }
        Ok(())
    }

    /// Attacker power per link over time.
    pub fn schedule(&self) -> AttackSchedule {
        let mut per_link: BTreeMap<LinkId, Vec<ScenarioEvent>> = BTreeMap::new();
        for ev in &self.events {
            per_link.entry(ev.link.clone()).or_default().push(ev.clone());
        }
        AttackSchedule { per_link }
    }
}

/// Piecewise attacker power, built from a validated scenario.
#[derive(Debug, Clone, Default)]
pub struct AttackSchedule {
    per_link: BTreeMap<LinkId, Vec<ScenarioEvent>>,
}

impl AttackSchedule {
    fn current(&self, link: &str, t: f64) -> Option<&ScenarioEvent> {
        self.per_link.get(link)?.iter().rev().find(|e| e.t <= t)
    }

    /// Power on `link` at `t`, `None` while the attacker is off.
    pub fn power_at(&self, link: &str, t: f64) -> Option<f64> {
        let ev = self.current(link, t)?;
        match ev.attack_power_dbm {
            AttackPower::Off => None,
            AttackPower::Dbm(p) => Some(p + ev.ramp_db_per_s.unwrap_or(0.0) * (t - ev.t)),
        }
    }

    /// Power on `link` at `t` in the form the physics model takes.
    pub fn dbm_at(&self, link: &str, t: f64) -> f64 {
        self.power_at(link, t).unwrap_or(ATTACK_OFF)
    }

    /// Start of the attack under way on `link` at `t`: the earliest event of
    /// the uninterrupted run of powered events leading up to `t`.
    pub fn onset(&self, link: &str, t: f64) -> Option<f64> {
        let events = self.per_link.get(link)?;
        let mut onset = None;
        for ev in events.iter().take_while(|e| e.t <= t) {
            match ev.attack_power_dbm {
                AttackPower::Off => onset = None,
                AttackPower::Dbm(_) => {
                    onset.get_or_insert(ev.t);
                }
            }
        }
        onset
    }
}
