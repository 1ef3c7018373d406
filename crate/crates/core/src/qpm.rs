//! Quantum Parameters Monitor: the mitigation loop.
//!
//! Every poll period the monitor reads the QKD units. A link has failed when
//! the QBER exceeds the configured threshold, or when the last
//! `zero_key_debounce` readings all report a zero final-key size while the
//! units claim to be generating (or have aborted). Detection is suppressed
//! for `init_grace_s` after each path change.
//!
//! On failure the active path is marked failed for the rest of the run, the
//! first still-available path in list order is requested from the
//! controller, and the units are told to restart key generation. Once they
//! are generating again, monitoring resumes. With no path left the monitor
//! raises an alarm and keeps polling without acting.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::controller::{ControllerClient, Outcome, ReconfigRequest};
use crate::ids::PathId;
use crate::unit::{MonitorError, MonitorReading, QkdClient, StateTag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpmConfig {
    pub poll_period_s: f64,
    pub qber_threshold: f64,
    /// Consecutive zero-key readings that count as a failure.
    pub zero_key_debounce: usize,
    /// Detection is suppressed this long after a path change.
    pub init_grace_s: f64,
    /// Extra attempts on the same path after a failed reconfiguration.
    pub controller_retries: u32,
    /// Time the monitor spends deciding before it calls the controller.
    pub decision_latency_s: f64,
}

impl Default for QpmConfig {
    fn default() -> Self {
        Self {
            poll_period_s: 60.0,
            qber_threshold: 0.08,
            zero_key_debounce: 2,
            init_grace_s: 200.0,
            controller_retries: 0,
            decision_latency_s: 0.001,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("poll_period_s must be positive")]
    PollPeriod,
    #[error("qber_threshold must lie in (0, 0.5)")]
    Threshold,
    #[error("zero_key_debounce must be at least 1")]
    Debounce,
    #[error("init_grace_s ({grace}) is shorter than the unit init time ({init})")]
    Grace { grace: f64, init: f64 },
}

impl QpmConfig {
    /// Checks the config against the longest initialization the units can
    /// take.
    pub fn validate(&self, max_init_time_s: f64) -> Result<(), ConfigError> {
        if self.poll_period_s.is_nan() || self.poll_period_s <= 0.0 {
            return Err(ConfigError::PollPeriod);
        }
        if !(self.qber_threshold > 0.0 && self.qber_threshold < 0.5) {
            return Err(ConfigError::Threshold);
        }
        if self.zero_key_debounce == 0 {
            return Err(ConfigError::Debounce);
        }
        if self.init_grace_s < max_init_time_s {
            return Err(ConfigError::Grace {
                grace: self.init_grace_s,
                init: max_init_time_s,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PathState {
    Available,
    Active,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStatus {
    pub path: PathId,
    pub state: PathState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Detected,
    ReconfigSent,
    ReconfigDone,
    ReinitDone,
    Exhausted,
}

/// One line of the monitor's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationEvent {
    pub t: f64,
    pub kind: EventKind,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xids: Option<Vec<u64>>,
    pub detail: String,
}

impl MitigationEvent {
    /// A reconfiguration the controller reported as successful.
    pub fn is_successful_reconfig(&self) -> bool {
        self.kind == EventKind::ReconfigDone && self.detail.starts_with("SUCCESS")
    }
}

/// Failure predicate applied to each poll.
///
/// `history` holds earlier readings, oldest first; the zero-key rule looks
/// at `reading` plus the most recent `zero_key_debounce - 1` of them.
pub fn detect_failure(
    reading: &MonitorReading,
    history: &[MonitorReading],
    config: &QpmConfig,
    since_path_change: f64,
) -> bool {
    if since_path_change <= config.init_grace_s {
        return false;
    }
    if reading.qber > config.qber_threshold {
        return true;
    }
    let needed = config.zero_key_debounce.max(1);
    if history.len() + 1 < needed {
        return false;
    }
    let zero_key = |r: &MonitorReading| {
        r.last_key_size_bits == 0 && matches!(r.state, StateTag::Generating | StateTag::Aborted)
    };
    zero_key(reading) && history.iter().rev().take(needed - 1).all(zero_key)
}

/// First available path in list order.
pub fn select_next_path(statuses: &[PathStatus]) -> Option<PathId> {
    statuses
        .iter()
        .find(|s| s.state == PathState::Available)
        .map(|s| s.path.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QpmPhase {
    /// Nothing set up yet.
    Startup,
    /// Path switched, waiting for the units to generate again.
    AwaitingReinit,
    /// Generating, detection still suppressed.
    Grace,
    Monitoring,
    /// Every path has failed; polling continues with no action.
    Exhausted,
}

impl QpmPhase {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpmPhase::Startup => "STARTUP",
            QpmPhase::AwaitingReinit => "AWAITING_REINIT",
            QpmPhase::Grace => "GRACE",
            QpmPhase::Monitoring => "MONITORING",
            QpmPhase::Exhausted => "EXHAUSTED",
        }
    }
}

#[derive(Debug, Error)]
pub enum QpmError {
    #[error("monitor read failed: {0}")]
    Monitor(#[from] MonitorError),
}

pub struct Qpm {
    config: QpmConfig,
    statuses: Vec<PathStatus>,
    phase: QpmPhase,
    active: Option<PathId>,
    history: VecDeque<MonitorReading>,
    last_path_change: f64,
    next_poll: f64,
    request_seq: u64,
    events: Vec<MitigationEvent>,
}

impl Qpm {
    /// `paths` in selection order.
    pub fn new(config: QpmConfig, paths: &[PathId], start: f64) -> Self {
        Self {
            config,
            statuses: paths
                .iter()
                .map(|p| PathStatus {
                    path: p.clone(),
                    state: PathState::Available,
                })
                .collect(),
            phase: QpmPhase::Startup,
            active: None,
            history: VecDeque::new(),
            last_path_change: start,
            next_poll: start,
            request_seq: 0,
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &QpmConfig {
        &self.config
    }

    pub fn phase(&self) -> QpmPhase {
        self.phase
    }

    pub fn statuses(&self) -> &[PathStatus] {
        &self.statuses
    }

    pub fn active_path(&self) -> Option<&PathId> {
        self.active.as_ref()
    }

    pub fn events(&self) -> &[MitigationEvent] {
        &self.events
    }

    /// Events emitted since the last call.
    pub fn drain_events(&mut self, from: &mut usize) -> &[MitigationEvent] {
        let start = (*from).min(self.events.len());
        *from = self.events.len();
        &self.events[start..]
    }

    fn emit(&mut self, t: f64, kind: EventKind, path: Option<&PathId>, xids: Option<Vec<u64>>, detail: String) {
        self.events.push(MitigationEvent {
            t,
            kind,
            path: path.map(|p| p.to_string()).unwrap_or_default(),
            xids,
            detail,
        });
    }

    fn set_state(&mut self, path: &PathId, state: PathState) {
        if let Some(s) = self.statuses.iter_mut().find(|s| &s.path == path) {
            s.state = state;
        }
    }

    /// Advances the loop to `clock.now()`.
    ///
    /// Call at least once per poll period; finer calls let the monitor see
    /// the end of re-initialization sooner. Returns the reading taken when a
    /// poll fell due.
    pub fn step(
        &mut self,
        clock: &dyn Clock,
        qkd: &mut dyn QkdClient,
        ctl: &mut dyn ControllerClient,
    ) -> Result<Option<MonitorReading>, QpmError> {
        if self.phase == QpmPhase::Startup {
            self.activate_next(None, clock, qkd, ctl);
        }

        if self.phase == QpmPhase::AwaitingReinit {
            let reading = qkd.read_monitor()?;
            // An abort also ends initialization; detection then takes over.
            let detail = match reading.state {
                StateTag::Generating => Some("key generation running"),
                StateTag::Aborted => Some("session aborted right after initialization"),
                _ => None,
            };
            if let Some(detail) = detail {
                let path = self.active.clone();
                self.emit(reading.timestamp, EventKind::ReinitDone, path.as_ref(), None, detail.into());
                self.phase = QpmPhase::Grace;
            }
        }

        let now = clock.now();
        if now + 1e-9 < self.next_poll {
            return Ok(None);
        }
        while self.next_poll <= now + 1e-9 {
            self.next_poll += self.config.poll_period_s;
        }

        let reading = qkd.read_monitor()?;
        let since = reading.timestamp - self.last_path_change;
        if self.phase == QpmPhase::Grace && since > self.config.init_grace_s {
            self.phase = QpmPhase::Monitoring;
        }
        if self.phase == QpmPhase::Monitoring {
            let history: Vec<_> = self.history.iter().copied().collect();
            if detect_failure(&reading, &history, &self.config, since) {
                self.mitigate(&reading, clock, qkd, ctl);
            } else {
                self.history.push_back(reading);
                while self.history.len() > self.config.zero_key_debounce {
                    self.history.pop_front();
                }
            }
        }
        Ok(Some(reading))
    }

    fn mitigate(
        &mut self,
        reading: &MonitorReading,
        clock: &dyn Clock,
        qkd: &mut dyn QkdClient,
        ctl: &mut dyn ControllerClient,
    ) {
        let Some(failed) = self.active.take() else {
            return;
        };
        self.set_state(&failed, PathState::Failed);
        let why = if reading.qber > self.config.qber_threshold {
            format!("qber {:.4} above threshold {}", reading.qber, self.config.qber_threshold)
        } else {
            format!(
                "final key size 0 for {} polls (state {:?})",
                self.config.zero_key_debounce, reading.state
            )
        };
        self.emit(reading.timestamp, EventKind::Detected, Some(&failed), None, why);
        self.activate_next(Some(failed), clock, qkd, ctl);
    }

    /// Moves the quantum channel to the next available path, falling
    /// through the list when the controller or the units refuse.
    fn activate_next(
        &mut self,
        mut tear_down: Option<PathId>,
        clock: &dyn Clock,
        qkd: &mut dyn QkdClient,
        ctl: &mut dyn ControllerClient,
    ) {
        self.history.clear();
        loop {
            let Some(next) = select_next_path(&self.statuses) else {
                let path = tear_down.clone();
                self.emit(
                    clock.now(),
                    EventKind::Exhausted,
                    path.as_ref(),
                    None,
                    "no available path left; alarm raised".into(),
                );
                self.phase = QpmPhase::Exhausted;
                return;
            };
            clock.advance(self.config.decision_latency_s);

            let mut installed = false;
            for _attempt in 0..=self.config.controller_retries {
                self.request_seq += 1;
                let req = ReconfigRequest {
                    request_id: format!("qpm-{}", self.request_seq),
                    tear_down: tear_down.clone(),
                    set_up: next.clone(),
                };
                let detail = match &tear_down {
                    Some(old) => format!("{} -> {}", old, next),
                    None => format!("initial path {next}"),
                };
                self.emit(clock.now(), EventKind::ReconfigSent, Some(&next), None, detail);
                match ctl.reconfigure(&req) {
                    Ok(resp) if resp.outcome == Outcome::Success => {
                        self.emit(
                            clock.now(),
                            EventKind::ReconfigDone,
                            Some(&next),
                            Some(resp.xids()),
                            format!("SUCCESS in {:.3} ms", resp.duration_ms),
                        );
                        installed = true;
                        break;
                    }
                    Ok(resp) => {
                        self.emit(
                            clock.now(),
                            EventKind::ReconfigDone,
                            Some(&next),
                            Some(resp.xids()),
                            "FAILED".into(),
                        );
                    }
                    Err(e) => {
                        self.emit(clock.now(), EventKind::ReconfigDone, Some(&next), None, format!("FAILED: {e}"));
                    }
                }
            }
            if !installed {
                self.set_state(&next, PathState::Failed);
                continue;
            }

            // The old path is gone from the fabric now.
            tear_down = Some(next.clone());
            self.last_path_change = clock.now();
            match qkd.start_session(&next) {
                Ok(()) => {
                    self.set_state(&next, PathState::Active);
                    self.active = Some(next);
                    self.phase = QpmPhase::AwaitingReinit;
                    return;
                }
                Err(e) => {
                    log::warn!("units refused to start on {next}: {e}");
                    self.set_state(&next, PathState::Failed);
                }
            }
        }
    }

    /// Runs the loop in real time until `stop` is set, stepping every
    /// `tick`. Events are handed to `sink` as they happen.
    pub fn run_loop(
        &mut self,
        clock: &dyn Clock,
        qkd: &mut dyn QkdClient,
        ctl: &mut dyn ControllerClient,
        stop: &AtomicBool,
        tick: Duration,
        mut sink: impl FnMut(&MitigationEvent),
    ) -> Result<(), QpmError> {
        let mut seen = 0;
        while !stop.load(Ordering::Relaxed) {
            self.step(clock, qkd, ctl)?;
            for e in self.drain_events(&mut seen) {
                sink(e);
            }
            std::thread::sleep(tick);
        }
        Ok(())
    }
}
