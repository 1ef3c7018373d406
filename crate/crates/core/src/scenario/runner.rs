//! Drives a whole scenario under the simulated clock.
//!
//! Each step of `step_s` seconds sets the clock, lets the monitor act, then
//! advances the QKD units on whatever circuit the switches have committed.
//! The units see the attack power of the link behind that circuit.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{report, AttackSchedule, Scenario};
use crate::clock::{Clock, SimClock};
use crate::controller::{Controller, ControllerLogRecord, DirectClient, LocalFabric};
use crate::ids::{LinkId, PathId};
use crate::qpm::{ConfigError, EventKind, MitigationEvent, Qpm, QpmConfig, QpmError, QpmPhase};
use crate::topology::{resolve_active_path, Topology};
use crate::unit::{ActiveChannel, MonitorError, MonitorReading, QkdClient, QkdUnit, UnitConfig};

pub const METRICS_CSV: &str = "metrics.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const QPM_LOG: &str = "qpm_log.jsonl";
pub const CONTROLLER_LOG: &str = "controller_log.jsonl";
pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub seed: u64,
    /// Simulation step, seconds.
    pub step_s: f64,
    pub qpm: QpmConfig,
    pub unit: UnitConfig,
    /// Round trip per controller-switch message.
    pub switch_rtt_s: f64,
    /// Round trip of one northbound request.
    pub northbound_latency_s: f64,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            step_s: 1.0,
            qpm: QpmConfig::default(),
            unit: UnitConfig::default(),
            switch_rtt_s: 0.002,
            northbound_latency_s: 0.001,
        }
    }
}

/// One row of metrics.csv, taken at each poll.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub t: f64,
    /// Path whose circuit the switches have committed.
    pub active_path: Option<PathId>,
    pub skr_bps: f64,
    pub qber: f64,
    /// Attacker power per topology link, in link order.
    pub attack_dbm: Vec<Option<f64>>,
    pub qpm_state: QpmPhase,
}

/// Durations of one mitigation episode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimingBreakdown {
    pub episode: u32,
    /// From attack onset (or the path's activation, if later) to detection.
    pub detect_s: f64,
    /// From detection to the controller's success report.
    pub controller_s: f64,
    /// From the success report to the units generating again.
    pub reinit_s: f64,
    pub total_s: f64,
}

#[derive(Debug)]
pub struct RunResult {
    pub links: Vec<LinkId>,
    pub metrics: Vec<MetricsRecord>,
    pub events: Vec<MitigationEvent>,
    pub controller_log: Vec<ControllerLogRecord>,
    pub timing: Vec<TimingBreakdown>,
    pub final_path: Option<PathId>,
    pub exhausted: bool,
    /// Start-up initialization time as the monitor saw it.
    pub first_init_s: Option<f64>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("monitor configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Qpm(#[from] QpmError),
    #[error("step_s must be positive")]
    Step,
}

/// In-process monitor channel to the simulated units.
struct SimUnits<'a> {
    unit: &'a mut QkdUnit,
    rng: &'a mut ChaCha8Rng,
    clock: &'a SimClock,
    topology: &'a Topology,
    controller: &'a Mutex<Controller<LocalFabric>>,
}

impl QkdClient for SimUnits<'_> {
    fn read_monitor(&mut self) -> Result<MonitorReading, MonitorError> {
        Ok(self.unit.read_monitor(self.clock.now()))
    }

    fn start_session(&mut self, path: &PathId) -> Result<(), MonitorError> {
        let tables = lock(self.controller).southbound().tables();
        if resolve_active_path(self.topology, &tables).as_ref() != Some(path) {
            return Err(MonitorError::Rejected(format!("path {path} is not switched in")));
        }
        let link = self
            .topology
            .link_of_path(path.as_str())
            .ok_or_else(|| MonitorError::Rejected(format!("unknown path {path}")))?;
        self.unit
            .start_session(path.clone(), link.channel, self.clock.now(), &mut *self.rng);
        Ok(())
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Runs `scenario` to completion.
pub fn simulate(topology: Arc<Topology>, scenario: &Scenario, config: &RunConfig) -> Result<RunResult, RunError> {
    if config.step_s.is_nan() || config.step_s <= 0.0 {
        return Err(RunError::Step);
    }
    let u = &config.unit;
    config
        .qpm
        .validate(u.init_time_s * (1.0 + u.init_jitter_frac))?;

    let clock = SimClock::new(0.0);
    let shared_clock: Arc<dyn Clock> = Arc::new(clock.clone());
    let fabric = LocalFabric::from_topology(&topology, Arc::clone(&shared_clock), config.switch_rtt_s);
    let controller = Arc::new(Mutex::new(Controller::new(
        Arc::clone(&topology),
        fabric,
        Arc::clone(&shared_clock),
    )));
    let mut client = DirectClient::new(
        Arc::clone(&controller),
        Arc::clone(&shared_clock),
        config.northbound_latency_s,
    );
    let mut unit = QkdUnit::new(config.unit, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut qpm = Qpm::new(config.qpm, &topology.path_ids(), 0.0);
    let schedule = scenario.schedule();
    let links: Vec<LinkId> = topology.links.iter().map(|l| l.id.clone()).collect();

    let steps = (scenario.duration_s / config.step_s).ceil() as u64;
    let mut metrics = Vec::new();
    for i in 0..steps {
        let t = i as f64 * config.step_s;
        clock.advance_to(t);

        let polled = {
            let mut units = SimUnits {
                unit: &mut unit,
                rng: &mut rng,
                clock: &clock,
                topology: &topology,
                controller: &controller,
            };
            qpm.step(&clock, &mut units, &mut client)?
        };

        let tables = lock(&controller).southbound().tables();
        let active = resolve_active_path(&topology, &tables);
        if let Some(reading) = polled {
            metrics.push(MetricsRecord {
                t,
                active_path: active.clone(),
                skr_bps: reading.skr_bps,
                qber: reading.qber,
                attack_dbm: links.iter().map(|l| schedule.power_at(l.as_str(), t)).collect(),
                qpm_state: qpm.phase(),
            });
        }

        let link = active.as_ref().and_then(|p| topology.link_of_path(p.as_str()));
        let power = link.map_or(f64::NEG_INFINITY, |l| schedule.dbm_at(l.id.as_str(), t));
        let channel = active.as_ref().zip(link).map(|(path, l)| ActiveChannel {
            path,
            params: &l.channel,
        });
        unit.tick(config.step_s, channel, power, &mut rng);
    }

    let events = qpm.events().to_vec();
    let timing = episodes(&events, &schedule, &topology);
    let controller_log = lock(&controller).take_log();
    let final_path = resolve_active_path(&topology, &lock(&controller).southbound().tables());
    Ok(RunResult {
        links,
        exhausted: qpm.phase() == QpmPhase::Exhausted,
        first_init_s: first_init_duration(&events),
        metrics,
        events,
        controller_log,
        timing,
        final_path,
    })
}

/// Time from the first successful reconfiguration to the first
/// `REINIT_DONE` after it.
pub fn first_init_duration(events: &[MitigationEvent]) -> Option<f64> {
    let start = events.iter().position(MitigationEvent::is_successful_reconfig)?;
    let done = events[start..].iter().find(|e| e.kind == EventKind::ReinitDone)?;
    Some(done.t - events[start].t)
}

/// Splits the monitor's events into timed episodes. An episode that ends in
/// exhaustion has no re-initialization and is left out.
fn episodes(events: &[MitigationEvent], schedule: &AttackSchedule, topology: &Topology) -> Vec<TimingBreakdown> {
    struct Open {
        detected: f64,
        start: f64,
        reconfigured: Option<f64>,
    }
    let mut activated: std::collections::BTreeMap<&str, f64> = Default::default();
    let mut open: Option<Open> = None;
    let mut out = Vec::new();
    for e in events {
        match e.kind {
            EventKind::Detected => {
                let since = activated.get(e.path.as_str()).copied().unwrap_or(0.0);
                let onset = topology
                    .link_of_path(&e.path)
                    .and_then(|l| schedule.onset(l.id.as_str(), e.t));
                open = Some(Open {
                    detected: e.t,
                    start: onset.map_or(since, |o| o.max(since)),
                    reconfigured: None,
                });
            }
            EventKind::ReconfigDone if e.is_successful_reconfig() => {
                activated.insert(&e.path, e.t);
                if let Some(o) = open.as_mut() {
                    o.reconfigured.get_or_insert(e.t);
                }
            }
            EventKind::ReinitDone => {
                if let Some(Open {
                    detected,
                    start,
                    reconfigured: Some(rc),
                }) = open.take()
                {
                    let detect_s = detected - start;
                    let controller_s = rc - detected;
                    let reinit_s = e.t - rc;
                    out.push(TimingBreakdown {
                        episode: out.len() as u32 + 1,
                        detect_s,
                        controller_s,
                        reinit_s,
                        total_s: detect_s + controller_s + reinit_s,
                    });
                }
            }
            EventKind::Exhausted => open = None,
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    /// Leave out the wall-clock header line of the summary.
    pub deterministic: bool,
    /// Where to write the monitor's event log instead of the output
    /// directory.
    pub qpm_log: Option<PathBuf>,
}

fn fmt_power(p: Option<f64>) -> String {
    match p {
        None => "off".into(),
        Some(p) => format!("{p:.2}"),
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes every output file of a run into `out_dir`.
pub fn write_outputs(out_dir: &Path, result: &RunResult, options: &OutputOptions) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;

    let mut w = csv::Writer::from_path(out_dir.join(METRICS_CSV))?;
    let mut header = vec!["t".to_owned(), "active_path".into(), "skr_bps".into(), "qber".into()];
    header.extend(result.links.iter().map(|l| format!("attack_{l}_dbm")));
    header.push("qpm_state".into());
    w.write_record(&header)?;
    for m in &result.metrics {
        let mut row = vec![
            format!("{}", m.t),
            m.active_path.as_ref().map_or("none".into(), |p| p.to_string()),
            format!("{:.3}", m.skr_bps),
            format!("{:.6}", m.qber),
        ];
        row.extend(m.attack_dbm.iter().map(|p| fmt_power(*p)));
        row.push(m.qpm_state.as_str().into());
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join(TIMING_CSV))?;
    if result.timing.is_empty() {
        w.write_record(["episode", "detect_s", "controller_s", "reinit_s", "total_s"])?;
    }
    for row in &result.timing {
        w.serialize(row)?;
    }
    w.flush()?;

    let qpm_log = options.qpm_log.clone().unwrap_or_else(|| out_dir.join(QPM_LOG));
    write_jsonl(&qpm_log, &result.events)?;
    write_jsonl(&out_dir.join(CONTROLLER_LOG), &result.controller_log)?;

    let summary = report::summarize(out_dir, Some(&qpm_log), None).map_err(io::Error::other)?;
    let mut text = String::new();
    if !options.deterministic {
        text.push_str(&format!("# generated {}\n", chrono::Local::now().to_rfc3339()));
    }
    text.push_str(&summary.render());
    fs::write(out_dir.join(SUMMARY_TXT), text)
}
