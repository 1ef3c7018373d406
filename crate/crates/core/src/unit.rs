//! Emulated Alice/Bob QKD unit pair.
//!
//! A session is bound to the path it was started on. It initializes for a
//! fixed time, then distils one final-key block per key interval at the
//! sampled SKR. A sample with QBER at or above the abort threshold aborts the
//! session; losing the path (no circuit, or a different one) drops it to
//! `Idle`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::ids::PathId;
use crate::physics::{self, ChannelParams, Jitter, QuantumSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitConfig {
    /// Session initialization time, seconds.
    pub init_time_s: f64,
    /// Uniform relative jitter on each initialization, e.g. 0.04 for ±4%.
    pub init_jitter_frac: f64,
    /// Final-key distillation cadence, seconds.
    pub key_interval_s: f64,
    pub jitter: Jitter,
}

impl Default for UnitConfig {
    fn default() -> Self {
        Self {
            init_time_s: 120.0,
            init_jitter_frac: 0.04,
            key_interval_s: 60.0,
            jitter: Jitter::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SessionState {
    Idle,
    Initializing { remaining: f64 },
    Generating,
    Aborted,
}

impl SessionState {
    pub fn tag(&self) -> StateTag {
        match self {
            SessionState::Idle => StateTag::Idle,
            SessionState::Initializing { .. } => StateTag::Initializing,
            SessionState::Generating => StateTag::Generating,
            SessionState::Aborted => StateTag::Aborted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateTag {
    Idle,
    Initializing,
    Generating,
    Aborted,
}

/// What the monitor sees when it polls the units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorReading {
    pub timestamp: f64,
    pub skr_bps: f64,
    pub qber: f64,
    pub last_key_size_bits: u64,
    pub state: StateTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyBlock {
    pub sequence_no: u64,
    pub size_bits: u64,
    pub produced_at: f64,
}

/// The channel the units currently sit on.
#[derive(Debug, Clone, Copy)]
pub struct ActiveChannel<'a> {
    pub path: &'a PathId,
    pub params: &'a ChannelParams,
}

/// Audit trail entry.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitEvent {
    Transition {
        at: f64,
        from: StateTag,
        to: StateTag,
    },
    Sample {
        at: f64,
        sample: QuantumSample,
        abort_qber: f64,
    },
    Key(KeyBlock),
}

#[derive(Debug, Clone)]
struct Session {
    path: PathId,
    params: ChannelParams,
    abort_qber: f64,
    started_at: f64,
    ready_at: f64,
    next_key_at: f64,
    next_seq: u64,
    last_sample: Option<QuantumSample>,
    last_key_size: u64,
}

#[derive(Debug, Clone)]
pub struct QkdUnit {
    config: UnitConfig,
    clock: f64,
    state: SessionState,
    session: Option<Session>,
    trace: Vec<UnitEvent>,
}

impl QkdUnit {
    pub fn new(config: UnitConfig, now: f64) -> Self {
        Self {
            config,
            clock: now,
            state: SessionState::Idle,
            session: None,
            trace: Vec::new(),
        }
    }

    pub fn config(&self) -> &UnitConfig {
        &self.config
    }

    pub fn state(&self) -> SessionState {
        match (self.state, &self.session) {
            (SessionState::Initializing { .. }, Some(s)) => SessionState::Initializing {
                remaining: (s.ready_at - self.clock).max(0.0),
            },
            (state, _) => state,
        }
    }

    /// Path of the current session, if any.
    pub fn session_path(&self) -> Option<&PathId> {
        self.session.as_ref().map(|s| &s.path)
    }

    pub fn trace(&self) -> &[UnitEvent] {
        &self.trace
    }

    /// Initialization time drawn for the current session.
    pub fn session_init_duration(&self) -> Option<f64> {
        self.session.as_ref().map(|s| s.ready_at - s.started_at)
    }

    fn transition(&mut self, at: f64, to: SessionState) {
        let from = self.state.tag();
        self.state = to;
        if from != to.tag() {
            self.trace.push(UnitEvent::Transition {
                at,
                from,
                to: to.tag(),
            });
        }
    }

    fn drop_to_idle(&mut self, at: f64) {
        self.session = None;
        self.transition(at, SessionState::Idle);
    }

    /// Starts a session on `path`. Any session still bound to a previous
    /// path is dropped first.
    pub fn start_session<R: Rng + ?Sized>(
        &mut self,
        path: PathId,
        channel: ChannelParams,
        now: f64,
        rng: &mut R,
    ) {
        let now = now.max(self.clock);
        if self.state != SessionState::Idle {
            self.drop_to_idle(now);
        }
        let j = self.config.init_jitter_frac;
        let scale = if j > 0.0 {
            1.0 + rng.random_range(-j..=j)
        } else {
            1.0
        };
        let ready_at = now + self.config.init_time_s * scale;
        self.session = Some(Session {
            path,
            params: channel,
            abort_qber: channel.abort_qber(),
            started_at: now,
            ready_at,
            next_key_at: f64::INFINITY,
            next_seq: 0,
            last_sample: None,
            last_key_size: 0,
        });
        self.transition(
            now,
            SessionState::Initializing {
                remaining: ready_at - now,
            },
        );
    }

    /// Advances the units by `dt` seconds on the given channel.
    pub fn tick<R: Rng + ?Sized>(
        &mut self,
        dt: f64,
        active: Option<ActiveChannel<'_>>,
        attack_power_dbm: f64,
        rng: &mut R,
    ) -> Vec<KeyBlock> {
        debug_assert!(dt > 0.0);
        let start = self.clock;
        let end = start + dt;
        let mut blocks = Vec::new();

        let on_session_path = match (&self.session, active) {
            (Some(s), Some(a)) => &s.path == a.path,
            _ => false,
        };
        if !on_session_path {
            if self.state != SessionState::Idle || self.session.is_some() {
                self.drop_to_idle(start);
            }
            self.clock = end;
            return blocks;
        }

        if let SessionState::Initializing { .. } = self.state {
            let ready_at = self.session.as_ref().map(|s| s.ready_at).unwrap_or(start);
            if ready_at <= end {
                if let Some(s) = self.session.as_mut() {
                    s.next_key_at = ready_at + self.config.key_interval_s;
                }
                self.transition(ready_at, SessionState::Generating);
            }
        }

        while self.state == SessionState::Generating {
            let Some(s) = self.session.as_mut() else { break };
            if s.next_key_at > end {
                break;
            }
            let at = s.next_key_at;
            let sample = physics::sample(&s.params, attack_power_dbm, &self.config.jitter, rng);
            s.last_sample = Some(sample);
            s.next_key_at += self.config.key_interval_s;
            let abort_qber = s.abort_qber;
            self.trace.push(UnitEvent::Sample {
                at,
                sample,
                abort_qber,
            });
            if sample.qber >= abort_qber {
                s.last_key_size = 0;
                self.transition(at, SessionState::Aborted);
                break;
            }
            let size = (sample.skr_bps * self.config.key_interval_s).round() as u64;
            s.last_key_size = size;
            if size > 0 {
                let block = KeyBlock {
                    sequence_no: s.next_seq,
                    size_bits: size,
                    produced_at: at,
                };
                s.next_seq += 1;
                self.trace.push(UnitEvent::Key(block));
                blocks.push(block);
            }
        }

        self.clock = end;
        blocks
    }

    /// Side-effect-free read-out for the monitor.
    pub fn read_monitor(&self, now: f64) -> MonitorReading {
        let state = self.state.tag();
        let last = self.session.as_ref().and_then(|s| s.last_sample);
        let (skr_bps, last_key_size_bits) = match (state, &self.session) {
            (StateTag::Generating, Some(s)) => (last.map_or(0.0, |l| l.skr_bps), s.last_key_size),
            _ => (0.0, 0),
        };
        let qber = match state {
            StateTag::Generating | StateTag::Aborted => last.map_or(0.0, |l| l.qber),
            _ => 0.0,
        };
        MonitorReading {
            timestamp: now,
            skr_bps,
            qber,
            last_key_size_bits,
            state,
        }
    }
}

// --- Monitor channel over a socket -----------------------------------------

/// Request on the monitor channel, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MonitorRequest {
    ReadMonitor,
    StartSession { path: PathId },
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("monitor channel I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("monitor channel encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot start session: {0}")]
    Rejected(String),
}

/// Operations the monitor needs from the units, over whatever transport.
pub trait QkdClient {
    fn read_monitor(&mut self) -> Result<MonitorReading, MonitorError>;

    /// Restarts key generation on the path that is currently switched in.
    fn start_session(&mut self, path: &PathId) -> Result<(), MonitorError>;
}

/// Resolves a path into its channel and checks that its circuit is up.
pub type ChannelResolver = dyn Fn(&PathId) -> Result<ChannelParams, String> + Send + Sync;

/// Serves the monitor channel for a shared unit.
pub struct MonitorServer {
    unit: Arc<Mutex<QkdUnit>>,
    clock: Arc<dyn Clock>,
    resolver: Arc<ChannelResolver>,
    rng: Arc<Mutex<rand_chacha::ChaCha8Rng>>,
}

impl MonitorServer {
    pub fn new(
        unit: Arc<Mutex<QkdUnit>>,
        clock: Arc<dyn Clock>,
        resolver: Arc<ChannelResolver>,
        seed: u64,
    ) -> Self {
        use rand::SeedableRng;
        Self {
            unit,
            clock,
            resolver,
            rng: Arc::new(Mutex::new(rand_chacha::ChaCha8Rng::seed_from_u64(seed))),
        }
    }

    /// Answers one request line. Errors come back as `{"error": ...}`.
    pub fn handle_line(&self, line: &str) -> String {
        let reply = match serde_json::from_str::<MonitorRequest>(line) {
            Ok(MonitorRequest::ReadMonitor) => {
                let unit = self.unit.lock().unwrap_or_else(|e| e.into_inner());
                serde_json::to_value(unit.read_monitor(self.clock.now()))
                    .unwrap_or_else(|e| serde_json::json!({ "error": e.to_string() }))
            }
            Ok(MonitorRequest::StartSession { path }) => match (self.resolver)(&path) {
                Ok(params) => {
                    let mut unit = self.unit.lock().unwrap_or_else(|e| e.into_inner());
                    let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
                    unit.start_session(path, params, self.clock.now(), &mut *rng);
                    serde_json::json!({ "ok": true })
                }
                Err(e) => serde_json::json!({ "error": e }),
            },
            Err(e) => serde_json::json!({ "error": format!("bad request: {e}") }),
        };
        reply.to_string()
    }

    /// Accepts connections until the listener fails, one thread each.
    pub fn serve(self: Arc<Self>, listener: TcpListener) -> std::io::Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let server = Arc::clone(&self);
            thread::spawn(move || {
                if let Err(e) = server.serve_connection(stream) {
                    log::debug!("monitor connection closed: {e}");
                }
            });
        }
        Ok(())
    }

    fn serve_connection(&self, stream: TcpStream) -> std::io::Result<()> {
        let mut writer = stream.try_clone()?;
        for line in BufReader::new(stream).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writer.write_all(self.handle_line(&line).as_bytes())?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Monitor client speaking the socket protocol.
pub struct SocketQkdClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl SocketQkdClient {
    pub fn connect(addr: impl std::net::ToSocketAddrs) -> Result<Self, MonitorError> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    fn call(&mut self, req: &MonitorRequest) -> Result<serde_json::Value, MonitorError> {
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(MonitorError::Io(std::io::ErrorKind::UnexpectedEof.into()));
        }
        let value: serde_json::Value = serde_json::from_str(&reply)?;
        if let Some(err) = value.get("error") {
            return Err(MonitorError::Rejected(err.to_string()));
        }
        Ok(value)
    }
}

impl QkdClient for SocketQkdClient {
    fn read_monitor(&mut self) -> Result<MonitorReading, MonitorError> {
        Ok(serde_json::from_value(self.call(&MonitorRequest::ReadMonitor)?)?)
    }

    fn start_session(&mut self, path: &PathId) -> Result<(), MonitorError> {
        self.call(&MonitorRequest::StartSession { path: path.clone() })
            .map(|_| ())
    }
}
