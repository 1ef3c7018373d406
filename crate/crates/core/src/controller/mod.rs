//! SDN controller: turns a path change into per-switch flow-mods and commits
//! them with barriers.
//!
//! Every flow-mod and barrier gets a fresh transaction id from one
//! controller-wide counter. A reconfiguration stages deletes for the old path
//! and adds for the new one, then sends one barrier per affected switch with
//! the Alice-side switch last. Since the QKD unit ports are the only ports
//! paths share, the old circuit is broken before the new one can close, and
//! no instant shows two complete paths.
//!
//! If any flow-mod is refused or a switch drops out, the controller undoes
//! what it has staged or committed: it sends the inverse of every
//! acknowledged flow-mod and a barrier to each switch it touched, so no
//! staged residue stays behind.

mod northbound;
mod southbound;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::ids::{PathId, SwitchId};
use crate::switch::{AckStatus, FlowMod, FlowModCommand, WireMessage};
use crate::topology::{PathSpec, Topology};

pub use northbound::{router, serve, ClientError, ControllerClient, DirectClient, HttpControllerClient, QUEUE_DEPTH};
pub use southbound::{LocalFabric, Southbound, SouthboundError, TcpSouthbound};

/// Issues transaction ids: 1, 2, 3, ... for the controller's lifetime.
#[derive(Debug, Default)]
pub struct XidAllocator {
    last: AtomicU64,
}

impl XidAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_xid(&self) -> u64 {
        self.last.fetch_add(1, Ordering::SeqCst) + 1
    }
}

/// Northbound reconfiguration request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigRequest {
    pub request_id: String,
    #[serde(default)]
    pub tear_down: Option<PathId>,
    pub set_up: PathId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxStatus {
    Pending,
    Acked,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub xid: u64,
    pub switch: SwitchId,
    pub flow_mod: FlowMod,
    pub status: TxStatus,
    /// Set on flow-mods sent to undo a failed reconfiguration.
    pub compensating: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarrierRecord {
    pub xid: u64,
    pub switch: SwitchId,
    pub committed_xids: Vec<u64>,
    pub replied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconfigReport {
    pub request_id: String,
    pub transactions: Vec<Transaction>,
    pub barriers: Vec<BarrierRecord>,
    pub started_at: f64,
    pub completed_at: f64,
    pub outcome: Outcome,
    /// The flow-mod whose refusal (or lost switch) failed the request.
    pub failed_xid: Option<u64>,
    pub detail: Option<String>,
}

impl ReconfigReport {
    pub fn duration_ms(&self) -> f64 {
        (self.completed_at - self.started_at) * 1000.0
    }

    pub fn to_response(&self) -> ReconfigResponse {
        ReconfigResponse {
            request_id: self.request_id.clone(),
            outcome: self.outcome,
            transactions: self
                .transactions
                .iter()
                .map(|t| TransactionSummary {
                    xid: t.xid,
                    switch: t.switch.clone(),
                    status: t.status,
                })
                .collect(),
            duration_ms: self.duration_ms(),
        }
    }
}

/// Northbound response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigResponse {
    pub request_id: String,
    pub outcome: Outcome,
    pub transactions: Vec<TransactionSummary>,
    pub duration_ms: f64,
}

impl ReconfigResponse {
    pub fn xids(&self) -> Vec<u64> {
        self.transactions.iter().map(|t| t.xid).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionSummary {
    pub xid: u64,
    pub switch: SwitchId,
    pub status: TxStatus,
}

/// Per-path status for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathInfo {
    pub id: PathId,
    pub link: crate::ids::LinkId,
    pub status: PathInstallState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PathInstallState {
    Active,
    Inactive,
}

/// One line of the controller log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ControllerLogRecord {
    FlowMod {
        t: f64,
        request_id: String,
        xid: u64,
        switch: SwitchId,
        command: FlowModCommand,
        in_port: u32,
        out_port: u32,
        status: String,
        compensating: bool,
    },
    Barrier {
        t: f64,
        request_id: String,
        xid: u64,
        switch: SwitchId,
        committed_xids: Vec<u64>,
    },
    RequestDone {
        t: f64,
        request_id: String,
        outcome: Outcome,
        duration_ms: f64,
        detail: Option<String>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RequestError {
    #[error("unknown path {0}")]
    UnknownPath(PathId),
    #[error("request_id must not be empty")]
    EmptyRequestId,
}

pub struct Controller<S> {
    topology: Arc<Topology>,
    southbound: S,
    xids: XidAllocator,
    clock: Arc<dyn Clock>,
    active: Option<PathId>,
    log: Vec<ControllerLogRecord>,
}

impl<S: Southbound> Controller<S> {
    pub fn new(topology: Arc<Topology>, southbound: S, clock: Arc<dyn Clock>) -> Self {
        Self {
            topology,
            southbound,
            xids: XidAllocator::new(),
            clock,
            active: None,
            log: Vec::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn southbound(&self) -> &S {
        &self.southbound
    }

    pub fn southbound_mut(&mut self) -> &mut S {
        &mut self.southbound
    }

    pub fn next_xid(&self) -> u64 {
        self.xids.next_xid()
    }

    /// Path installed by the last successful reconfiguration.
    pub fn active_path(&self) -> Option<&PathId> {
        self.active.as_ref()
    }

    pub fn paths(&self) -> Vec<PathInfo> {
        self.topology
            .paths
            .iter()
            .map(|p| PathInfo {
                id: p.id.clone(),
                link: p.link.clone(),
                status: if self.active.as_ref() == Some(&p.id) {
                    PathInstallState::Active
                } else {
                    PathInstallState::Inactive
                },
            })
            .collect()
    }

    pub fn log(&self) -> &[ControllerLogRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<ControllerLogRecord> {
        std::mem::take(&mut self.log)
    }

    fn path(&self, id: &PathId) -> Result<PathSpec, RequestError> {
        self.topology
            .path(id.as_str())
            .cloned()
            .ok_or_else(|| RequestError::UnknownPath(id.clone()))
    }

    /// Validates the request, then stages and commits the change.
    ///
    /// Validation failures return `Err` before anything is sent. Everything
    /// else returns a report; a `FAILED` report has been rolled back.
    pub fn handle_reconfigure(&mut self, req: &ReconfigRequest) -> Result<ReconfigReport, RequestError> {
        if req.request_id.is_empty() {
            return Err(RequestError::EmptyRequestId);
        }
        let set_up = self.path(&req.set_up)?;
        let tear_down = req.tear_down.as_ref().map(|id| self.path(id)).transpose()?;

        let started_at = self.clock.now();
        let mut report = ReconfigReport {
            request_id: req.request_id.clone(),
            transactions: Vec::new(),
            barriers: Vec::new(),
            started_at,
            completed_at: started_at,
            outcome: Outcome::Success,
            failed_xid: None,
            detail: None,
        };

        let mut plan = Vec::new();
        if let Some(old) = &tear_down {
            plan.extend(old.cross_connects.iter().map(|xc| (xc, FlowModCommand::Delete)));
        }
        plan.extend(set_up.cross_connects.iter().map(|xc| (xc, FlowModCommand::Add)));

        let mut touched: Vec<SwitchId> = Vec::new();
        for (xc, command) in plan {
            if !touched.contains(&xc.switch) {
                touched.push(xc.switch.clone());
            }
            let fm = FlowMod {
                xid: self.next_xid(),
                switch: xc.switch.clone(),
                command,
                in_port: xc.in_port,
                out_port: xc.out_port,
            };
            let ok = self.send_flow_mod(&mut report, fm, false);
            if !ok {
                break;
            }
        }

        if report.outcome == Outcome::Success {
            // Alice-side switch commits last.
            let alice = self.topology.alice_switch().clone();
            touched.sort_by_key(|sw| *sw == alice);
            for sw in &touched {
                if !self.send_barrier(&mut report, sw) {
                    report.outcome = Outcome::Failed;
                    report.detail = Some(format!("switch {sw} did not reply to barrier"));
                    break;
                }
            }
        }

        if report.outcome == Outcome::Failed {
            self.roll_back(&mut report, &touched);
        } else {
            self.active = Some(set_up.id.clone());
        }

        report.completed_at = self.clock.now();
        self.log.push(ControllerLogRecord::RequestDone {
            t: report.completed_at,
            request_id: report.request_id.clone(),
            outcome: report.outcome,
            duration_ms: report.duration_ms(),
            detail: report.detail.clone(),
        });
        Ok(report)
    }

    /// Sends one flow-mod and records it. Returns false if it failed.
    fn send_flow_mod(&mut self, report: &mut ReconfigReport, fm: FlowMod, compensating: bool) -> bool {
        let reply = self
            .southbound
            .request(&fm.switch, WireMessage::from_flow_mod(&fm));
        let (status, status_text) = match reply {
            Ok(WireMessage::FlowModAck { xid, status }) if xid == fm.xid => {
                let text = serde_json::to_value(status)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default();
                if status == AckStatus::Staged {
                    (TxStatus::Acked, text)
                } else {
                    (TxStatus::Failed, text)
                }
            }
            Ok(other) => (TxStatus::Failed, format!("unexpected reply {other:?}")),
            Err(e) => (TxStatus::Failed, e.to_string()),
        };
        self.log.push(ControllerLogRecord::FlowMod {
            t: self.clock.now(),
            request_id: report.request_id.clone(),
            xid: fm.xid,
            switch: fm.switch.clone(),
            command: fm.command,
            in_port: fm.in_port,
            out_port: fm.out_port,
            status: status_text.clone(),
            compensating,
        });
        if status == TxStatus::Failed && !compensating && report.outcome == Outcome::Success {
            report.outcome = Outcome::Failed;
            report.failed_xid = Some(fm.xid);
            report.detail = Some(format!("xid {} on {}: {}", fm.xid, fm.switch, status_text));
        }
        report.transactions.push(Transaction {
            xid: fm.xid,
            switch: fm.switch.clone(),
            flow_mod: fm,
            status,
            compensating,
        });
        status == TxStatus::Acked
    }

    fn send_barrier(&mut self, report: &mut ReconfigReport, switch: &SwitchId) -> bool {
        let xid = self.next_xid();
        let reply = self
            .southbound
            .request(switch, WireMessage::BarrierRequest { xid });
        let (replied, committed_xids) = match reply {
            Ok(WireMessage::BarrierReply {
                xid: r,
                committed_xids,
            }) if r == xid => (true, committed_xids),
            _ => (false, Vec::new()),
        };
        if replied {
            self.log.push(ControllerLogRecord::Barrier {
                t: self.clock.now(),
                request_id: report.request_id.clone(),
                xid,
                switch: switch.clone(),
                committed_xids: committed_xids.clone(),
            });
        }
        report.barriers.push(BarrierRecord {
            xid,
            switch: switch.clone(),
            committed_xids,
            replied,
        });
        replied
    }

    fn roll_back(&mut self, report: &mut ReconfigReport, touched: &[SwitchId]) {
        let acked: Vec<FlowMod> = report
            .transactions
            .iter()
            .filter(|t| t.status == TxStatus::Acked && !t.compensating)
            .map(|t| t.flow_mod.clone())
            .collect();
        let mut reachable: BTreeSet<SwitchId> = BTreeSet::new();
        for fm in acked.into_iter().rev() {
            let inverse = FlowMod {
                xid: self.next_xid(),
                command: match fm.command {
                    FlowModCommand::Add => FlowModCommand::Delete,
                    FlowModCommand::Delete => FlowModCommand::Add,
                },
                ..fm
            };
            let sw = inverse.switch.clone();
            if self.send_flow_mod(report, inverse, true) {
                reachable.insert(sw);
            }
        }
        for sw in touched.iter().filter(|sw| reachable.contains(*sw)) {
            self.send_barrier(report, sw);
        }
    }
}
