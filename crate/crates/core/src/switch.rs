//! Emulated optical circuit switch and its controller wire protocol.
//!
//! Flow-mods are staged, not applied. A barrier commits every staged change
//! at once, so a table snapshot shows either none or all of a batch. Each
//! committed entry `in_port → out_port` is a bidirectional circuit, so a port
//! appears at most once across the whole table.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{PortId, SwitchId};
use crate::topology::CrossConnectTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlowModCommand {
    Add,
    Delete,
}

/// A cross-connect change addressed to one switch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMod {
    pub xid: u64,
    pub switch: SwitchId,
    pub command: FlowModCommand,
    pub in_port: PortId,
    pub out_port: PortId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AckStatus {
    Staged,
    PortInUse,
    NoSuchEntry,
    NoSuchPort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowModAck {
    pub xid: u64,
    pub status: AckStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarrierReply {
    pub xid: u64,
    pub committed_xids: Vec<u64>,
}

/// One line of the controller ↔ switch protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WireMessage {
    Hello {
        switch: SwitchId,
    },
    FlowMod {
        xid: u64,
        command: FlowModCommand,
        in_port: PortId,
        out_port: PortId,
    },
    FlowModAck {
        xid: u64,
        status: AckStatus,
    },
    BarrierRequest {
        xid: u64,
    },
    BarrierReply {
        xid: u64,
        committed_xids: Vec<u64>,
    },
}

impl WireMessage {
    pub fn from_flow_mod(fm: &FlowMod) -> Self {
        WireMessage::FlowMod {
            xid: fm.xid,
            command: fm.command,
            in_port: fm.in_port,
            out_port: fm.out_port,
        }
    }

    pub fn encode(&self) -> String {
        // Plain data with string keys; serialization cannot fail.
        serde_json::to_string(self).expect("wire message serializes")
    }

    pub fn decode(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}

#[derive(Debug, Error)]
pub enum SwitchError {
    #[error("unexpected message for a switch: {0:?}")]
    Unexpected(WireMessage),
    #[error("undecodable message: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("switch I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Committed table plus staged changes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SwitchState {
    table: CrossConnectTable,
    pending: Vec<FlowMod>,
}

fn port_used(table: &CrossConnectTable, port: PortId) -> bool {
    table.contains_key(&port) || table.values().any(|&p| p == port)
}

fn apply(table: &mut CrossConnectTable, fm: &FlowMod) {
    match fm.command {
        FlowModCommand::Add => {
            table.insert(fm.in_port, fm.out_port);
        }
        FlowModCommand::Delete => {
            table.remove(&fm.in_port);
        }
    }
}

impl SwitchState {
    /// Table as it will be once the pending changes commit.
    fn staged_view(&self) -> CrossConnectTable {
        let mut view = self.table.clone();
        for fm in &self.pending {
            apply(&mut view, fm);
        }
        view
    }

    /// Validates a flow-mod against the staged view and stages it.
    pub fn handle_flow_mod(&mut self, port_count: u32, msg: FlowMod) -> FlowModAck {
        let xid = msg.xid;
        let ack = |status| FlowModAck { xid, status };
        let in_range = |p: PortId| p >= 1 && p <= port_count;
        if !in_range(msg.in_port) || !in_range(msg.out_port) {
            return ack(AckStatus::NoSuchPort);
        }
        let view = self.staged_view();
        match msg.command {
            FlowModCommand::Add => {
                if msg.in_port == msg.out_port
                    || port_used(&view, msg.in_port)
                    || port_used(&view, msg.out_port)
                {
                    return ack(AckStatus::PortInUse);
                }
            }
            FlowModCommand::Delete => {
                if view.get(&msg.in_port) != Some(&msg.out_port) {
                    return ack(AckStatus::NoSuchEntry);
                }
            }
        }
        self.pending.push(msg);
        ack(AckStatus::Staged)
    }

    /// Commits every staged change in staged order.
    pub fn handle_barrier(&mut self, xid: u64) -> BarrierReply {
        let mut next = self.table.clone();
        let committed_xids = self
            .pending
            .drain(..)
            .map(|fm| {
                apply(&mut next, &fm);
                fm.xid
            })
            .collect();
        self.table = next;
        BarrierReply {
            xid,
            committed_xids,
        }
    }

    pub fn query_table(&self) -> CrossConnectTable {
        self.table.clone()
    }

    pub fn pending(&self) -> &[FlowMod] {
        &self.pending
    }
}

/// One switch agent. All access goes through an internal lock, so a
/// [`query_table`](Self::query_table) snapshot is never taken mid-commit.
#[derive(Debug)]
pub struct SwitchAgent {
    id: SwitchId,
    ports: u32,
    state: Mutex<SwitchState>,
}

impl SwitchAgent {
    pub fn new(id: SwitchId, ports: u32) -> Self {
        Self {
            id,
            ports,
            state: Mutex::new(SwitchState::default()),
        }
    }

    pub fn id(&self) -> &SwitchId {
        &self.id
    }

    pub fn ports(&self) -> u32 {
        self.ports
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, SwitchState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn hello(&self) -> WireMessage {
        WireMessage::Hello {
            switch: self.id.clone(),
        }
    }

    /// Handles one controller message and returns the reply.
    pub fn handle(&self, msg: WireMessage) -> Result<WireMessage, SwitchError> {
        match msg {
            WireMessage::FlowMod {
                xid,
                command,
                in_port,
                out_port,
            } => {
                let fm = FlowMod {
                    xid,
                    switch: self.id.clone(),
                    command,
                    in_port,
                    out_port,
                };
                let ack = self.lock().handle_flow_mod(self.ports, fm);
                Ok(WireMessage::FlowModAck {
                    xid: ack.xid,
                    status: ack.status,
                })
            }
            WireMessage::BarrierRequest { xid } => {
                let reply = self.lock().handle_barrier(xid);
                Ok(WireMessage::BarrierReply {
                    xid: reply.xid,
                    committed_xids: reply.committed_xids,
                })
            }
            other => Err(SwitchError::Unexpected(other)),
        }
    }

    /// Decodes a request line and encodes the reply line (no newline).
    pub fn handle_line(&self, line: &str) -> Result<String, SwitchError> {
        Ok(self.handle(WireMessage::decode(line)?)?.encode())
    }

    pub fn query_table(&self) -> CrossConnectTable {
        self.lock().query_table()
    }

    /// Number of staged, uncommitted flow-mods.
    pub fn pending_len(&self) -> usize {
        self.lock().pending().len()
    }
}

/// Connects to a controller, announces the switch, and serves requests until
/// the controller closes the connection.
pub fn run_agent(agent: &SwitchAgent, controller: impl ToSocketAddrs) -> Result<(), SwitchError> {
    let stream = TcpStream::connect(controller)?;
    serve_agent(agent, stream)
}

/// Serves the protocol on an established stream, starting with HELLO.
pub fn serve_agent(agent: &SwitchAgent, stream: TcpStream) -> Result<(), SwitchError> {
    let mut writer = stream.try_clone()?;
    writeln!(writer, "{}", agent.hello().encode())?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match agent.handle_line(&line) {
            Ok(reply) => writeln!(writer, "{reply}")?,
            Err(e) => log::warn!("switch {}: dropping message: {e}", agent.id()),
        }
    }
    Ok(())
}
