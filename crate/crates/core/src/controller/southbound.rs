//! Controller-side transports to the switch agents.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::clock::Clock;
use crate::ids::SwitchId;
use crate::switch::{SwitchAgent, WireMessage};
use crate::topology::{CrossConnectTable, Topology};

#[derive(Debug, Error)]
pub enum SouthboundError {
    #[error("switch {0} is not connected")]
    Disconnected(SwitchId),
    #[error("switch {switch}: {source}")]
    Io {
        switch: SwitchId,
        source: std::io::Error,
    },
    #[error("switch {switch} sent an undecodable reply: {detail}")]
    Protocol { switch: SwitchId, detail: String },
}

/// Request/response channel to each switch agent.
pub trait Southbound {
    fn request(&mut self, switch: &SwitchId, msg: WireMessage) -> Result<WireMessage, SouthboundError>;
}

impl<T: Southbound + ?Sized> Southbound for Box<T> {
    fn request(&mut self, switch: &SwitchId, msg: WireMessage) -> Result<WireMessage, SouthboundError> {
        (**self).request(switch, msg)
    }
}

/// In-process switch fabric. Messages still go through the JSON line
/// encoding, and each round trip costs `rtt_s` on the shared clock.
pub struct LocalFabric {
    agents: BTreeMap<SwitchId, Arc<SwitchAgent>>,
    clock: Arc<dyn Clock>,
    rtt_s: f64,
    disconnected: BTreeSet<SwitchId>,
}

impl LocalFabric {
    pub fn from_topology(topology: &Topology, clock: Arc<dyn Clock>, rtt_s: f64) -> Self {
        let agents = topology
            .switches
            .iter()
            .map(|s| (s.id.clone(), Arc::new(SwitchAgent::new(s.id.clone(), s.ports))))
            .collect();
        Self {
            agents,
            clock,
            rtt_s,
            disconnected: BTreeSet::new(),
        }
    }

    pub fn agents(&self) -> &BTreeMap<SwitchId, Arc<SwitchAgent>> {
        &self.agents
    }

    pub fn agent(&self, id: &str) -> Option<&Arc<SwitchAgent>> {
        self.agents.get(id)
    }

    /// Committed tables of every switch.
    pub fn tables(&self) -> BTreeMap<SwitchId, CrossConnectTable> {
        snapshot(&self.agents)
    }

    pub fn disconnect(&mut self, id: &SwitchId) {
        self.disconnected.insert(id.clone());
    }

    pub fn reconnect(&mut self, id: &SwitchId) {
        self.disconnected.remove(id);
    }
}

/// Committed tables of the given agents.
pub fn snapshot(agents: &BTreeMap<SwitchId, Arc<SwitchAgent>>) -> BTreeMap<SwitchId, CrossConnectTable> {
    agents
        .iter()
        .map(|(id, a)| (id.clone(), a.query_table()))
        .collect()
}

impl Southbound for LocalFabric {
    fn request(&mut self, switch: &SwitchId, msg: WireMessage) -> Result<WireMessage, SouthboundError> {
        if self.disconnected.contains(switch) {
            return Err(SouthboundError::Disconnected(switch.clone()));
        }
        let agent = self
            .agents
            .get(switch)
            .ok_or_else(|| SouthboundError::Disconnected(switch.clone()))?;
        self.clock.advance(self.rtt_s);
        let reply = agent
            .handle_line(&msg.encode())
            .map_err(|e| SouthboundError::Protocol {
                switch: switch.clone(),
                detail: e.to_string(),
            })?;
        WireMessage::decode(&reply).map_err(|e| SouthboundError::Protocol {
            switch: switch.clone(),
            detail: e.to_string(),
        })
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Switch agents connected over TCP, keyed by the id in their HELLO.
pub struct TcpSouthbound {
    conns: BTreeMap<SwitchId, Connection>,
}

impl TcpSouthbound {
    /// Accepts agents until every expected switch has said HELLO. Agents
    /// announcing an unexpected id are dropped.
    pub fn accept(
        listener: &TcpListener,
        expected: &[SwitchId],
        reply_timeout: Duration,
    ) -> std::io::Result<Self> {
        let mut conns = BTreeMap::new();
        while conns.len() < expected.len() {
            let (stream, peer) = listener.accept()?;
            stream.set_read_timeout(Some(reply_timeout))?;
            let mut reader = BufReader::new(stream.try_clone()?);
            let mut line = String::new();
            reader.read_line(&mut line)?;
            match WireMessage::decode(&line) {
                Ok(WireMessage::Hello { switch }) if expected.contains(&switch) => {
                    log::info!("switch {switch} connected from {peer}");
                    conns.insert(
                        switch,
                        Connection {
                            reader,
                            writer: stream,
                        },
                    );
                }
                other => log::warn!("rejecting connection from {peer}: {other:?}"),
            }
        }
        Ok(Self { conns })
    }

    pub fn connected(&self) -> Vec<SwitchId> {
        self.conns.keys().cloned().collect()
    }
}

impl Southbound for TcpSouthbound {
    fn request(&mut self, switch: &SwitchId, msg: WireMessage) -> Result<WireMessage, SouthboundError> {
        let conn = self
            .conns
            .get_mut(switch)
            .ok_or_else(|| SouthboundError::Disconnected(switch.clone()))?;
        let io_err = |source| SouthboundError::Io {
            switch: switch.clone(),
            source,
        };
        let result = (|| {
            writeln!(conn.writer, "{}", msg.encode())?;
            let mut line = String::new();
            if conn.reader.read_line(&mut line)? == 0 {
                return Err(std::io::ErrorKind::UnexpectedEof.into());
            }
            Ok(line)
        })();
        match result {
            Ok(line) => WireMessage::decode(&line).map_err(|e| SouthboundError::Protocol {
                switch: switch.clone(),
                detail: e.to_string(),
            }),
            Err(e) => {
                self.conns.remove(switch);
                Err(io_err(e))
            }
        }
    }
}
