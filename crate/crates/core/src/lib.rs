//! Deterministic simulator of an SDN-controlled QKD network under optical
//! denial-of-service attack.
//!
//! The crate models three parallel quantum links between a pair of QKD
//! units, the optical circuit switches that select between them, an SDN
//! controller that reconfigures the switches, and the monitoring application
//! (QPM) that detects key-generation failure and moves the quantum channel to
//! the next pre-computed path.
//!
//! Every component can run under a single simulated clock, which makes whole
//! multi-hour scenarios reproducible and fast. The same components also speak
//! their wire protocols over real sockets: newline-delimited JSON between
//! controller and switch agents, HTTP on the controller's northbound side,
//! and a JSON request/response monitor channel on the QKD units.

pub mod clock;
pub mod controller;
pub mod ids;
pub mod physics;
pub mod qpm;
pub mod scenario;
pub mod switch;
pub mod topology;
pub mod unit;

pub use clock::{Clock, SimClock, WallClock};
pub use ids::{LinkId, PathId, SwitchId};
pub use physics::ChannelParams;
pub use topology::{load_topology, resolve_active_path, Topology};
