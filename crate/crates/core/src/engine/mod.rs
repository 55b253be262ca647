//! Deterministic discrete-event network core.
//!
//! A [`Simulation`] owns a set of unidirectional links, each with its own
//! output queue, and a set of flows with static forward and return routes.
//! Time is kept in integer nanoseconds and events with equal timestamps are
//! dispatched in scheduling order, so a given network and seed always
//! produce the same run.

mod event;
mod packet;
mod sim;
mod time;

pub use event::EventQueue;
pub use packet::{AckInfo, FlowId, Packet, ACK_BYTES, MAX_SACK_BLOCKS};
pub use sim::{
    EngineError, FlowConfig, FlowStats, LinkConfig, LinkId, LinkStats, QueueConfig, Simulation,
    SimulationStats,
};
pub use time::SimTime;
