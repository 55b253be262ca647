//! Discrete-event simulation and analysis toolkit for MulTCP, a TCP
//! congestion controller that behaves like `N` parallel standard TCP
//! connections sharing one control loop.
//!
//! The crate is organised bottom-up:
//!
//! * [`engine`] is the deterministic event-driven network core.
//! * [`aqm`] implements the RED queue used at the bottleneck.
//! * [`tcp`] holds the weighted congestion-control state machines
//!   (Tahoe, Reno, NewReno and Sack).
//! * [`model`] is the analytic steady-state throughput model together with
//!   an idealised saw-tooth simulator used to validate it.
//! * [`fairness`] provides max-min and weighted proportional fairness
//!   predicates and allocators.
//! * [`allocator`] shares a receive-buffer budget in proportion to prices.
//! * [`policing`] estimates the effective weight of a flow from its trace
//!   and computes bills from declarations.
//! * [`harness`] builds scenarios, runs the gain and fairness sweeps and
//!   writes CSV output.

pub mod allocator;
pub mod aqm;
pub mod engine;
pub mod fairness;
pub mod harness;
pub mod model;
pub mod policing;
pub mod tcp;

pub use engine::{SimTime, Simulation, SimulationStats};
pub use tcp::Variant;
