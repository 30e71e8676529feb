//! Simulator for the autonomous black start, synchronization and reconnection
//! of an islanded network of microgrids (NMG).
//!
//! Each microgrid is served by one grid-forming inverter running droop
//! control, distributed-averaging PI (DAPI) secondary control and a leaderless
//! phase consensus. Inverters soft-start their islands, regulate frequency and
//! voltage, agree on phase, and close the tie-line breakers through a
//! three-stage distributed check. The electrical network is modeled as a
//! quasi-stationary phasor system re-solved every control step.
//!
//! Module map:
//!
//! * [`topology`]: buses, tie-lines, breakers, loads and the communication graph.
//! * [`network`]: admittance assembly and per-island phasor solves.
//! * [`steady_state`]: algebraic equilibrium of the closed loop, used as an oracle.
//! * [`controller`]: droop, DAPI and phase-consensus control laws.
//! * [`comms`]: periodic zero-order-hold exchange of consensus variables.
//! * [`sync`]: local check, neighbor check and breaker SR latch.
//! * [`engine`]: fixed-step simulation loop.
//! * [`scenario`], [`trace`], [`plots`]: file formats and outputs.

pub mod comms;
pub mod controller;
pub mod engine;
pub mod error;
pub mod network;
pub mod plots;
pub mod scenario;
pub mod steady_state;
pub mod sync;
pub mod topology;
pub mod trace;

pub use engine::{run_scenario, RunOutput, SimConfig, Simulation};
pub use error::{NetworkError, ScenarioError, SimError};
pub use scenario::Scenario;
pub use topology::{BreakerId, BusId, IbrId, LineId, NmgTopology};

/// 2π, for Hz ↔ rad/s conversions.
pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Peak line-to-neutral voltage of a 480 V line-to-line system, 480·√2/√3.
pub fn nominal_peak_phase_voltage() -> f64 {
    480.0 * 2f64.sqrt() / 3f64.sqrt()
}
