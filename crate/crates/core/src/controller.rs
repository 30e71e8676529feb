//! Grid-forming inverter control laws.
//!
//! Primary droop sets the commanded frequency and voltage from measured
//! active and reactive power. Secondary DAPI integrators `Ω` and `e` remove
//! the droop offsets while sharing power through neighbor consensus, and a
//! phase consensus term drives the inverter angles together ahead of breaker
//! closure. Frequencies are in rad/s throughout.

use crate::error::ControllerError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbrParams {
    /// Setpoint frequency ω* (rad/s).
    pub omega_star: f64,
    /// Setpoint voltage magnitude V* (V).
    pub v_star: f64,
    /// Active power–frequency droop (rad/s per W).
    pub m: f64,
    /// Reactive power–voltage droop (V per VAr).
    pub n: f64,
    /// Active power setpoint P* (W).
    pub p_star: f64,
    /// Reactive power setpoint Q* (VAr).
    pub q_star: f64,
    /// Inverse integral gain of the frequency consensus.
    pub k: f64,
    /// Inverse integral gain of the voltage consensus.
    pub kappa: f64,
    /// Voltage deviation gain ξ.
    pub xi: f64,
}

impl IbrParams {
    /// Names of violated parameter constraints. `needs_q_ratio` is set when
    /// this inverter takes part in any nonzero reactive consensus link.
    pub fn violations(&self, needs_q_ratio: bool) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !(self.m > 0.0) {
            v.push("m");
        }
        if !(self.n > 0.0) {
            v.push("n");
        }
        if !(self.k > 0.0) {
            v.push("k");
        }
        if !(self.kappa > 0.0) {
            v.push("kappa");
        }
        if !(self.xi >= 0.0) {
            v.push("xi");
        }
        if !(self.omega_star > 0.0) {
            v.push("omega_star");
        }
        if !(self.v_star > 0.0) {
            v.push("v_star");
        }
        if needs_q_ratio && self.q_star == 0.0 {
            v.push("q_star");
        }
        v
    }
}

/// Controller state. `delta` is integrated unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IbrState {
    /// Phase angle δ relative to the ω* frame (rad).
    pub delta: f64,
    /// Frequency correction Ω (rad/s).
    pub omega_sec: f64,
    /// Voltage correction e (V).
    pub e_sec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub delta: f64,
    pub omega_sec: f64,
    pub e_sec: f64,
}

impl StateDerivative {
    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.omega_sec.is_finite() && self.e_sec.is_finite()
    }
}

/// Linear voltage ramp used at black start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftStartProfile {
    pub ramp_duration: f64,
    pub target: f64,
}

impl SoftStartProfile {
    pub fn value(&self, t: f64) -> f64 {
        (t / self.ramp_duration).clamp(0.0, 1.0) * self.target
    }

    pub fn is_ramping(&self, t: f64) -> bool {
        t < self.ramp_duration
    }
}

/// Held view of one neighbor from the last communication exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborValue {
    /// IBR index of the neighbor.
    pub index: usize,
    pub omega_sec: f64,
    /// Q_j / Q_j*.
    pub q_ratio: f64,
    pub delta: f64,
    pub local_ok: bool,
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSnapshot {
    pub neighbors: Vec<NeighborValue>,
    pub snapshot_time: f64,
}

/// Measured quantities feeding the consensus dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    /// W
    pub p: f64,
    /// VAr
    pub q: f64,
    /// Commanded frequency ω_i (rad/s).
    pub omega: f64,
    /// Commanded voltage V_i (V).
    pub v: f64,
}

/// ω = ω* − m·(P − P*) + Ω
pub fn output_frequency(params: &IbrParams, state: &IbrState, p: f64) -> f64 {
    params.omega_star - params.m * (p - params.p_star) + state.omega_sec
}

/// V = V_ref − n·(Q − Q*) + e, where V_ref is V* or the soft-start ramp value.
pub fn output_voltage(
    params: &IbrParams,
    state: &IbrState,
    q: f64,
    soft_start: Option<(&SoftStartProfile, f64)>,
) -> f64 {
    let v_ref = match soft_start {
        Some((profile, t)) => profile.value(t),
        None => params.v_star,
    };
    v_ref - params.n * (q - params.q_star) + state.e_sec
}

/// Σ_j d_ij·|δ_i − δ_j| over the snapshot (rad).
pub fn phase_mismatch(state: &IbrState, snapshot: &NeighborSnapshot) -> f64 {
    snapshot
        .neighbors
        .iter()
        .filter(|nb| nb.d != 0.0)
        .map(|nb| nb.d * (state.delta - nb.delta).abs())
        .sum()
}

/// Consensus dynamics of one inverter:
///
/// ```text
/// δ̇ = Δω − Σ d_ij (δ_i − δ_j)
/// k Ω̇ = −Δω − Σ a_ij (Ω_i − Ω_j)
/// κ ė = −ξ ΔV − Σ b_ij (Q_i/Q_i* − Q_j/Q_j*)
/// ```
///
/// with `Δω = ω_i − ω*` and `ΔV = V_i − V*`. Neighbor values come from the
/// held snapshot. `freeze_voltage` pins `ė = 0` (soft-start, or voltage DAPI
/// disabled).
pub fn state_derivative(
    params: &IbrParams,
    state: &IbrState,
    meas: &Measurements,
    snapshot: &NeighborSnapshot,
    freeze_voltage: bool,
) -> StateDerivative {
    let d_omega = meas.omega - params.omega_star;
    let d_v = meas.v - params.v_star;

    let mut phase = 0.0;
    let mut freq = 0.0;
    let mut volt = 0.0;
    let uses_q = snapshot.neighbors.iter().any(|nb| nb.b != 0.0);
    let own_ratio = if uses_q { meas.q / params.q_star } else { 0.0 };
    for nb in &snapshot.neighbors {
        if nb.d != 0.0 {
            phase += nb.d * (state.delta - nb.delta);
        }
        if nb.a != 0.0 {
            freq += nb.a * (state.omega_sec - nb.omega_sec);
        }
        if nb.b != 0.0 {
            volt += nb.b * (own_ratio - nb.q_ratio);
        }
    }

    StateDerivative {
        delta: d_omega - phase,
        omega_sec: (-d_omega - freq) / params.k,
        e_sec: if freeze_voltage { 0.0 } else { (-params.xi * d_v - volt) / params.kappa },
    }
}

/// Replace P* and Q* of every IBR in `island` by the island means.
///
/// `voltage_consensus_active` marks islands whose IBRs exchange reactive
/// ratios; a zero mean Q* is rejected there because the consensus divides
/// by it.
pub fn apply_setpoint_reassignment(
    params: &mut [IbrParams],
    island: &[usize],
    voltage_consensus_active: bool,
) -> Result<(f64, f64), ControllerError> {
    if island.is_empty() {
        return Err(ControllerError::EmptyIsland);
    }
    let count = island.len() as f64;
    let p = island.iter().map(|&i| params[i].p_star).sum::<f64>() / count;
    let q = island.iter().map(|&i| params[i].q_star).sum::<f64>() / count;
    if voltage_consensus_active && q == 0.0 {
        return Err(ControllerError::ZeroReactiveSetpoint);
    }
    for &i in island {
        params[i].p_star = p;
        params[i].q_star = q;
    }
    Ok((p, q))
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}
