//! Fixed-step closed-loop simulation.
//!
//! One call to [`Simulation::step`] performs, in order:
//!
//! 1. the communication exchange (when due);
//! 2. a phasor solve of every electrical island with the commanded source
//!    voltages and current phases;
//! 3. the droop output maps and the local and neighbor sync checks;
//! 4. latch updates; on a closure the breaker conducts immediately, setpoints
//!    are averaged over the merged island and the network is re-solved;
//! 5. integration of the controller states over `dt`, with P and Q held.

use num_complex::Complex64;

use crate::comms::{Broadcast, CommBus};
use crate::controller::{
    apply_setpoint_reassignment, output_frequency, output_voltage, phase_mismatch, state_derivative, wrap_angle,
    IbrParams, IbrState, Measurements, NeighborSnapshot, NeighborValue, SoftStartProfile, StateDerivative,
};
use crate::error::SimError;
use crate::network::{build_admittance, power_balance, solve_island, AdmittanceMatrix, NewtonOptions};
use crate::scenario::Scenario;
use crate::sync::{local_sync_check, stage2_check, SyncCheckConfig, SyncLatchState};
use crate::topology::{BreakerId, IbrId, NmgTopology};
use crate::TWO_PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    ExplicitEuler,
    #[default]
    Rk4,
}

/// Advance `x` by one step of `dt`. On a non-finite derivative returns the
/// index of the first offending component.
pub fn integrate<F>(f: F, x: &[f64], dt: f64, method: Integrator) -> Result<Vec<f64>, usize>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let check = |d: Vec<f64>| match d.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(i),
        None => Ok(d),
    };
    let axpy = |a: f64, d: &[f64]| -> Vec<f64> { x.iter().zip(d).map(|(xi, di)| xi + a * di).collect() };
    match method {
        Integrator::ExplicitEuler => {
            let k1 = check(f(x))?;
            Ok(axpy(dt, &k1))
        }
        Integrator::Rk4 => {
            let k1 = check(f(x))?;
            let k2 = check(f(&axpy(dt / 2.0, &k1)))?;
            let k3 = check(f(&axpy(dt / 2.0, &k2)))?;
            let k4 = check(f(&axpy(dt, &k3)))?;
            Ok(x
                .iter()
                .enumerate()
                .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        }
    }
}

/// Which consensus couplings act between two inverters, given whether they
/// share an electrical island.
///
/// Frequency and voltage consensus only couple inverters in the same island:
/// islanded inverters regulate on their own. Phase consensus only couples
/// inverters in different islands unless `after_closure` is set, since a
/// phase term between electrically tied inverters fights the network and
/// leaves a standing frequency offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GainPolicy {
    pub phase_consensus: bool,
    pub after_closure: bool,
}

impl Default for GainPolicy {
    fn default() -> Self {
        GainPolicy { phase_consensus: true, after_closure: false }
    }
}

impl GainPolicy {
    /// Weights used by the sync check: phase weights masked by island only.
    pub fn check_weights(&self, nb: &NeighborValue, same_island: bool) -> NeighborValue {
        let mut out = *nb;
        if same_island {
            if !self.after_closure {
                out.d = 0.0;
            }
        } else {
            out.a = 0.0;
            out.b = 0.0;
        }
        out
    }

    /// Weights used by the dynamics.
    pub fn dynamic_weights(&self, nb: &NeighborValue, same_island: bool) -> NeighborValue {
        let mut out = self.check_weights(nb, same_island);
        if !self.phase_consensus {
            out.d = 0.0;
        }
        out
    }

    pub fn apply(
        &self,
        snapshot: &NeighborSnapshot,
        island_of: &[usize],
        me: usize,
        dynamic: bool,
    ) -> NeighborSnapshot {
        let neighbors = snapshot
            .neighbors
            .iter()
            .map(|nb| {
                let same = island_of[nb.index] == island_of[me];
                if dynamic {
                    self.dynamic_weights(nb, same)
                } else {
                    self.check_weights(nb, same)
                }
            })
            .collect();
        NeighborSnapshot { neighbors, snapshot_time: snapshot.snapshot_time }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Control and integration step (s).
    pub dt_control: f64,
    pub duration: f64,
    pub integrator: Integrator,
    /// Voltage ramp duration at black start; `None` starts at V*.
    pub soft_start_ramp: Option<f64>,
    pub record_every: usize,
    pub sync: SyncCheckConfig,
    pub voltage_dapi: bool,
    pub gains: GainPolicy,
    /// Refresh neighbor phases every control step instead of every exchange.
    pub phase_every_step: bool,
    pub comm_delay: f64,
    pub newton: NewtonOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_control: 0.0111,
            duration: 20.0,
            integrator: Integrator::Rk4,
            soft_start_ramp: Some(0.5),
            record_every: 1,
            sync: SyncCheckConfig::default(),
            voltage_dapi: true,
            gains: GainPolicy::default(),
            phase_every_step: false,
            comm_delay: 0.0,
            newton: NewtonOptions::default(),
        }
    }
}

impl SimConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt_control > 0.0) {
            v.push("dt_control must be positive".to_string());
        }
        if !(self.duration >= 0.0) {
            v.push("duration must be non-negative".to_string());
        }
        if self.record_every == 0 {
            v.push("record_every must be at least 1".to_string());
        }
        if let Some(r) = self.soft_start_ramp {
            if !(r > 0.0) {
                v.push("soft-start ramp must be positive".to_string());
            }
        }
        if !(self.comm_delay >= 0.0) {
            v.push("comm delay must be non-negative".to_string());
        }
        v.extend(self.sync.violations().into_iter().map(|k| format!("sync tolerance `{k}` must be positive")));
        v
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.dt_control).round() as usize
    }
}

/// One row of observable signals. Per-IBR vectors follow the IBR order of
/// the topology; `latched` follows the breaker order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub f_hz: Vec<f64>,
    pub v: Vec<f64>,
    /// Wrapped to (−180°, 180°].
    pub delta_deg: Vec<f64>,
    pub omega_sec: Vec<f64>,
    pub e_sec: Vec<f64>,
    pub local_ok: Vec<bool>,
    pub stage2_ok: Vec<bool>,
    pub latched: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    BreakerClosed { breaker: BreakerId },
    BreakerReset { breaker: BreakerId },
    SetpointReassignment { ibrs: Vec<IbrId>, p_star: f64, q_star: f64 },
    SolverWarning { message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, t: f64, kind: EventKind) {
        self.events.push(Event { t, kind });
    }

    pub fn closures(&self) -> impl Iterator<Item = (f64, &BreakerId)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::BreakerClosed { breaker } => Some((e.t, breaker)),
            _ => None,
        })
    }
}

/// Electrical solution and controller outputs at one instant.
#[derive(Debug, Clone)]
struct Observation {
    p: Vec<f64>,
    q: Vec<f64>,
    omega: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    topology: NmgTopology,
    params: Vec<IbrParams>,
    config: SimConfig,
    state: Vec<IbrState>,
    comm: CommBus,
    latch: SyncLatchState,
    ibr_bus: Vec<usize>,
    adjacent: Vec<Vec<usize>>,
    nominal_voltage: f64,
    closed: Vec<bool>,
    islands: Vec<Vec<usize>>,
    ibr_island: Vec<usize>,
    admittances: Vec<AdmittanceMatrix>,
    v_cmd: Vec<f64>,
    last_q: Vec<f64>,
    step_index: usize,
    events: EventLog,
    max_balance_residual: f64,
}

impl Simulation {
    pub fn new(
        topology: NmgTopology,
        params: Vec<IbrParams>,
        initial: Vec<IbrState>,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        let report = topology.validate();
        let structural: Vec<String> = report.structural().map(|v| v.to_string()).collect();
        if !structural.is_empty() {
            return Err(SimError::InvalidTopology(structural.join("; ")));
        }
        let cfg_errors = config.violations();
        if !cfg_errors.is_empty() {
            return Err(SimError::InvalidConfig(cfg_errors.join("; ")));
        }
        let n = topology.ibr_ids().len();
        if params.len() != n || initial.len() != n {
            return Err(SimError::InvalidConfig(format!(
                "{} IBRs but {} parameter sets and {} initial states",
                n,
                params.len(),
                initial.len()
            )));
        }
        let ibr_bus = topology
            .ibr_buses()
            .into_iter()
            .zip(topology.ibr_ids())
            .map(|(b, id)| b.ok_or_else(|| SimError::InvalidTopology(format!("IBR `{id}` is not attached to a bus"))))
            .collect::<Result<Vec<_>, _>>()?;
        let adjacent = topology
            .breakers
            .iter()
            .map(|b| b.adjacent_ibrs.iter().filter_map(|id| topology.ibr_index(id)).collect())
            .collect();
        let nominal_voltage = if n == 0 { crate::nominal_peak_phase_voltage() } else {
            params.iter().map(|p| p.v_star).sum::<f64>() / n as f64
        };

        let mut events = EventLog::default();
        for v in &report.violations {
            events.push(0.0, EventKind::SolverWarning { message: v.to_string() });
        }

        let comm = CommBus::new(&topology.comm, config.comm_delay);
        let latch = SyncLatchState::new(n, topology.breakers.iter().map(|b| b.id.clone()).collect());
        let v_cmd = params
            .iter()
            .zip(&initial)
            .map(|(p, s)| output_voltage(p, s, p.q_star, Self::ramp_for(&config, p).as_ref().map(|r| (r, 0.0))))
            .collect();
        let last_q = params.iter().map(|p| p.q_star).collect();
        let closed = vec![false; topology.breakers.len()];

        let mut sim = Simulation {
            topology,
            params,
            config,
            state: initial,
            comm,
            latch,
            ibr_bus,
            adjacent,
            nominal_voltage,
            closed,
            islands: Vec::new(),
            ibr_island: Vec::new(),
            admittances: Vec::new(),
            v_cmd,
            last_q,
            step_index: 0,
            events,
            max_balance_residual: 0.0,
        };
        sim.rebuild_network()?;
        Ok(sim)
    }

    fn ramp_for(config: &SimConfig, p: &IbrParams) -> Option<SoftStartProfile> {
        config.soft_start_ramp.map(|r| SoftStartProfile { ramp_duration: r, target: p.v_star })
    }

    fn rebuild_network(&mut self) -> Result<(), SimError> {
        self.islands = self.topology.island_indices(&self.closed);
        let mut bus_island = vec![0; self.topology.buses.len()];
        for (k, isl) in self.islands.iter().enumerate() {
            for &b in isl {
                bus_island[b] = k;
            }
        }
        self.ibr_island = self.ibr_bus.iter().map(|&b| bus_island[b]).collect();
        self.admittances = self
            .islands
            .iter()
            .map(|isl| {
                build_admittance(&self.topology, &self.closed, isl, self.nominal_voltage)
                    .map_err(|e| self.network_error(self.time(), isl, e))
            })
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    fn network_error(&self, t: f64, island: &[usize], source: crate::error::NetworkError) -> SimError {
        SimError::Network {
            t,
            island: island.iter().map(|&b| self.topology.buses[b].id.to_string()).collect(),
            source,
        }
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.config.dt_control
    }

    pub fn topology(&self) -> &NmgTopology {
        &self.topology
    }

    pub fn params(&self) -> &[IbrParams] {
        &self.params
    }

    pub fn state(&self) -> &[IbrState] {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn closed(&self) -> &[bool] {
        &self.closed
    }

    pub fn island_count(&self) -> usize {
        self.islands.len()
    }

    /// Largest per-island relative power-balance residual seen so far.
    pub fn max_balance_residual(&self) -> f64 {
        self.max_balance_residual
    }

    /// Clear a breaker latch. The breaker opens at the next step.
    pub fn reset_breaker(&mut self, breaker: &BreakerId) -> Result<(), SimError> {
        self.latch.reset_breaker(breaker).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.events.push(self.time(), EventKind::BreakerReset { breaker: breaker.clone() });
        Ok(())
    }

    fn solve(&mut self, t: f64) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        let n = self.params.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut bus_ibr = vec![None; self.topology.buses.len()];
        for (i, &b) in self.ibr_bus.iter().enumerate() {
            bus_ibr[b] = Some(i);
        }
        for (k, adm) in self.admittances.iter().enumerate() {
            let sources: Vec<Option<Complex64>> = adm
                .buses
                .iter()
                .map(|&b| bus_ibr[b].map(|i| Complex64::from_polar(self.v_cmd[i], self.state[i].delta)))
                .collect();
            let sol = solve_island(adm, &sources, &self.config.newton)
                .map_err(|e| self.network_error(t, &self.islands[k], e))?;
            let bal = power_balance(&self.topology, &self.closed, adm, &sol);
            self.max_balance_residual = self.max_balance_residual.max(bal.relative_residual());
            for (local, &b) in adm.buses.iter().enumerate() {
                if let Some(i) = bus_ibr[b] {
                    p[i] = sol.injections[local].re;
                    q[i] = sol.injections[local].im;
                }
            }
        }
        Ok((p, q))
    }

    fn outputs(&self, t: f64, p: &[f64], q: &[f64]) -> Observation {
        let omega = (0..p.len()).map(|i| output_frequency(&self.params[i], &self.state[i], p[i])).collect();
        let v = (0..p.len())
            .map(|i| {
                let ramp = Self::ramp_for(&self.config, &self.params[i]);
                output_voltage(&self.params[i], &self.state[i], q[i], ramp.as_ref().map(|r| (r, t)))
            })
            .collect();
        Observation { p: p.to_vec(), q: q.to_vec(), omega, v }
    }

    fn observe(&mut self, t: f64) -> Result<Observation, SimError> {
        let (p, q) = self.solve(t)?;
        Ok(self.outputs(t, &p, &q))
    }

    fn q_ratio(&self, i: usize, q: f64) -> f64 {
        let qs = self.params[i].q_star;
        if qs == 0.0 {
            0.0
        } else {
            q / qs
        }
    }

    fn record(&self, t: f64, obs: &Observation) -> TraceRecord {
        TraceRecord {
            t,
            p: obs.p.clone(),
            q: obs.q.clone(),
            f_hz: obs.omega.iter().map(|w| w / TWO_PI).collect(),
            v: obs.v.clone(),
            delta_deg: self.state.iter().map(|s| wrap_angle(s.delta).to_degrees()).collect(),
            omega_sec: self.state.iter().map(|s| s.omega_sec).collect(),
            e_sec: self.state.iter().map(|s| s.e_sec).collect(),
            local_ok: self.latch.local_ok.clone(),
            stage2_ok: self.latch.stage2_ok.clone(),
            latched: self.latch.latched().to_vec(),
        }
    }

    /// Advance by one control step. Returns a trace record when this step is
    /// due for recording or a breaker closed during it.
    pub fn step(&mut self) -> Result<Option<TraceRecord>, SimError> {
        let t = self.time();
        let dt = self.config.dt_control;
        let n = self.params.len();

        // resets from the previous step take effect now
        if self.latch.latched() != self.closed.as_slice() {
            self.closed = self.latch.latched().to_vec();
            self.rebuild_network()?;
        }

        // (1) communication
        let broadcast: Vec<Broadcast> = (0..n)
            .map(|i| Broadcast {
                omega_sec: self.state[i].omega_sec,
                q_ratio: self.q_ratio(i, self.last_q[i]),
                delta: self.state[i].delta,
                local_ok: self.latch.local_ok[i],
            })
            .collect();
        self.comm.maybe_exchange(t, &broadcast);
        if self.config.phase_every_step {
            let deltas: Vec<f64> = self.state.iter().map(|s| s.delta).collect();
            self.comm.refresh_phases(&deltas);
        }

        // (2) network
        let mut obs = self.observe(t)?;

        // (3) sync checks
        let policy = self.config.gains;
        for i in 0..n {
            let w = policy.apply(self.comm.snapshot_at(i), &self.ibr_island, i, false);
            let df = (obs.omega[i] - self.params[i].omega_star) / TWO_PI;
            let dv = (obs.v[i] - self.params[i].v_star) / self.params[i].v_star;
            let dd = phase_mismatch(&self.state[i], &w).to_degrees();
            let raw = local_sync_check(&self.config.sync, df, dv, dd);
            self.latch.update_local(i, raw, t, self.config.sync.dwell_s);
        }
        for i in 0..n {
            let flags = self.comm.neighbor_flags(i);
            self.latch.stage2_ok[i] = stage2_check(self.latch.local_ok[i], &flags);
        }

        // (4) latches and closures
        let mut newly = Vec::new();
        for (k, b) in self.topology.breakers.iter().enumerate() {
            let inputs: Vec<bool> = self.adjacent[k].iter().map(|&i| self.latch.stage2_ok[i]).collect();
            if self.latch.latch_update(&b.id, &inputs).expect("breaker ids come from the topology") {
                newly.push(k);
            }
        }
        let closure = !newly.is_empty();
        if closure {
            for &k in &newly {
                self.closed[k] = true;
                self.events.push(t, EventKind::BreakerClosed { breaker: self.topology.breakers[k].id.clone() });
            }
            self.rebuild_network()?;
            let touched: Vec<usize> = {
                let mut v: Vec<usize> = newly
                    .iter()
                    .flat_map(|&k| self.adjacent[k].iter().map(|&i| self.ibr_island[i]))
                    .collect();
                v.sort();
                v.dedup();
                v
            };
            for isl in touched {
                let members: Vec<usize> = (0..n).filter(|&i| self.ibr_island[i] == isl).collect();
                let q_active = self.config.voltage_dapi
                    && members.iter().any(|&i| {
                        self.comm.snapshot_at(i).neighbors.iter().any(|nb| nb.b != 0.0 && self.ibr_island[nb.index] == isl)
                    });
                let (p_star, q_star) = apply_setpoint_reassignment(&mut self.params, &members, q_active)?;
                let ibrs = members.iter().map(|&i| self.topology.ibr_ids()[i].clone()).collect();
                self.events.push(t, EventKind::SetpointReassignment { ibrs, p_star, q_star });
            }
            obs = self.observe(t)?;
        }

        let record = if closure || self.step_index % self.config.record_every == 0 {
            Some(self.record(t, &obs))
        } else {
            None
        };

        // (5) integration with P and Q held
        let ramping = self.config.soft_start_ramp.is_some_and(|r| t < r);
        let freeze_v = ramping || !self.config.voltage_dapi;
        let snaps: Vec<NeighborSnapshot> =
            (0..n).map(|i| policy.apply(self.comm.snapshot_at(i), &self.ibr_island, i, true)).collect();
        let ramps: Vec<Option<SoftStartProfile>> = self.params.iter().map(|p| Self::ramp_for(&self.config, p)).collect();
        let params = &self.params;
        let deriv = |x: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(3 * n);
            for i in 0..n {
                let s = IbrState { delta: x[3 * i], omega_sec: x[3 * i + 1], e_sec: x[3 * i + 2] };
                let meas = Measurements {
                    p: obs.p[i],
                    q: obs.q[i],
                    omega: output_frequency(&params[i], &s, obs.p[i]),
                    v: output_voltage(&params[i], &s, obs.q[i], ramps[i].as_ref().map(|r| (r, t))),
                };
                let d: StateDerivative = state_derivative(&params[i], &s, &meas, &snaps[i], freeze_v);
                out.extend([d.delta, d.omega_sec, d.e_sec]);
            }
            out
        };
        let x: Vec<f64> = self.state.iter().flat_map(|s| [s.delta, s.omega_sec, s.e_sec]).collect();
        let next = integrate(deriv, &x, dt, self.config.integrator)
            .map_err(|k| SimError::NonFinite { t, ibr: self.topology.ibr_ids()[k / 3].clone() })?;
        for i in 0..n {
            self.state[i] = IbrState { delta: next[3 * i], omega_sec: next[3 * i + 1], e_sec: next[3 * i + 2] };
        }
        self.v_cmd = obs.v.clone();
        self.last_q = obs.q.clone();
        self.step_index += 1;
        Ok(record)
    }

    /// Solve and record the current instant without advancing.
    pub fn snapshot_record(&mut self) -> Result<TraceRecord, SimError> {
        let t = self.time();
        let obs = self.observe(t)?;
        Ok(self.record(t, &obs))
    }

    pub fn run(self) -> Result<RunOutput, SimError> {
        self.run_with(|_| Ok(()))
    }

    /// Run to the configured duration, handing every record to `sink` as it
    /// is produced.
    pub fn run_with<F>(mut self, mut sink: F) -> Result<RunOutput, SimError>
    where
        F: FnMut(&TraceRecord) -> Result<(), SimError>,
    {
        let steps = self.config.step_count();
        let mut trace = Vec::new();
        for _ in 0..steps {
            if let Some(r) = self.step()? {
                sink(&r)?;
                trace.push(r);
            }
        }
        let final_record = if steps > 0 { Some(self.snapshot_record()?) } else { None };
        Ok(RunOutput {
            ibr_ids: self.topology.ibr_ids().to_vec(),
            breaker_ids: self.topology.breakers.iter().map(|b| b.id.clone()).collect(),
            trace,
            events: self.events.clone(),
            final_state: self.state.clone(),
            final_params: self.params.clone(),
            final_closed: self.closed.clone(),
            final_record,
            max_balance_residual: self.max_balance_residual,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ibr_ids: Vec<IbrId>,
    pub breaker_ids: Vec<BreakerId>,
    pub trace: Vec<TraceRecord>,
    pub events: EventLog,
    pub final_state: Vec<IbrState>,
    /// Parameters after any setpoint reassignment.
    pub final_params: Vec<IbrParams>,
    pub final_closed: Vec<bool>,
    /// Signals at `t = duration`, after the last step. `None` for a zero
    /// duration run.
    pub final_record: Option<TraceRecord>,
    pub max_balance_residual: f64,
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, SimError> {
    Simulation::new(
        scenario.topology.clone(),
        scenario.params.clone(),
        scenario.initial_states(),
        scenario.config.clone(),
    )?
    .run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_derivative_leaves_state() {
        let x = vec![1.0, -2.0, 3.0];
        for m in [Integrator::ExplicitEuler, Integrator::Rk4] {
            assert_eq!(integrate(|x| vec![0.0; x.len()], &x, 0.1, m).unwrap(), x);
        }
    }

    #[test]
    fn euler_constant_rate() {
        let r = integrate(|_| vec![TWO_PI * 0.1], &[0.0], 0.1, Integrator::ExplicitEuler).unwrap();
        assert_relative_eq!(r[0], 0.062_831_853_071_795_86, max_relative = 1e-14);
    }

    #[test]
    fn non_finite_reported() {
        let r = integrate(|_| vec![0.0, f64::NAN], &[0.0, 0.0], 0.1, Integrator::Rk4);
        assert_eq!(r, Err(1));
    }

    #[test]
    fn rk4_matches_two_node_laplacian_exponential() {
        // ẋ = −L x with L = [[1, −1], [−1, 1]]: the mean is fixed and the
        // difference decays as e^{−2t}
        let f = |x: &[f64]| vec![-(x[0] - x[1]), -(x[1] - x[0])];
        let (x0, y0) = (1.0, -0.5);
        let mut x = vec![x0, y0];
        let dt = 1e-3;
        let mut worst: f64 = 0.0;
        for k in 1..=1000 {
            x = integrate(f, &x, dt, Integrator::Rk4).unwrap();
            let t = k as f64 * dt;
            let mean = 0.5 * (x0 + y0);
            let half = 0.5 * (x0 - y0) * (-2.0 * t).exp();
            worst = worst.max((x[0] - (mean + half)).abs()).max((x[1] - (mean - half)).abs());
        }
        assert!(worst < 1e-8, "max error {worst}");
    }

    #[test]
    fn gain_policy_masks() {
        let nb = NeighborValue { index: 1, omega_sec: 0.0, q_ratio: 1.0, delta: 0.0, local_ok: true, a: 1.0, b: 1.0, d: 1.0 };
        let p = GainPolicy::default();
        let same = p.dynamic_weights(&nb, true);
        assert_eq!((same.a, same.b, same.d), (1.0, 1.0, 0.0));
        let apart = p.dynamic_weights(&nb, false);
        assert_eq!((apart.a, apart.b, apart.d), (0.0, 0.0, 1.0));
        let off = GainPolicy { phase_consensus: false, after_closure: false };
        assert_eq!(off.dynamic_weights(&nb, false).d, 0.0);
        assert_eq!(off.check_weights(&nb, false).d, 1.0);
        let after = GainPolicy { phase_consensus: true, after_closure: true };
        assert_eq!(after.dynamic_weights(&nb, true).d, 1.0);
    }
}
