//! Three-stage breaker synchronization logic.
//!
//! Stage 1 is a per-inverter AND of frequency, voltage and phase checks.
//! Stage 2 ANDs the local flag with the neighbors' flags received over the
//! communication channel. Stage 3 is a set-dominant SR latch per breaker,
//! set when every adjacent inverter passes stage 2 and cleared only by an
//! explicit reset.

use crate::error::TopologyError;
use crate::topology::BreakerId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncCheckConfig {
    /// |Δf| bound (Hz).
    pub freq_tol_hz: f64,
    /// |ΔV| bound as a fraction of V*.
    pub volt_tol_frac: f64,
    /// Σ|Δδ| bound (degrees).
    pub phase_tol_deg: f64,
    /// Time the three conditions must hold continuously before the local
    /// flag asserts (s). Zero disables the dwell.
    pub dwell_s: f64,
}

impl Default for SyncCheckConfig {
    fn default() -> Self {
        SyncCheckConfig { freq_tol_hz: 0.01, volt_tol_frac: 0.01, phase_tol_deg: 0.1, dwell_s: 0.0 }
    }
}

impl SyncCheckConfig {
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !(self.freq_tol_hz > 0.0) {
            v.push("freq_tol_hz");
        }
        if !(self.volt_tol_frac > 0.0) {
            v.push("volt_tol_frac");
        }
        if !(self.phase_tol_deg > 0.0) {
            v.push("phase_tol_deg");
        }
        if !(self.dwell_s >= 0.0) {
            v.push("dwell_s");
        }
        v
    }
}

/// IEEE 1547-2018 synchronization limits by DER rating, kept for reference.
/// The simulator only uses [`SyncCheckConfig::default`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ieee1547Limit {
    pub rating_kva: &'static str,
    pub freq_hz: f64,
    pub volt_frac: f64,
    pub phase_deg: f64,
}

pub const IEEE_1547_LIMITS: [Ieee1547Limit; 3] = [
    Ieee1547Limit { rating_kva: "< 500", freq_hz: 0.3, volt_frac: 0.10, phase_deg: 20.0 },
    Ieee1547Limit { rating_kva: "500-1500", freq_hz: 0.2, volt_frac: 0.05, phase_deg: 15.0 },
    Ieee1547Limit { rating_kva: "> 1500", freq_hz: 0.1, volt_frac: 0.03, phase_deg: 10.0 },
];

/// Stage 1. Strict inequalities, so values exactly at tolerance fail.
pub fn local_sync_check(config: &SyncCheckConfig, df_hz: f64, dv_frac: f64, phase_sum_deg: f64) -> bool {
    df_hz.abs() < config.freq_tol_hz && dv_frac.abs() < config.volt_tol_frac && phase_sum_deg < config.phase_tol_deg
}

/// Stage 2. An empty neighbor list passes.
pub fn stage2_check(own: bool, neighbors: &[bool]) -> bool {
    own && neighbors.iter().all(|&b| b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncLatchState {
    pub local_ok: Vec<bool>,
    pub stage2_ok: Vec<bool>,
    breakers: Vec<BreakerId>,
    latched: Vec<bool>,
    /// Start of the current run of raw local passes, per IBR.
    pass_since: Vec<Option<f64>>,
}

impl SyncLatchState {
    pub fn new(ibr_count: usize, breakers: Vec<BreakerId>) -> Self {
        let nb = breakers.len();
        SyncLatchState {
            local_ok: vec![false; ibr_count],
            stage2_ok: vec![false; ibr_count],
            breakers,
            latched: vec![false; nb],
            pass_since: vec![None; ibr_count],
        }
    }

    /// Record the raw stage-1 result for IBR `i` at time `t` and return the
    /// dwell-qualified flag.
    pub fn update_local(&mut self, i: usize, raw: bool, t: f64, dwell_s: f64) -> bool {
        let ok = if raw {
            let since = *self.pass_since[i].get_or_insert(t);
            t - since + 1e-12 >= dwell_s
        } else {
            self.pass_since[i] = None;
            false
        };
        self.local_ok[i] = ok;
        ok
    }

    fn index(&self, breaker: &BreakerId) -> Result<usize, TopologyError> {
        self.breakers
            .iter()
            .position(|b| b == breaker)
            .ok_or_else(|| TopologyError::UnknownBreaker(breaker.clone()))
    }

    pub fn is_latched(&self, breaker: &BreakerId) -> Result<bool, TopologyError> {
        Ok(self.latched[self.index(breaker)?])
    }

    pub fn latched(&self) -> &[bool] {
        &self.latched
    }

    /// Stage 3. Returns true when this call set the latch (a closure event).
    pub fn latch_update(&mut self, breaker: &BreakerId, adjacent_stage2: &[bool]) -> Result<bool, TopologyError> {
        let k = self.index(breaker)?;
        if self.latched[k] {
            return Ok(false);
        }
        if !adjacent_stage2.is_empty() && adjacent_stage2.iter().all(|&b| b) {
            self.latched[k] = true;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn reset_breaker(&mut self, breaker: &BreakerId) -> Result<(), TopologyError> {
        let k = self.index(breaker)?;
        self.latched[k] = false;
        Ok(())
    }
}
