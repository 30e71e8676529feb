//! Scenario files.
//!
//! A scenario is a TOML document with sections `[sim]`, `[comm]`, `[sync]`,
//! one `[ibr.<id>]`, `[bus.<id>]` and `[line.<id>]` table per element, an
//! array of `[[commlink]]` entries and optional `[breaker.<id>]` overrides.
//! Physical keys carry their unit in the name. Frequencies and the
//! frequency droop are given in Hz and converted to rad/s here. Unknown keys
//! are rejected. See `scenarios/default_7mg.toml` for a complete example.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{IbrParams, IbrState};
use crate::engine::{GainPolicy, Integrator, SimConfig};
use crate::error::ScenarioError;
use crate::network::NewtonOptions;
use crate::sync::SyncCheckConfig;
use crate::topology::{
    BreakerId, BreakerSpec, BusId, CommGains, CommGraph, CommLink, IbrId, LineId, LoadModel, LoadSpec, MgBus,
    NmgTopology, TieLine,
};
use crate::TWO_PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt_control_s: f64,
    pub duration_s: f64,
    pub integrator: Integrator,
    /// Zero disables the ramp.
    pub soft_start_ramp_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_dapi: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_consensus: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_consensus_after_closure: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommSection {
    pub period_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_every_step: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    pub freq_tol_hz: f64,
    pub volt_tol_frac: f64,
    pub phase_tol_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbrSection {
    pub bus: String,
    pub omega_star_hz: f64,
    pub v_star_v: f64,
    pub m_hz_per_w: f64,
    pub n_v_per_var: f64,
    pub p_star_w: f64,
    pub q_star_var: f64,
    pub k: f64,
    pub kappa: f64,
    pub xi: f64,
    pub delta0_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BusSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_p_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_q_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_model: Option<LoadModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub from: String,
    pub to: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breaker: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommLinkEntry {
    pub i: String,
    pub j: String,
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakerSection {
    pub adjacent_ibrs: Vec<String>,
}

/// The file as written, before unit conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm: Option<CommSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncSection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ibr: BTreeMap<String, IbrSection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bus: BTreeMap<String, BusSection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub line: BTreeMap<String, LineSection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub breaker: BTreeMap<String, BreakerSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commlink: Vec<CommLinkEntry>,
}

/// A parsed and validated scenario. IBRs, buses and lines are ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: NmgTopology,
    /// In IBR order, frequencies in rad/s.
    pub params: Vec<IbrParams>,
    /// Initial phases (rad), in IBR order.
    pub delta0: Vec<f64>,
    pub config: SimConfig,
    pub file: ScenarioFile,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn param_key(name: &str) -> &'static str {
    match name {
        "m" => "m_hz_per_w",
        "n" => "n_v_per_var",
        "k" => "k",
        "kappa" => "kappa",
        "xi" => "xi",
        "omega_star" => "omega_star_hz",
        "v_star" => "v_star_v",
        "q_star" => "q_star_var",
        _ => "?",
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Syntax {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        Scenario::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        Scenario::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(&self.file).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    pub fn from_file(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
        let mut errors = Vec::new();
        for (name, present) in [("sim", file.sim.is_some()), ("comm", file.comm.is_some()), ("sync", file.sync.is_some())] {
            if !present {
                errors.push(format!("missing section: {name}"));
            }
        }
        if file.ibr.is_empty() {
            errors.push("missing section: ibr".to_string());
        }
        if file.bus.is_empty() {
            errors.push("missing section: bus".to_string());
        }
        let (Some(sim), Some(comm), Some(sync)) = (&file.sim, &file.comm, &file.sync) else {
            return Err(ScenarioError::Semantic(errors));
        };

        // buses, with IBRs attached
        let mut buses: Vec<MgBus> = Vec::new();
        for (id, b) in &file.bus {
            let load = match (b.load_p_w, b.load_q_var) {
                (None, None) => None,
                (p, q) => {
                    if p.is_none() || q.is_none() {
                        errors.push(format!("bus.{id}: load_p_w and load_q_var must be given together"));
                    }
                    Some(LoadSpec {
                        p_nominal: p.unwrap_or(0.0),
                        q_nominal: q.unwrap_or(0.0),
                        model: b.load_model.unwrap_or_default(),
                    })
                }
            };
            buses.push(MgBus { id: BusId::from(id.as_str()), ibr: None, load });
        }
        for (id, ibr) in &file.ibr {
            match buses.iter_mut().find(|b| b.id.as_str() == ibr.bus) {
                None => errors.push(format!("ibr.{id}.bus references unknown bus `{}`", ibr.bus)),
                Some(b) => {
                    if let Some(other) = &b.ibr {
                        errors.push(format!("bus `{}` hosts more than one IBR (`{other}`, `{id}`)", ibr.bus));
                    } else {
                        b.ibr = Some(IbrId::from(id.as_str()));
                    }
                }
            }
        }

        let ibr_on = |bus: &str| file.ibr.iter().find(|(_, s)| s.bus == bus).map(|(id, _)| IbrId::from(id.as_str()));
        let mut lines = Vec::new();
        let mut breakers = Vec::new();
        for (id, l) in &file.line {
            let breaker = l.breaker.as_ref().map(|b| BreakerId::from(b.as_str()));
            if let Some(bid) = &breaker {
                let adjacent_ibrs = match file.breaker.get(bid.as_str()) {
                    Some(over) => over.adjacent_ibrs.iter().map(|s| IbrId::from(s.as_str())).collect(),
                    None => [ibr_on(&l.from), ibr_on(&l.to)].into_iter().flatten().collect(),
                };
                breakers.push(BreakerSpec { id: bid.clone(), line: LineId::from(id.as_str()), adjacent_ibrs });
            }
            lines.push(TieLine {
                id: LineId::from(id.as_str()),
                from_bus: BusId::from(l.from.as_str()),
                to_bus: BusId::from(l.to.as_str()),
                resistance: l.r_ohm,
                reactance: l.x_ohm,
                breaker,
            });
        }
        breakers.sort_by(|a, b| a.id.cmp(&b.id));
        for id in file.breaker.keys() {
            if !breakers.iter().any(|b| b.id.as_str() == id) {
                errors.push(format!("breaker.{id} does not belong to any line"));
            }
        }

        let links = file
            .commlink
            .iter()
            .map(|c| CommLink {
                i: IbrId::from(c.i.as_str()),
                j: IbrId::from(c.j.as_str()),
                gains: CommGains { a: c.a, b: c.b, d: c.d },
            })
            .collect();
        let topology = NmgTopology {
            buses,
            lines,
            breakers,
            comm: CommGraph {
                nodes: file.ibr.keys().map(|k| IbrId::from(k.as_str())).collect(),
                links,
                period: comm.period_s,
            },
        };
        errors.extend(topology.validate().structural().map(|v| v.to_string()));

        let mut params = Vec::new();
        let mut delta0 = Vec::new();
        for (id, s) in &file.ibr {
            let p = IbrParams {
                omega_star: TWO_PI * s.omega_star_hz,
                v_star: s.v_star_v,
                m: TWO_PI * s.m_hz_per_w,
                n: s.n_v_per_var,
                p_star: s.p_star_w,
                q_star: s.q_star_var,
                k: s.k,
                kappa: s.kappa,
                xi: s.xi,
            };
            let ibr_id = IbrId::from(id.as_str());
            let needs_q = topology.comm.links.iter().any(|l| l.gains.b != 0.0 && (l.i == ibr_id || l.j == ibr_id));
            for name in p.violations(needs_q) {
                let key = param_key(name);
                let what = if name == "q_star" { "must be nonzero when voltage consensus is active" } else { "out of range" };
                errors.push(format!("ibr.{id}.{key} {what}"));
            }
            params.push(p);
            delta0.push(s.delta0_deg.to_radians());
        }

        let config = SimConfig {
            dt_control: sim.dt_control_s,
            duration: sim.duration_s,
            integrator: sim.integrator,
            soft_start_ramp: if sim.soft_start_ramp_s == 0.0 { None } else { Some(sim.soft_start_ramp_s) },
            record_every: sim.record_every.unwrap_or(1),
            sync: SyncCheckConfig {
                freq_tol_hz: sync.freq_tol_hz,
                volt_tol_frac: sync.volt_tol_frac,
                phase_tol_deg: sync.phase_tol_deg,
                dwell_s: sync.dwell_s.unwrap_or(0.0),
            },
            voltage_dapi: sim.voltage_dapi.unwrap_or(true),
            gains: GainPolicy {
                phase_consensus: sim.phase_consensus.unwrap_or(true),
                after_closure: sim.phase_consensus_after_closure.unwrap_or(false),
            },
            phase_every_step: comm.phase_every_step.unwrap_or(false),
            comm_delay: comm.delay_s.unwrap_or(0.0),
            newton: NewtonOptions::default(),
        };
        errors.extend(config.violations());

        if !errors.is_empty() {
            return Err(ScenarioError::Semantic(errors));
        }
        Ok(Scenario { topology, params, delta0, config, file })
    }

    pub fn initial_states(&self) -> Vec<IbrState> {
        self.delta0.iter().map(|&delta| IbrState { delta, omega_sec: 0.0, e_sec: 0.0 }).collect()
    }
}
