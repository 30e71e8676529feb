#![allow(dead_code)]

use std::path::PathBuf;

use nmg_sim::controller::IbrParams;
use nmg_sim::topology::{
    BreakerSpec, CommGains, CommGraph, CommLink, LoadModel, LoadSpec, MgBus, TieLine,
};
use nmg_sim::{BreakerId, BusId, IbrId, LineId, NmgTopology, Scenario, TWO_PI};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn default_scenario() -> Scenario {
    Scenario::load(scenario_path("default_7mg.toml")).expect("shipped scenario parses")
}

pub fn two_mg_scenario() -> Scenario {
    Scenario::load(scenario_path("two_mg.toml")).expect("shipped scenario parses")
}

pub fn v_star() -> f64 {
    480.0 * 2f64.sqrt() / 3f64.sqrt()
}

pub fn params(p_star: f64, q_star: f64) -> IbrParams {
    IbrParams {
        omega_star: TWO_PI * 60.0,
        v_star: v_star(),
        m: TWO_PI * 1e-6,
        n: v_star() / 10.0 / 1e6,
        p_star,
        q_star,
        k: 0.3,
        kappa: 0.1,
        xi: 0.1,
    }
}

/// `n` microgrids `mg1..mgn` with inverters `ibr1..ibrn`, joined in a ring by
/// breakered lines `l{i}{j}` / `b{i}{j}` that double as comm links. Two
/// microgrids share one line.
pub fn ring(n: usize, gains: CommGains, loads: &[(f64, f64)]) -> NmgTopology {
    let buses = (1..=n)
        .map(|i| MgBus {
            id: BusId(format!("mg{i}")),
            ibr: Some(IbrId(format!("ibr{i}"))),
            load: Some(LoadSpec {
                p_nominal: loads[i - 1].0,
                q_nominal: loads[i - 1].1,
                model: LoadModel::ConstantImpedance,
            }),
        })
        .collect();
    let mut lines = Vec::new();
    let mut breakers = Vec::new();
    let mut links = Vec::new();
    let edges = if n == 2 { 1 } else if n < 2 { 0 } else { n };
    for i in 1..=edges {
        let j = i % n + 1;
        lines.push(TieLine {
            id: LineId(format!("l{i}{j}")),
            from_bus: BusId(format!("mg{i}")),
            to_bus: BusId(format!("mg{j}")),
            resistance: 0.1,
            reactance: 0.3,
            breaker: Some(BreakerId(format!("b{i}{j}"))),
        });
        breakers.push(BreakerSpec {
            id: BreakerId(format!("b{i}{j}")),
            line: LineId(format!("l{i}{j}")),
            adjacent_ibrs: vec![IbrId(format!("ibr{i}")), IbrId(format!("ibr{j}"))],
        });
        links.push(CommLink { i: IbrId(format!("ibr{i}")), j: IbrId(format!("ibr{j}")), gains });
    }
    NmgTopology {
        buses,
        lines,
        breakers,
        comm: CommGraph { nodes: (1..=n).map(|i| IbrId(format!("ibr{i}"))).collect(), links, period: 1.0 },
    }
}

pub fn unit_gains() -> CommGains {
    CommGains { a: 1.0, b: 1.0, d: 1.0 }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
