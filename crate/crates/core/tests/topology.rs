mod common;

use std::collections::BTreeSet;

use nmg_sim::topology::{BreakerPosition, BreakerStates, CommGains, CommLink, Violation};
use nmg_sim::{BusId, IbrId};
use proptest::prelude::*;

use common::*;

/// Random multigraph of `n` buses: lines (a, b, has_breaker) with a ≠ b.
fn random_topology(n: usize, edges: &[(usize, usize, bool)]) -> nmg_sim::NmgTopology {
    let mut t = ring(n, unit_gains(), &vec![(1e4, 1e3); n]);
    t.lines.clear();
    t.breakers.clear();
    for (k, &(a, b, br)) in edges.iter().enumerate() {
        let (a, b) = (a % n, b % n);
        if a == b {
            continue;
        }
        let breaker = br.then(|| nmg_sim::BreakerId(format!("x{k}")));
        t.lines.push(nmg_sim::topology::TieLine {
            id: nmg_sim::LineId(format!("e{k}")),
            from_bus: BusId(format!("mg{}", a + 1)),
            to_bus: BusId(format!("mg{}", b + 1)),
            resistance: 0.1,
            reactance: 0.2,
            breaker: breaker.clone(),
        });
        if let Some(id) = breaker {
            t.breakers.push(nmg_sim::topology::BreakerSpec {
                id,
                line: nmg_sim::LineId(format!("e{k}")),
                adjacent_ibrs: vec![IbrId(format!("ibr{}", a + 1))],
            });
        }
    }
    t
}

fn states(t: &nmg_sim::NmgTopology, closed: &[bool]) -> BreakerStates {
    t.breakers
        .iter()
        .zip(closed.iter().cycle())
        .map(|(b, &c)| (b.id.clone(), if c { BreakerPosition::Closed } else { BreakerPosition::Open }))
        .collect()
}

/// Connected components by repeated relaxation over the conducting lines.
fn oracle_component_count(t: &nmg_sim::NmgTopology, st: &BreakerStates) -> usize {
    let n = t.buses.len();
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for line in &t.lines {
            let conducts = match &line.breaker {
                None => true,
                Some(b) => st.get(b) == Some(&BreakerPosition::Closed),
            };
            if !conducts {
                continue;
            }
            let a = t.buses.iter().position(|x| x.id == line.from_bus).unwrap();
            let b = t.buses.iter().position(|x| x.id == line.to_bus).unwrap();
            let m = label[a].min(label[b]);
            if label[a] != m || label[b] != m {
                label[a] = m;
                label[b] = m;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    label.iter().collect::<BTreeSet<_>>().len()
}

#[test]
fn default_scenario_validates_clean() {
    let sc = default_scenario();
    assert!(sc.topology.validate().is_ok());
    assert_eq!(sc.topology.ibr_ids().len(), 7);
}

#[test]
fn default_islands_open_closed_and_one_breaker() {
    let t = default_scenario().topology;
    let open = BreakerStates::new();
    let islands = t.electrical_islands(&open);
    assert_eq!(islands.len(), 7);
    assert!(islands.iter().all(|s| s.len() == 1));

    let all: BreakerStates = t.breakers.iter().map(|b| (b.id.clone(), BreakerPosition::Closed)).collect();
    assert_eq!(t.electrical_islands(&all).len(), 1);

    let mut one = BreakerStates::new();
    one.insert(nmg_sim::BreakerId::from("b12"), BreakerPosition::Closed);
    let islands = t.electrical_islands(&one);
    assert_eq!(islands.len(), 6);
    let pair: BTreeSet<BusId> = [BusId::from("mg1"), BusId::from("mg2")].into_iter().collect();
    assert!(islands.contains(&pair));
}

#[test]
fn ring_neighbor_example() {
    let t = default_scenario().topology;
    let nb = t.comm_neighbors(&IbrId::from("ibr3")).unwrap();
    let ids: Vec<&str> = nb.iter().map(|n| n.id.as_str()).collect();
    assert_eq!(ids, vec!["ibr2", "ibr4"]);
    assert!(nb.iter().all(|n| n.gains == CommGains { a: 1.0, b: 1.0, d: 1.0 }));
    assert!(t.comm_neighbors(&IbrId::from("ibr9")).is_err());
}

#[test]
fn dangling_bus_reference() {
    let mut t = ring(3, unit_gains(), &[(1.0, 0.0); 3]);
    t.lines[0].to_bus = BusId::from("nowhere");
    let v = t.validate().violations;
    assert_eq!(v.iter().filter(|x| matches!(x, Violation::DanglingReference { .. })).count(), 1);
}

#[test]
fn single_bus_without_lines_is_valid() {
    let mut t = ring(1, unit_gains(), &[(1e5, 0.0)]);
    t.comm.links.clear();
    assert!(t.validate().is_ok());
}

proptest! {
    #[test]
    fn islands_partition_buses(
        n in 1usize..8,
        edges in prop::collection::vec((0usize..8, 0usize..8, any::<bool>()), 0..14),
        closed in prop::collection::vec(any::<bool>(), 1..14),
    ) {
        let t = random_topology(n, &edges);
        let st = states(&t, &closed);
        let islands = t.electrical_islands(&st);
        let mut seen = BTreeSet::new();
        for s in &islands {
            prop_assert!(!s.is_empty());
            for b in s {
                prop_assert!(seen.insert(b.clone()), "bus {} in two islands", b);
            }
        }
        let all: BTreeSet<BusId> = t.buses.iter().map(|b| b.id.clone()).collect();
        prop_assert_eq!(seen, all);
        prop_assert_eq!(islands.len(), oracle_component_count(&t, &st));
    }

    #[test]
    fn closing_never_splits(
        n in 2usize..8,
        edges in prop::collection::vec((0usize..8, 0usize..8, any::<bool>()), 1..14),
        closed in prop::collection::vec(any::<bool>(), 1..14),
        pick in 0usize..14,
    ) {
        let t = random_topology(n, &edges);
        prop_assume!(!t.breakers.is_empty());
        let mut st = states(&t, &closed);
        let b = t.breakers[pick % t.breakers.len()].id.clone();
        st.insert(b.clone(), BreakerPosition::Open);
        let open_count = t.electrical_islands(&st).len();
        st.insert(b, BreakerPosition::Closed);
        let closed_count = t.electrical_islands(&st).len();
        prop_assert!(closed_count <= open_count);
        prop_assert!(open_count - closed_count <= 1);
    }

    #[test]
    fn neighbor_relation_is_symmetric(
        links in prop::collection::vec((0usize..6, 0usize..6, 0u8..2, 0u8..2, 0u8..2), 0..15),
    ) {
        let mut t = ring(6, unit_gains(), &[(1.0, 0.0); 6]);
        t.comm.links = links
            .iter()
            .filter(|l| l.0 != l.1)
            .map(|&(i, j, a, b, d)| CommLink {
                i: IbrId(format!("ibr{}", i + 1)),
                j: IbrId(format!("ibr{}", j + 1)),
                gains: CommGains { a: a as f64, b: b as f64, d: d as f64 },
            })
            .collect();
        for i in t.ibr_ids() {
            for n in t.comm_neighbors(i).unwrap() {
                prop_assert!(n.gains.is_active());
                let back = t.comm_neighbors(n.id).unwrap();
                prop_assert!(back.iter().any(|m| m.id == i));
            }
        }
    }
}
