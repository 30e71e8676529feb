//! Periodic neighbor exchange with zero-order hold.
//!
//! Every `period` seconds each inverter publishes its frequency correction,
//! reactive loading ratio, phase and local sync flag. Receivers hold the last
//! delivered values until the next exchange. An optional transport delay
//! postpones delivery of each exchange without changing its sample time.

use std::collections::VecDeque;

use crate::controller::{NeighborSnapshot, NeighborValue};
use crate::error::TopologyError;
use crate::topology::{CommGains, CommGraph, IbrId};

/// Values one inverter publishes at an exchange.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Broadcast {
    pub omega_sec: f64,
    pub q_ratio: f64,
    pub delta: f64,
    pub local_ok: bool,
}

#[derive(Debug, Clone)]
struct Link {
    neighbor: usize,
    gains: CommGains,
}

#[derive(Debug, Clone)]
pub struct CommBus {
    period: f64,
    delay: f64,
    ids: Vec<IbrId>,
    links: Vec<Vec<Link>>,
    mailboxes: Vec<NeighborSnapshot>,
    next_slot: u64,
    last_exchange_time: Option<f64>,
    pending: VecDeque<(f64, f64, Vec<Broadcast>)>,
}

impl CommBus {
    pub fn new(graph: &CommGraph, delay: f64) -> Self {
        let ids = graph.nodes.clone();
        let index = |id: &IbrId| ids.iter().position(|x| x == id);
        let mut links: Vec<Vec<Link>> = vec![Vec::new(); ids.len()];
        for l in &graph.links {
            if let (Some(i), Some(j)) = (index(&l.i), index(&l.j)) {
                if i == j {
                    continue;
                }
                links[i].push(Link { neighbor: j, gains: l.gains });
                links[j].push(Link { neighbor: i, gains: l.gains });
            }
        }
        for ls in &mut links {
            ls.sort_by_key(|l| l.neighbor);
        }
        let n = ids.len();
        CommBus {
            period: graph.period,
            delay: delay.max(0.0),
            ids,
            links,
            mailboxes: vec![NeighborSnapshot::default(); n],
            next_slot: 0,
            last_exchange_time: None,
            pending: VecDeque::new(),
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Sample time of the most recent exchange, if any.
    pub fn last_exchange_time(&self) -> Option<f64> {
        self.last_exchange_time
    }

    fn eps(&self) -> f64 {
        1e-9 * self.period.max(1e-12)
    }

    /// Exchange if `t` has reached the next multiple of the period (always at
    /// the first call), and deliver any exchange whose delay has elapsed.
    /// Returns whether any mailbox changed.
    pub fn maybe_exchange(&mut self, t: f64, values: &[Broadcast]) -> bool {
        assert_eq!(values.len(), self.ids.len(), "one broadcast per IBR");
        let eps = self.eps();
        if t + eps >= self.next_slot as f64 * self.period {
            self.next_slot = ((t + eps) / self.period).floor() as u64 + 1;
            self.last_exchange_time = Some(t);
            self.pending.push_back((t + self.delay, t, values.to_vec()));
        }
        let mut delivered = false;
        while let Some((at, _, _)) = self.pending.front() {
            if *at > t + eps {
                break;
            }
            let (_, sample_t, vals) = self.pending.pop_front().expect("front checked");
            self.deliver(sample_t, &vals);
            delivered = true;
        }
        delivered
    }

    fn deliver(&mut self, sample_t: f64, values: &[Broadcast]) {
        for (i, links) in self.links.iter().enumerate() {
            let neighbors = links
                .iter()
                .filter(|l| l.gains.is_active())
                .map(|l| {
                    let v = values[l.neighbor];
                    NeighborValue {
                        index: l.neighbor,
                        omega_sec: v.omega_sec,
                        q_ratio: v.q_ratio,
                        delta: v.delta,
                        local_ok: v.local_ok,
                        a: l.gains.a,
                        b: l.gains.b,
                        d: l.gains.d,
                    }
                })
                .collect();
            self.mailboxes[i] = NeighborSnapshot { neighbors, snapshot_time: sample_t };
        }
    }

    /// Overwrite held neighbor phases with current values, leaving the other
    /// held quantities and the snapshot time untouched.
    pub fn refresh_phases(&mut self, deltas: &[f64]) {
        for mb in &mut self.mailboxes {
            for nb in &mut mb.neighbors {
                nb.delta = deltas[nb.index];
            }
        }
    }

    pub fn snapshot_for(&self, ibr: &IbrId) -> Result<&NeighborSnapshot, TopologyError> {
        self.ids
            .iter()
            .position(|x| x == ibr)
            .map(|i| &self.mailboxes[i])
            .ok_or_else(|| TopologyError::UnknownIbr(ibr.clone()))
    }

    pub fn snapshot_at(&self, index: usize) -> &NeighborSnapshot {
        &self.mailboxes[index]
    }

    /// Neighbor local-sync flags as seen by IBR `index`, one per structural
    /// link. A flag never delivered (inactive link, or before the first
    /// delivery) reads false.
    pub fn neighbor_flags(&self, index: usize) -> Vec<bool> {
        let mb = &self.mailboxes[index];
        self.links[index]
            .iter()
            .map(|l| mb.neighbors.iter().find(|nb| nb.index == l.neighbor).map(|nb| nb.local_ok).unwrap_or(false))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::fixtures::ring;
    use proptest::prelude::*;

    fn unit() -> CommGains {
        CommGains { a: 1.0, b: 1.0, d: 1.0 }
    }

    fn values(n: usize, base: f64) -> Vec<Broadcast> {
        (0..n)
            .map(|i| Broadcast { omega_sec: base + i as f64, q_ratio: 1.0, delta: 0.1 * i as f64, local_ok: i % 2 == 0 })
            .collect()
    }

    #[test]
    fn crossing_semantics() {
        let topo = ring(7, unit());
        let mut bus = CommBus::new(&topo.comm, 0.0);
        assert!(bus.maybe_exchange(0.0, &values(7, 0.0)));
        assert!(!bus.maybe_exchange(0.5, &values(7, 1.0)));
        assert!(!bus.maybe_exchange(0.9, &values(7, 2.0)));
        assert_eq!(bus.snapshot_at(0).snapshot_time, 0.0);
        assert!(bus.maybe_exchange(1.0111, &values(7, 3.0)));
        assert_eq!(bus.snapshot_at(0).snapshot_time, 1.0111);
        // next slot is 2.0, not 2.0111
        assert!(!bus.maybe_exchange(1.99, &values(7, 3.0)));
        assert!(bus.maybe_exchange(2.0, &values(7, 3.0)));
    }

    #[test]
    fn accumulated_step_still_crosses() {
        // 90 steps of 11.1 ms land just short of 1 s in floating point
        let topo = ring(3, unit());
        let mut bus = CommBus::new(&topo.comm, 0.0);
        let mut t = 0.0;
        let mut times = Vec::new();
        for _ in 0..400 {
            if bus.maybe_exchange(t, &values(3, t)) {
                times.push(t);
            }
            t += 0.0111;
        }
        assert_eq!(times.len(), 5);
        for (k, &te) in times.iter().enumerate() {
            assert!(te + 1e-9 >= k as f64 && te < k as f64 + 0.0111 + 1e-9, "exchange {k} at {te}");
        }
    }

    #[test]
    fn hold_between_exchanges() {
        let topo = ring(7, unit());
        let mut bus = CommBus::new(&topo.comm, 0.0);
        bus.maybe_exchange(5.0, &values(7, 0.0));
        let id = IbrId::from("ibr3");
        let before = bus.snapshot_for(&id).unwrap().clone();
        assert_eq!(before.snapshot_time, 5.0);
        bus.maybe_exchange(5.9, &values(7, 9.0));
        assert_eq!(bus.snapshot_for(&id).unwrap(), &before);
        let idx: Vec<usize> = before.neighbors.iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 3]);
        assert_eq!(before.neighbors[0].omega_sec, 1.0);
        assert!(bus.snapshot_for(&IbrId::from("nope")).is_err());
    }

    #[test]
    fn zero_gains_give_empty_snapshot_and_false_flags() {
        let topo = ring(7, CommGains::default());
        let mut bus = CommBus::new(&topo.comm, 0.0);
        let mut vals = values(7, 0.0);
        vals.iter_mut().for_each(|v| v.local_ok = true);
        bus.maybe_exchange(0.0, &vals);
        for i in 0..7 {
            assert!(bus.snapshot_at(i).neighbors.is_empty());
            assert_eq!(bus.neighbor_flags(i), vec![false, false]);
        }
    }

    #[test]
    fn phase_refresh_keeps_other_values() {
        let topo = ring(3, unit());
        let mut bus = CommBus::new(&topo.comm, 0.0);
        bus.maybe_exchange(0.0, &values(3, 0.0));
        bus.refresh_phases(&[7.0, 8.0, 9.0]);
        let s = bus.snapshot_at(0);
        assert_eq!(s.snapshot_time, 0.0);
        assert_eq!(s.neighbors[0].delta, 8.0);
        assert_eq!(s.neighbors[0].omega_sec, 1.0);
    }

    #[test]
    fn transport_delay_postpones_delivery() {
        let topo = ring(3, unit());
        let mut bus = CommBus::new(&topo.comm, 0.25);
        assert!(!bus.maybe_exchange(0.0, &values(3, 0.0)));
        assert!(bus.snapshot_at(0).neighbors.is_empty());
        assert!(bus.maybe_exchange(0.25, &values(3, 5.0)));
        assert_eq!(bus.snapshot_at(0).snapshot_time, 0.0);
        assert_eq!(bus.snapshot_at(0).neighbors[0].omega_sec, 1.0);
    }

    proptest! {
        #[test]
        fn staleness_bound(dt in 0.001f64..0.05, period in 0.05f64..2.0) {
            let topo = ring(3, unit());
            let mut topo = topo;
            topo.comm.period = period;
            let mut bus = CommBus::new(&topo.comm, 0.0);
            let mut t = 0.0;
            let mut prev = bus.snapshot_at(0).clone();
            for _ in 0..2000 {
                let changed = bus.maybe_exchange(t, &values(3, t));
                let s = bus.snapshot_at(0).clone();
                prop_assert!(t - s.snapshot_time < period + dt);
                if !changed {
                    prop_assert_eq!(&s, &prev);
                }
                prev = s;
                t += dt;
            }
        }
    }
}
