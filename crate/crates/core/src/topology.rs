//! Static structure of the network of microgrids: buses, tie-lines, breakers,
//! loads and the communication graph between inverters.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::TopologyError;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Bus identifier.
    BusId
);
id_type!(
    /// Grid-forming inverter identifier.
    IbrId
);
id_type!(
    /// Tie-line identifier.
    LineId
);
id_type!(
    /// Breaker identifier.
    BreakerId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LoadModel {
    #[default]
    ConstantImpedance,
    ConstantPower,
}

/// Aggregate load of one bus, specified at nominal voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadSpec {
    /// W
    pub p_nominal: f64,
    /// VAr
    pub q_nominal: f64,
    pub model: LoadModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgBus {
    pub id: BusId,
    pub ibr: Option<IbrId>,
    pub load: Option<LoadSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieLine {
    pub id: LineId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Ω
    pub resistance: f64,
    /// Ω
    pub reactance: f64,
    pub breaker: Option<BreakerId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakerSpec {
    pub id: BreakerId,
    pub line: LineId,
    /// IBRs whose second-stage sync outputs gate this breaker.
    pub adjacent_ibrs: Vec<IbrId>,
}

/// Consensus gains of one undirected communication link. Storing one entry
/// per unordered pair keeps `a_ij = a_ji` (and likewise `b`, `d`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CommGains {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

impl CommGains {
    pub fn is_active(&self) -> bool {
        self.a != 0.0 || self.b != 0.0 || self.d != 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommLink {
    pub i: IbrId,
    pub j: IbrId,
    pub gains: CommGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    /// All IBRs taking part in the exchange, in id order.
    pub nodes: Vec<IbrId>,
    pub links: Vec<CommLink>,
    /// Exchange period T_com (s).
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommNeighbor<'a> {
    pub id: &'a IbrId,
    pub gains: CommGains,
}

impl CommGraph {
    /// Neighbors of `ibr` joined by at least one nonzero gain.
    pub fn comm_neighbors(&self, ibr: &IbrId) -> Result<Vec<CommNeighbor<'_>>, TopologyError> {
        if !self.nodes.contains(ibr) {
            return Err(TopologyError::UnknownIbr(ibr.clone()));
        }
        let mut out: Vec<CommNeighbor<'_>> = self
            .links
            .iter()
            .filter(|l| l.gains.is_active())
            .filter_map(|l| {
                if &l.i == ibr {
                    Some(CommNeighbor { id: &l.j, gains: l.gains })
                } else if &l.j == ibr {
                    Some(CommNeighbor { id: &l.i, gains: l.gains })
                } else {
                    None
                }
            })
            .collect();
        out.sort_by(|x, y| x.id.cmp(y.id));
        Ok(out)
    }

    /// Every IBR sharing a link with `ibr`, regardless of gain values.
    pub fn linked(&self, ibr: &IbrId) -> Vec<&IbrId> {
        let mut out: Vec<&IbrId> = self
            .links
            .iter()
            .filter_map(|l| {
                if &l.i == ibr {
                    Some(&l.j)
                } else if &l.j == ibr {
                    Some(&l.i)
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakerPosition {
    Open,
    Closed,
}

/// Breaker positions keyed by id. A breaker absent from the map is open.
pub type BreakerStates = BTreeMap<BreakerId, BreakerPosition>;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateId { kind: &'static str, id: String },
    DanglingReference { from: String, missing: String },
    SelfLoop { line: LineId },
    NegativeImpedance { line: LineId },
    ZeroImpedance { line: LineId },
    NegativeLoad { bus: BusId },
    EmptyBreakerAdjacency { breaker: BreakerId },
    NegativeGain { i: IbrId, j: IbrId },
    DuplicateCommLink { i: IbrId, j: IbrId },
    BadCommPeriod { period: f64 },
    UnsourcedIsland { buses: Vec<BusId> },
    DisconnectedCommGraph { components: usize },
}

impl Violation {
    /// Violations that make the electrical model unusable. A disconnected
    /// communication graph still simulates, it just never synchronizes.
    pub fn is_structural(&self) -> bool {
        !matches!(self, Violation::DisconnectedCommGraph { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { kind, id } => write!(f, "duplicate {kind} id `{id}`"),
            Violation::DanglingReference { from, missing } => {
                write!(f, "dangling reference: {from} refers to unknown `{missing}`")
            }
            Violation::SelfLoop { line } => write!(f, "line `{line}` connects a bus to itself"),
            Violation::NegativeImpedance { line } => {
                write!(f, "line `{line}` has negative resistance")
            }
            Violation::ZeroImpedance { line } => write!(f, "line `{line}` has zero impedance"),
            Violation::NegativeLoad { bus } => write!(f, "bus `{bus}` has negative active load"),
            Violation::EmptyBreakerAdjacency { breaker } => {
                write!(f, "breaker `{breaker}` has no adjacent IBRs")
            }
            Violation::NegativeGain { i, j } => {
                write!(f, "comm link `{i}`-`{j}` has a negative gain")
            }
            Violation::DuplicateCommLink { i, j } => {
                write!(f, "comm link `{i}`-`{j}` is listed more than once")
            }
            Violation::BadCommPeriod { period } => {
                write!(f, "communication period must be > 0, got {period}")
            }
            Violation::UnsourcedIsland { buses } => {
                let names: Vec<&str> = buses.iter().map(BusId::as_str).collect();
                write!(f, "island [{}] carries load but has no IBR", names.join(", "))
            }
            Violation::DisconnectedCommGraph { components } => {
                write!(f, "communication graph is disconnected ({components} components)")
            }
        }
    }
}

/// Result of [`NmgTopology::validate`]; empty iff the topology is well formed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn structural(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.is_structural())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmgTopology {
    pub buses: Vec<MgBus>,
    pub lines: Vec<TieLine>,
    pub breakers: Vec<BreakerSpec>,
    pub comm: CommGraph,
}

/// Disjoint-set forest over `0..n`.
#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so component labels are deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Groups of members ordered by their smallest element.
    pub(crate) fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for x in 0..n {
            let r = self.find(x);
            by_root.entry(r).or_default().push(x);
        }
        let mut groups: Vec<Vec<usize>> = by_root.into_values().collect();
        groups.sort_by_key(|g| g[0]);
        groups
    }
}

impl NmgTopology {
    pub fn bus_index(&self, id: &BusId) -> Option<usize> {
        self.buses.iter().position(|b| &b.id == id)
    }

    pub fn line_index(&self, id: &LineId) -> Option<usize> {
        self.lines.iter().position(|l| &l.id == id)
    }

    pub fn breaker_index(&self, id: &BreakerId) -> Option<usize> {
        self.breakers.iter().position(|b| &b.id == id)
    }

    /// IBR ids in the canonical (communication graph) order.
    pub fn ibr_ids(&self) -> &[IbrId] {
        &self.comm.nodes
    }

    pub fn ibr_index(&self, id: &IbrId) -> Option<usize> {
        self.comm.nodes.iter().position(|x| x == id)
    }

    /// Bus index hosting each IBR, in IBR order.
    pub fn ibr_buses(&self) -> Vec<Option<usize>> {
        self.comm
            .nodes
            .iter()
            .map(|ibr| self.buses.iter().position(|b| b.ibr.as_ref() == Some(ibr)))
            .collect()
    }

    pub fn comm_neighbors(&self, ibr: &IbrId) -> Result<Vec<CommNeighbor<'_>>, TopologyError> {
        self.comm.comm_neighbors(ibr)
    }

    /// Whether line `l` conducts given per-breaker closed flags (indexed like
    /// `self.breakers`).
    pub(crate) fn line_conducts(&self, l: usize, closed: &[bool]) -> bool {
        match &self.lines[l].breaker {
            None => true,
            Some(bid) => self
                .breaker_index(bid)
                .map(|bi| closed.get(bi).copied().unwrap_or(false))
                .unwrap_or(false),
        }
    }

    /// Electrical islands as bus-index groups, given per-breaker closed flags.
    pub fn island_indices(&self, closed: &[bool]) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.buses.len());
        for (l, line) in self.lines.iter().enumerate() {
            if !self.line_conducts(l, closed) {
                continue;
            }
            if let (Some(a), Some(b)) = (self.bus_index(&line.from_bus), self.bus_index(&line.to_bus)) {
                uf.union(a, b);
            }
        }
        uf.groups()
    }

    /// Partition of all buses into electrically connected components. A line
    /// conducts iff it has no breaker or its breaker is closed.
    pub fn electrical_islands(&self, states: &BreakerStates) -> Vec<BTreeSet<BusId>> {
        let closed = self.closed_flags(states);
        self.island_indices(&closed)
            .into_iter()
            .map(|g| g.into_iter().map(|i| self.buses[i].id.clone()).collect())
            .collect()
    }

    pub fn closed_flags(&self, states: &BreakerStates) -> Vec<bool> {
        self.breakers
            .iter()
            .map(|b| states.get(&b.id) == Some(&BreakerPosition::Closed))
            .collect()
    }

    /// Structural checks. Returns every violation found.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();

        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id.as_str()) {
                v.push(Violation::DuplicateId { kind: "bus", id: b.id.0.clone() });
            }
        }
        let mut seen = HashSet::new();
        for l in &self.lines {
            if !seen.insert(l.id.as_str()) {
                v.push(Violation::DuplicateId { kind: "line", id: l.id.0.clone() });
            }
        }
        let mut seen = HashSet::new();
        for b in &self.breakers {
            if !seen.insert(b.id.as_str()) {
                v.push(Violation::DuplicateId { kind: "breaker", id: b.id.0.clone() });
            }
        }
        let mut seen = HashSet::new();
        for id in &self.comm.nodes {
            if !seen.insert(id.as_str()) {
                v.push(Violation::DuplicateId { kind: "ibr", id: id.0.clone() });
            }
        }

        // each IBR sits on exactly one bus
        let mut hosted = HashSet::new();
        for b in &self.buses {
            if let Some(ibr) = &b.ibr {
                if !self.comm.nodes.contains(ibr) {
                    v.push(Violation::DanglingReference {
                        from: format!("bus `{}`", b.id),
                        missing: ibr.0.clone(),
                    });
                }
                if !hosted.insert(ibr.as_str()) {
                    v.push(Violation::DuplicateId { kind: "ibr placement", id: ibr.0.clone() });
                }
            }
            if let Some(load) = &b.load {
                if !(load.p_nominal >= 0.0) {
                    v.push(Violation::NegativeLoad { bus: b.id.clone() });
                }
            }
        }
        for ibr in &self.comm.nodes {
            if !hosted.contains(ibr.as_str()) {
                v.push(Violation::DanglingReference {
                    from: format!("ibr `{ibr}`"),
                    missing: "host bus".to_owned(),
                });
            }
        }

        for l in &self.lines {
            for end in [&l.from_bus, &l.to_bus] {
                if self.bus_index(end).is_none() {
                    v.push(Violation::DanglingReference {
                        from: format!("line `{}`", l.id),
                        missing: end.0.clone(),
                    });
                }
            }
            if l.from_bus == l.to_bus {
                v.push(Violation::SelfLoop { line: l.id.clone() });
            }
            if l.resistance < 0.0 {
                v.push(Violation::NegativeImpedance { line: l.id.clone() });
            }
            if l.resistance == 0.0 && l.reactance == 0.0 {
                v.push(Violation::ZeroImpedance { line: l.id.clone() });
            }
            if let Some(bid) = &l.breaker {
                if self.breaker_index(bid).is_none() {
                    v.push(Violation::DanglingReference {
                        from: format!("line `{}`", l.id),
                        missing: bid.0.clone(),
                    });
                }
            }
        }

        for b in &self.breakers {
            if self.line_index(&b.line).is_none() {
                v.push(Violation::DanglingReference {
                    from: format!("breaker `{}`", b.id),
                    missing: b.line.0.clone(),
                });
            }
            if b.adjacent_ibrs.is_empty() {
                v.push(Violation::EmptyBreakerAdjacency { breaker: b.id.clone() });
            }
            for ibr in &b.adjacent_ibrs {
                if !self.comm.nodes.contains(ibr) {
                    v.push(Violation::DanglingReference {
                        from: format!("breaker `{}`", b.id),
                        missing: ibr.0.clone(),
                    });
                }
            }
        }

        if !(self.comm.period > 0.0) {
            v.push(Violation::BadCommPeriod { period: self.comm.period });
        }
        let mut pairs = HashSet::new();
        for link in &self.comm.links {
            for end in [&link.i, &link.j] {
                if !self.comm.nodes.contains(end) {
                    v.push(Violation::DanglingReference {
                        from: format!("comm link `{}`-`{}`", link.i, link.j),
                        missing: end.0.clone(),
                    });
                }
            }
            let g = link.gains;
            if g.a < 0.0 || g.b < 0.0 || g.d < 0.0 {
                v.push(Violation::NegativeGain { i: link.i.clone(), j: link.j.clone() });
            }
            let key = if link.i <= link.j {
                (link.i.clone(), link.j.clone())
            } else {
                (link.j.clone(), link.i.clone())
            };
            if !pairs.insert(key) {
                v.push(Violation::DuplicateCommLink { i: link.i.clone(), j: link.j.clone() });
            }
        }

        // Loaded islands need a source even in the most fragmented state.
        let all_open = vec![false; self.breakers.len()];
        for island in self.island_indices(&all_open) {
            let has_load = island
                .iter()
                .any(|&b| self.buses[b].load.is_some_and(|l| l.p_nominal != 0.0 || l.q_nominal != 0.0));
            let has_source = island.iter().any(|&b| self.buses[b].ibr.is_some());
            if has_load && !has_source {
                v.push(Violation::UnsourcedIsland {
                    buses: island.iter().map(|&b| self.buses[b].id.clone()).collect(),
                });
            }
        }

        let n = self.comm.nodes.len();
        if n > 1 {
            let mut uf = UnionFind::new(n);
            for link in self.comm.links.iter().filter(|l| l.gains.is_active()) {
                if let (Some(a), Some(b)) = (self.ibr_index(&link.i), self.ibr_index(&link.j)) {
                    uf.union(a, b);
                }
            }
            let components = uf.groups().len();
            if components > 1 {
                v.push(Violation::DisconnectedCommGraph { components });
            }
        }

        ValidationReport { violations: v }
    }
}
