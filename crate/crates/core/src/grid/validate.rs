// Negated comparisons below double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::Feeder;

/// One broken feeder invariant, naming the offending element.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateId { kind: &'static str, id: String },
    VoltageLimits { bus: String },
    LineParameters { line: String, reason: &'static str },
    BreakerState { breaker: String },
    LoadParameters { load: String, reason: &'static str },
    GeneratorLimits { generator: String, reason: &'static str },
    UncoveredBreaker { breaker: String },
    BreakerInSeveralAgents { breaker: String },
    EmptyAgent { agent: usize },
    AgentIdsNotContiguous,
    NonRadial,
    UnreachableLoad { load: String, bus: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { kind, id } => write!(f, "duplicate {kind} id {id}"),
            Violation::VoltageLimits { bus } => {
                write!(f, "bus {bus} needs 0 < v_min < v_max")
            }
            Violation::LineParameters { line, reason } => write!(f, "line {line}: {reason}"),
            Violation::BreakerState { breaker } => {
                write!(f, "breaker {breaker} state must be 0 or 1")
            }
            Violation::LoadParameters { load, reason } => write!(f, "load {load}: {reason}"),
            Violation::GeneratorLimits { generator, reason } => {
                write!(f, "generator {generator}: {reason}")
            }
            Violation::UncoveredBreaker { breaker } => write!(f, "uncovered breaker {breaker}"),
            Violation::BreakerInSeveralAgents { breaker } => {
                write!(f, "breaker {breaker} assigned to more than one agent")
            }
            Violation::EmptyAgent { agent } => write!(f, "agent {agent} has no breakers"),
            Violation::AgentIdsNotContiguous => {
                write!(f, "partition agent ids must be 0..m-1")
            }
            Violation::NonRadial => write!(f, "non-radial topology"),
            Violation::UnreachableLoad { load, bus } => {
                write!(f, "load {load} at bus {bus} is unreachable from any generator")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn duplicates<'a>(
    kind: &'static str,
    ids: impl Iterator<Item = &'a str>,
    out: &mut Vec<Violation>,
) {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            out.push(Violation::DuplicateId {
                kind,
                id: id.to_string(),
            });
        }
    }
}

/// Checks every feeder invariant. Violations are returned as data.
///
/// Topology: with all breakers closed the network must be a forest in which
/// every component holding a load also holds a generator. Islanded
/// microgrids are therefore allowed; meshes are not.
pub fn validate_feeder(f: &Feeder) -> ValidationReport {
    let mut v = Vec::new();
    let doc = f.document();

    duplicates("bus", doc.buses.iter().map(|b| b.id.as_str()), &mut v);
    duplicates("line", doc.lines.iter().map(|l| l.id.as_str()), &mut v);
    duplicates("breaker", doc.breakers.iter().map(|b| b.id.as_str()), &mut v);
    duplicates("load", doc.loads.iter().map(|l| l.id.as_str()), &mut v);
    duplicates("generator", doc.generators.iter().map(|g| g.id.as_str()), &mut v);

    for b in &doc.buses {
        if !(b.v_min > 0.0 && b.v_min < b.v_max) {
            v.push(Violation::VoltageLimits { bus: b.id.clone() });
        }
    }
    for l in &doc.lines {
        let reason = if l.from_bus == l.to_bus {
            Some("from_bus equals to_bus")
        } else if !(l.resistance >= 0.0 && l.reactance >= 0.0) {
            Some("impedance must be non-negative")
        } else if !(l.s_rating > 0.0) {
            Some("s_rating must be positive")
        } else {
            None
        };
        if let Some(reason) = reason {
            v.push(Violation::LineParameters {
                line: l.id.clone(),
                reason,
            });
        }
    }
    for b in &doc.breakers {
        if b.state > 1 {
            v.push(Violation::BreakerState {
                breaker: b.id.clone(),
            });
        }
    }
    for l in &doc.loads {
        let reason = if !(l.p_rated >= 0.0) {
            Some("p_rated must be non-negative")
        } else if !(l.weight > 0.0 && l.weight <= 1.0) {
            Some("weight must lie in (0, 1]")
        } else {
            None
        };
        if let Some(reason) = reason {
            v.push(Violation::LoadParameters {
                load: l.id.clone(),
                reason,
            });
        }
    }
    for g in &doc.generators {
        let reason = if !(g.p_min <= g.p_max) {
            Some("p_min exceeds p_max")
        } else if !(g.q_min <= g.q_max) {
            Some("q_min exceeds q_max")
        } else if !(g.p_max > 0.0) {
            Some("p_max must be positive")
        } else {
            None
        };
        if let Some(reason) = reason {
            v.push(Violation::GeneratorLimits {
                generator: g.id.clone(),
                reason,
            });
        }
    }

    // Partition coverage.
    let assignments = &doc.partition.assignments;
    if assignments.keys().copied().ne(0..assignments.len()) {
        v.push(Violation::AgentIdsNotContiguous);
    }
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (&agent, ids) in assignments {
        if ids.is_empty() {
            v.push(Violation::EmptyAgent { agent });
        }
        for id in ids {
            if owner.insert(id.as_str(), agent).is_some() {
                v.push(Violation::BreakerInSeveralAgents { breaker: id.clone() });
            }
        }
    }
    for b in &doc.breakers {
        if !owner.contains_key(b.id.as_str()) {
            v.push(Violation::UncoveredBreaker {
                breaker: b.id.clone(),
            });
        }
    }

    // Radiality via union-find over all lines.
    let idx = f.index();
    let mut parent: Vec<usize> = (0..doc.buses.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut meshed = false;
    for &(a, b) in &idx.line_ends {
        if a == b {
            continue;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            meshed = true;
        } else {
            parent[ra] = rb;
        }
    }
    if meshed {
        v.push(Violation::NonRadial);
    }

    let all_closed = vec![true; doc.breakers.len()];
    let energized = f.energized_buses(&all_closed);
    for (i, l) in doc.loads.iter().enumerate() {
        if !energized[idx.load_bus[i]] {
            v.push(Violation::UnreachableLoad {
                load: l.id.clone(),
                bus: l.bus_id.clone(),
            });
        }
    }

    ValidationReport { violations: v }
}
