//! Feeder model: buses, lines, breakers, loads and generators partitioned
//! into microgrids.
//!
//! A [`Feeder`] wraps the plain-data [`FeederDocument`] together with a
//! resolved index (string ids mapped to positions). The document is what
//! gets serialized; the index is rebuilt on load.

mod builtin;
mod document;
pub mod synthetic;
mod validate;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use builtin::{builtin_feeder, BUILTIN_NAMES};
pub use document::{load_feeder, FORMAT_VERSION};
pub use validate::{validate_feeder, ValidationReport, Violation};

/// Errors raised while building or loading a feeder.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("malformed feeder document: {0}")]
    Parse(String),
    #[error("unsupported feeder format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("{referrer} references unknown {kind} \"{id}\"")]
    UnknownReference {
        kind: &'static str,
        id: String,
        referrer: String,
    },
    #[error("invalid feeder: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown built-in feeder \"{0}\" (available: ieee13, ieee123)")]
    UnknownBuiltin(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn default_v_min() -> f64 {
    0.95
}

fn default_v_max() -> f64 {
    1.05
}

/// Per-unit base of the feeder's impedances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseValues {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
}

impl Default for BaseValues {
    fn default() -> Self {
        Self {
            s_base_kva: 1000.0,
            v_base_kv: 4.16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

impl Bus {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            v_min: default_v_min(),
            v_max: default_v_max(),
        }
    }
}

/// A series branch. Impedances are per-unit on the feeder base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub resistance: f64,
    pub reactance: f64,
    /// Apparent-power limit in kVA.
    pub s_rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breaker {
    pub id: String,
    pub line_id: String,
    /// Nominal position: 0 open, 1 closed.
    pub state: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub id: String,
    pub bus_id: String,
    pub p_rated: f64,
    pub q_rated: f64,
    /// Priority in (0, 1].
    pub weight: f64,
    pub breaker_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus_id: String,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

/// Agent id to the ordered breaker ids it operates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MicrogridPartition {
    pub assignments: BTreeMap<usize, Vec<String>>,
}

/// Serializable feeder content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederDocument {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: BaseValues,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub breakers: Vec<Breaker>,
    pub loads: Vec<LoadPoint>,
    pub generators: Vec<Generator>,
    pub partition: MicrogridPartition,
}

/// Positions resolved from string ids.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeederIndex {
    pub bus_ids: HashMap<String, usize>,
    pub breaker_ids: HashMap<String, usize>,
    pub line_ends: Vec<(usize, usize)>,
    pub line_breakers: Vec<Vec<usize>>,
    pub load_bus: Vec<usize>,
    pub load_breaker: Vec<usize>,
    pub gen_bus: Vec<usize>,
    /// Per bus: (neighbour bus, line index).
    pub adjacency: Vec<Vec<(usize, usize)>>,
    /// Per agent, in partition order: breaker indices.
    pub agents: Vec<Vec<usize>>,
}

/// An immutable, reference-resolved feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    doc: FeederDocument,
    index: FeederIndex,
}

impl Feeder {
    /// Resolves every cross-reference in `doc`. Invariants beyond reference
    /// integrity are checked by [`validate_feeder`].
    pub fn from_document(doc: FeederDocument) -> Result<Self, GridError> {
        let mut bus_ids = HashMap::new();
        for (i, b) in doc.buses.iter().enumerate() {
            bus_ids.entry(b.id.clone()).or_insert(i);
        }
        let mut line_ids = HashMap::new();
        for (i, l) in doc.lines.iter().enumerate() {
            line_ids.entry(l.id.clone()).or_insert(i);
        }
        let mut breaker_ids = HashMap::new();
        for (i, b) in doc.breakers.iter().enumerate() {
            breaker_ids.entry(b.id.clone()).or_insert(i);
        }

        let bus = |id: &str, referrer: &str| {
            bus_ids
                .get(id)
                .copied()
                .ok_or_else(|| GridError::UnknownReference {
                    kind: "bus",
                    id: id.to_string(),
                    referrer: referrer.to_string(),
                })
        };
        let breaker = |id: &str, referrer: &str| {
            breaker_ids
                .get(id)
                .copied()
                .ok_or_else(|| GridError::UnknownReference {
                    kind: "breaker",
                    id: id.to_string(),
                    referrer: referrer.to_string(),
                })
        };

        let mut line_ends = Vec::with_capacity(doc.lines.len());
        let mut adjacency = vec![Vec::new(); doc.buses.len()];
        for (i, l) in doc.lines.iter().enumerate() {
            let who = format!("line {}", l.id);
            let a = bus(&l.from_bus, &who)?;
            let b = bus(&l.to_bus, &who)?;
            line_ends.push((a, b));
            if a != b {
                adjacency[a].push((b, i));
                adjacency[b].push((a, i));
            }
        }

        let mut line_breakers = vec![Vec::new(); doc.lines.len()];
        for (i, br) in doc.breakers.iter().enumerate() {
            let line = line_ids.get(&br.line_id).copied().ok_or_else(|| {
                GridError::UnknownReference {
                    kind: "line",
                    id: br.line_id.clone(),
                    referrer: format!("breaker {}", br.id),
                }
            })?;
            line_breakers[line].push(i);
        }

        let mut load_bus = Vec::with_capacity(doc.loads.len());
        let mut load_breaker = Vec::with_capacity(doc.loads.len());
        for l in &doc.loads {
            let who = format!("load {}", l.id);
            load_bus.push(bus(&l.bus_id, &who)?);
            load_breaker.push(breaker(&l.breaker_id, &who)?);
        }

        let gen_bus = doc
            .generators
            .iter()
            .map(|g| bus(&g.bus_id, &format!("generator {}", g.id)))
            .collect::<Result<Vec<_>, _>>()?;

        let agents = doc
            .partition
            .assignments
            .iter()
            .map(|(agent, ids)| {
                let who = format!("partition agent {agent}");
                ids.iter()
                    .map(|id| breaker(id, &who))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;

        let index = FeederIndex {
            bus_ids,
            breaker_ids,
            line_ends,
            line_breakers,
            load_bus,
            load_breaker,
            gen_bus,
            adjacency,
            agents,
        };
        Ok(Self { doc, index })
    }

    pub fn document(&self) -> &FeederDocument {
        &self.doc
    }

    pub fn into_document(self) -> FeederDocument {
        self.doc
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn base(&self) -> BaseValues {
        self.doc.base
    }

    pub fn buses(&self) -> &[Bus] {
        &self.doc.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.doc.lines
    }

    pub fn breakers(&self) -> &[Breaker] {
        &self.doc.breakers
    }

    pub fn loads(&self) -> &[LoadPoint] {
        &self.doc.loads
    }

    pub fn generators(&self) -> &[Generator] {
        &self.doc.generators
    }

    pub fn partition(&self) -> &MicrogridPartition {
        &self.doc.partition
    }

    pub fn breaker_count(&self) -> usize {
        self.doc.breakers.len()
    }

    pub fn agent_count(&self) -> usize {
        self.index.agents.len()
    }

    /// Breaker indices operated by `agent`, in partition order.
    pub fn agent_breakers(&self, agent: usize) -> &[usize] {
        &self.index.agents[agent]
    }

    pub fn agent_breaker_lists(&self) -> &[Vec<usize>] {
        &self.index.agents
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.bus_ids.get(id).copied()
    }

    pub fn breaker_index(&self, id: &str) -> Option<usize> {
        self.index.breaker_ids.get(id).copied()
    }

    /// Sum of rated load, kW.
    pub fn total_load_kw(&self) -> f64 {
        self.doc.loads.iter().map(|l| l.p_rated).sum()
    }

    /// Sum of generator `p_max`, kW.
    pub fn generation_capacity_kw(&self) -> f64 {
        self.doc.generators.iter().map(|g| g.p_max).sum()
    }

    pub(crate) fn index(&self) -> &FeederIndex {
        &self.index
    }

    /// A line conducts when every breaker on it is closed.
    pub fn line_conducts(&self, states: &[bool], line: usize) -> bool {
        self.index.line_breakers[line].iter().all(|&b| states[b])
    }

    /// Buses connected to at least one generator through conducting lines.
    pub fn energized_buses(&self, states: &[bool]) -> Vec<bool> {
        let mut energized = vec![false; self.doc.buses.len()];
        let mut stack: Vec<usize> = Vec::new();
        for &g in &self.index.gen_bus {
            if !energized[g] {
                energized[g] = true;
                stack.push(g);
            }
        }
        while let Some(u) = stack.pop() {
            for &(v, line) in &self.index.adjacency[u] {
                if !energized[v] && self.line_conducts(states, line) {
                    energized[v] = true;
                    stack.push(v);
                }
            }
        }
        energized
    }

    /// Whether load `i` is served: its breaker is closed and its bus is energized.
    pub fn load_served(&self, states: &[bool], energized: &[bool], i: usize) -> bool {
        states[self.index.load_breaker[i]] && energized[self.index.load_bus[i]]
    }

    /// Groups breakers by the connected component their line belongs to
    /// when every breaker is closed. Components are ordered by their
    /// lowest breaker index.
    pub fn breaker_components(&self) -> Vec<Vec<usize>> {
        let n = self.doc.buses.len();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = count;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.index.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (line, bs) in self.index.line_breakers.iter().enumerate() {
            let group = groups.entry(comp[self.index.line_ends[line].0]).or_default();
            group.extend_from_slice(bs);
        }
        let mut out: Vec<Vec<usize>> = groups
            .into_values()
            .filter(|g| !g.is_empty())
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        out.sort_by_key(|g| g[0]);
        out
    }

    /// Pretty-printed JSON feeder document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("feeder document serializes")
    }

    /// Hex SHA-256 of the compact JSON document.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.doc).expect("feeder document serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Nominal breaker positions recorded in the document.
    pub fn nominal_states(&self) -> Vec<bool> {
        self.doc.breakers.iter().map(|b| b.state == 1).collect()
    }
}

/// Parses a breaker-state string such as `"110000101"`.
pub fn parse_states(s: &str, breakers: usize) -> Result<Vec<bool>, String> {
    let bits: Vec<bool> = s
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_')
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(format!("invalid breaker state character '{other}'")),
        })
        .collect::<Result<_, _>>()?;
    if bits.len() != breakers {
        return Err(format!(
            "state string has {} bits, feeder has {breakers} breakers",
            bits.len()
        ));
    }
    Ok(bits)
}

pub fn format_states(states: &[bool]) -> String {
    states.iter().map(|&b| if b { '1' } else { '0' }).collect()
}
