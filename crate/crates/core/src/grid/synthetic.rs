//! Random radial feeders for property tests and benchmarks.

use std::collections::BTreeMap;

use rand::Rng;

use super::{
    BaseValues, Breaker, Bus, Feeder, FeederDocument, Generator, Line, LoadPoint,
    MicrogridPartition, FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticOptions {
    /// Bus count including the source bus (at least 2).
    pub buses: usize,
    /// Generators placed on distinct buses; the first sits on bus 0.
    pub generators: usize,
    /// Total `p_max` as a fraction of total load.
    pub capacity_fraction: f64,
    /// Agents the breakers are dealt to (round robin).
    pub agents: usize,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            buses: 6,
            generators: 1,
            capacity_fraction: 0.7,
            agents: 2,
        }
    }
}

/// Tree feeder: bus `i > 0` hangs off a random earlier bus through a
/// breaker-guarded line and carries one load.
pub fn random_radial_feeder<R: Rng + ?Sized>(rng: &mut R, opts: SyntheticOptions) -> Feeder {
    assert!(opts.buses >= 2, "need at least two buses");
    let n = opts.buses;
    let mut buses = Vec::with_capacity(n);
    let mut lines = Vec::new();
    let mut breakers = Vec::new();
    let mut loads = Vec::new();
    for i in 0..n {
        buses.push(Bus::new(format!("b{i}")));
    }
    let mut total = 0.0;
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        let p: f64 = rng.gen_range(20.0..300.0f64).round();
        let q = (p * rng.gen_range(0.1..0.5f64)).round();
        total += p;
        lines.push(Line {
            id: format!("l{i}"),
            from_bus: format!("b{parent}"),
            to_bus: format!("b{i}"),
            resistance: rng.gen_range(0.0..0.02),
            reactance: rng.gen_range(0.0..0.04),
            s_rating: rng.gen_range(300.0..1500.0f64).round(),
        });
        breakers.push(Breaker {
            id: format!("cb{i}"),
            line_id: format!("l{i}"),
            state: 0,
        });
        loads.push(LoadPoint {
            id: format!("ld{i}"),
            bus_id: format!("b{i}"),
            p_rated: p,
            q_rated: q,
            weight: rng.gen_range(0.1..=1.0),
            breaker_id: format!("cb{i}"),
        });
    }

    let gens = opts.generators.clamp(1, n);
    let capacity = (total * opts.capacity_fraction).max(1.0);
    let mut gen_buses = vec![0usize];
    while gen_buses.len() < gens {
        let b = rng.gen_range(1..n);
        if !gen_buses.contains(&b) {
            gen_buses.push(b);
        }
    }
    let generators = gen_buses
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let p_max = capacity / gens as f64;
            Generator {
                id: format!("g{k}"),
                bus_id: format!("b{b}"),
                p_min: 0.0,
                p_max,
                q_min: -0.5 * p_max,
                q_max: 0.8 * p_max,
            }
        })
        .collect();

    let agents = opts.agents.clamp(1, breakers.len());
    let mut assignments: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (k, br) in breakers.iter().enumerate() {
        assignments.entry(k % agents).or_default().push(br.id.clone());
    }

    let doc = FeederDocument {
        format_version: FORMAT_VERSION,
        name: "synthetic".into(),
        base: BaseValues::default(),
        buses,
        lines,
        breakers,
        loads,
        generators,
        partition: MicrogridPartition { assignments },
    };
    Feeder::from_document(doc).expect("synthetic feeder references resolve")
}
