//! Built-in single-phase-equivalent feeders.
//!
//! Both feeders are collections of islanded microgrids: each microgrid has
//! its own sources and shares no line with another microgrid. Every load
//! hangs off a lateral guarded by exactly one breaker.

use std::collections::BTreeMap;

use super::{
    BaseValues, Breaker, Bus, Feeder, FeederDocument, Generator, GridError, Line, LoadPoint,
    MicrogridPartition, FORMAT_VERSION,
};

pub const BUILTIN_NAMES: [&str; 2] = ["ieee13", "ieee123"];

/// Reactive demand of a 0.9 power-factor load.
fn q_of(p: f64) -> f64 {
    (p * 0.4843).round()
}

#[derive(Default)]
struct Builder {
    doc_buses: Vec<Bus>,
    lines: Vec<Line>,
    breakers: Vec<Breaker>,
    loads: Vec<LoadPoint>,
    generators: Vec<Generator>,
    partition: BTreeMap<usize, Vec<String>>,
}

impl Builder {
    fn bus(&mut self, id: &str) {
        self.doc_buses.push(Bus::new(id));
    }

    fn line(&mut self, from: &str, to: &str, r: f64, x: f64, s_rating: f64) -> String {
        let id = format!("l{}_{}", from, to);
        self.lines.push(Line {
            id: id.clone(),
            from_bus: from.into(),
            to_bus: to.into(),
            resistance: r,
            reactance: x,
            s_rating,
        });
        id
    }

    /// Lateral from `from` to a new load bus, with its breaker and load.
    #[allow(clippy::too_many_arguments)]
    fn switched_load(
        &mut self,
        agent: usize,
        from: &str,
        bus: &str,
        breaker: &str,
        load: &str,
        p: f64,
        r: f64,
        x: f64,
        s_rating: f64,
    ) {
        self.bus(bus);
        let line_id = self.line(from, bus, r, x, s_rating);
        self.breakers.push(Breaker {
            id: breaker.into(),
            line_id,
            state: 0,
        });
        self.loads.push(LoadPoint {
            id: load.into(),
            bus_id: bus.into(),
            p_rated: p,
            q_rated: q_of(p),
            weight: 1.0,
            breaker_id: breaker.into(),
        });
        self.partition.entry(agent).or_default().push(breaker.into());
    }

    fn generator(&mut self, id: &str, bus: &str, p_max: f64) {
        self.generators.push(Generator {
            id: id.into(),
            bus_id: bus.into(),
            p_min: 0.0,
            p_max,
            q_min: -0.4 * p_max,
            q_max: 0.6 * p_max,
        });
    }

    fn finish(self, name: &str) -> Feeder {
        let doc = FeederDocument {
            format_version: FORMAT_VERSION,
            name: name.into(),
            base: BaseValues::default(),
            buses: self.doc_buses,
            lines: self.lines,
            breakers: self.breakers,
            loads: self.loads,
            generators: self.generators,
            partition: MicrogridPartition {
                assignments: self.partition,
            },
        };
        Feeder::from_document(doc).expect("built-in feeder references resolve")
    }
}

/// Returns a built-in feeder by name (`"ieee13"` or `"ieee123"`).
pub fn builtin_feeder(name: &str) -> Result<Feeder, GridError> {
    match name {
        "ieee13" => Ok(ieee13()),
        "ieee123" => Ok(ieee123()),
        other => Err(GridError::UnknownBuiltin(other.to_string())),
    }
}

/// 13 buses, two microgrids, 9 breakers (4 + 5), 3461 kW of load and
/// 2600 kW of solar capacity split 585 kW / 2015 kW between the microgrids.
fn ieee13() -> Feeder {
    let mut b = Builder::default();

    // Microgrid 1: source at 650, junction 632.
    b.bus("650");
    b.bus("632");
    b.line("650", "632", 0.001, 0.002, 1000.0);
    b.generator("g1", "650", 585.0);
    for (k, (bus, p)) in [("633", 230.0), ("634", 170.0), ("645", 400.0), ("646", 200.0)]
        .into_iter()
        .enumerate()
    {
        let n = k + 1;
        b.switched_load(0, "632", bus, &format!("cb{n}"), &format!("load{n}"), p, 0.002, 0.004, 600.0);
    }

    // Microgrid 2: source at 671, second source at 680.
    b.bus("671");
    b.bus("680");
    b.line("671", "680", 0.001, 0.002, 1500.0);
    b.generator("g2", "671", 1015.0);
    b.generator("g3", "680", 1000.0);
    for (k, (bus, p)) in [
        ("692", 170.0),
        ("675", 128.0),
        ("684", 1150.0),
        ("611", 170.0),
        ("652", 843.0),
    ]
    .into_iter()
    .enumerate()
    {
        let n = k + 5;
        b.switched_load(1, "671", bus, &format!("cb{n}"), &format!("load{n}"), p, 0.002, 0.004, 1500.0);
    }

    b.finish("ieee13")
}

/// Per-microgrid load ratings (kW) of the synthesized 123-bus feeder.
/// Totals: 995 + 600 + 420 + 430 + 580 = 3025 kW.
const IEEE123_LOADS: [&[f64]; 5] = [
    &[175.0, 125.0, 105.0, 75.0, 70.0, 160.0, 50.0, 40.0, 115.0, 80.0],
    &[235.0, 75.0, 145.0, 80.0, 65.0],
    &[115.0, 105.0, 200.0],
    &[130.0, 225.0, 75.0],
    &[135.0, 65.0, 50.0, 220.0, 110.0],
];

/// Source capacity per microgrid (kW), 2400 kW in total.
const IEEE123_CAPACITY: [f64; 5] = [790.0, 480.0, 340.0, 330.0, 460.0];

/// Backbone buses per microgrid; with 5 source buses and 26 load buses the
/// feeder has 123 buses.
const IEEE123_TRUNK: [usize; 5] = [30, 18, 14, 14, 16];

/// 123 buses, five microgrids with 10/5/3/3/5 breakers.
fn ieee123() -> Feeder {
    let mut b = Builder::default();
    let mut next_load = 1;
    for (mg, loads) in IEEE123_LOADS.iter().enumerate() {
        let src = format!("mg{}_src", mg + 1);
        b.bus(&src);
        b.generator(&format!("pv{}", mg + 1), &src, IEEE123_CAPACITY[mg]);

        let trunk_len = IEEE123_TRUNK[mg];
        let mut prev = src.clone();
        let mut trunk = Vec::with_capacity(trunk_len);
        for t in 1..=trunk_len {
            let id = format!("mg{}_t{}", mg + 1, t);
            b.bus(&id);
            b.line(&prev, &id, 0.0002, 0.0004, 1200.0);
            trunk.push(id.clone());
            prev = id;
        }

        // Spread laterals evenly along the backbone.
        let n = loads.len();
        for (j, &p) in loads.iter().enumerate() {
            let tap = &trunk[((j + 1) * trunk_len) / (n + 1)];
            let k = next_load;
            next_load += 1;
            b.switched_load(
                mg,
                &tap.clone(),
                &format!("mg{}_ld{}", mg + 1, j + 1),
                &format!("sw{k}"),
                &format!("load{k}"),
                p,
                0.001,
                0.002,
                600.0,
            );
        }
    }
    b.finish("ieee123")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent_loads(f: &Feeder, agent: usize) -> Vec<f64> {
        f.agent_breakers(agent)
            .iter()
            .map(|&b| {
                let id = &f.breakers()[b].id;
                f.loads().iter().find(|l| &l.breaker_id == id).unwrap().p_rated
            })
            .collect()
    }

    #[test]
    fn ieee13_aggregates() {
        let f = builtin_feeder("ieee13").unwrap();
        assert_eq!(f.buses().len(), 13);
        assert_eq!(f.loads().len(), 9);
        assert_eq!(f.total_load_kw(), 3461.0);
        assert_eq!(f.generation_capacity_kw(), 2600.0);
        assert_eq!(f.generators().len(), 3);
        assert_eq!(f.agent_count(), 2);
        assert_eq!(agent_loads(&f, 0), vec![230.0, 170.0, 400.0, 200.0]);
        assert_eq!(agent_loads(&f, 1), vec![170.0, 128.0, 1150.0, 170.0, 843.0]);
    }

    #[test]
    fn ieee123_aggregates() {
        let f = builtin_feeder("ieee123").unwrap();
        assert_eq!(f.buses().len(), 123);
        assert_eq!(f.breaker_count(), 26);
        assert_eq!(f.total_load_kw(), 3025.0);
        assert_eq!(f.generation_capacity_kw(), 2400.0);
        let counts: Vec<usize> = (0..f.agent_count())
            .map(|a| f.agent_breakers(a).len())
            .collect();
        assert_eq!(counts, vec![10, 5, 3, 3, 5]);
    }

    #[test]
    fn partition_covers_each_breaker_once() {
        for name in BUILTIN_NAMES {
            let f = builtin_feeder(name).unwrap();
            let mut seen = vec![0usize; f.breaker_count()];
            for list in f.agent_breaker_lists() {
                for &b in list {
                    seen[b] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "{name}");
        }
    }

    #[test]
    fn microgrids_are_separate_islands() {
        for name in BUILTIN_NAMES {
            let f = builtin_feeder(name).unwrap();
            let comps = f.breaker_components();
            let mut parts: Vec<Vec<usize>> = f.agent_breaker_lists().to_vec();
            for p in &mut parts {
                p.sort_unstable();
            }
            assert_eq!(comps, parts, "{name}");
        }
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(
            builtin_feeder("ieee8500"),
            Err(GridError::UnknownBuiltin(n)) if n == "ieee8500"
        ));
    }
}
