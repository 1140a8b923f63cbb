//! Backward/forward sweep power flow on the energized part of a radial
//! feeder, plus evaluation of the operating constraints.
//!
//! Each energized island is swept from its largest generator, which acts as
//! the slack bus at a fixed voltage. The island's other generators are
//! dispatched in proportion to their `p_max` (and `q_max`), clipped to their
//! boxes, and enter the sweep as negative constant-power loads.

mod constraints;

use std::io::{self, Write};

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::Feeder;

pub use constraints::{check_constraints, evaluate, is_feasible, Check, ConstraintReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge within {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("breaker state vector has {got} entries, feeder has {expected} breakers")]
    StateLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Largest per-iteration voltage change (p.u.) accepted as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Voltage held at each island's slack bus (p.u.).
    pub slack_voltage: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 100,
            slack_voltage: 1.0,
        }
    }
}

/// Sending-end flow of a line, oriented away from the island's slack bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFlow {
    pub p_kw: f64,
    pub q_kvar: f64,
    pub s_kva: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorOutput {
    pub p_kw: f64,
    pub q_kvar: f64,
}

/// Result of a converged sweep. Vectors are indexed like the feeder's
/// buses, lines and generators.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Voltage magnitudes (p.u.); de-energized buses read 1.0.
    pub bus_voltages: Vec<f64>,
    pub energized: Vec<bool>,
    /// `None` for lines outside the energized network.
    pub line_flows: Vec<Option<LineFlow>>,
    pub generator_output: Vec<GeneratorOutput>,
    pub total_losses_kw: f64,
    pub served_load_kw: f64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    pub fn total_generation_kw(&self) -> f64 {
        self.generator_output.iter().map(|g| g.p_kw).sum()
    }

    pub fn voltage(&self, feeder: &Feeder, bus_id: &str) -> Option<f64> {
        feeder.bus_index(bus_id).map(|i| self.bus_voltages[i])
    }

    /// Writes `bus,voltage` rows.
    pub fn write_bus_csv<W: Write>(&self, feeder: &Feeder, mut w: W) -> io::Result<()> {
        writeln!(w, "bus,voltage")?;
        for (bus, v) in feeder.buses().iter().zip(&self.bus_voltages) {
            writeln!(w, "{},{:.8}", bus.id, v)?;
        }
        Ok(())
    }

    /// Writes `line,p,q,s` rows for energized lines.
    pub fn write_line_csv<W: Write>(&self, feeder: &Feeder, mut w: W) -> io::Result<()> {
        writeln!(w, "line,p,q,s")?;
        for (line, flow) in feeder.lines().iter().zip(&self.line_flows) {
            if let Some(fl) = flow {
                writeln!(
                    w,
                    "{},{:.6},{:.6},{:.6}",
                    line.id, fl.p_kw, fl.q_kvar, fl.s_kva
                )?;
            }
        }
        Ok(())
    }
}

/// Served load totals for a breaker configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestoredPower {
    pub served_kw: f64,
    pub weighted_kw: f64,
}

/// Restored load by topology alone: a load counts when its breaker is closed
/// and its bus is connected to a generator.
pub fn restored_power(feeder: &Feeder, states: &[bool]) -> RestoredPower {
    let energized = feeder.energized_buses(states);
    let mut out = RestoredPower {
        served_kw: 0.0,
        weighted_kw: 0.0,
    };
    for (i, load) in feeder.loads().iter().enumerate() {
        if feeder.load_served(states, &energized, i) {
            out.served_kw += load.p_rated;
            out.weighted_kw += load.p_rated * load.weight;
        }
    }
    out
}

pub fn solve(feeder: &Feeder, states: &[bool]) -> Result<PowerFlowSolution, PowerFlowError> {
    solve_with(feeder, states, &SolverOptions::default())
}

struct Island {
    root: usize,
    root_gen: usize,
    gens: Vec<usize>,
    /// Breadth-first order from the root.
    order: Vec<usize>,
}

pub fn solve_with(
    feeder: &Feeder,
    states: &[bool],
    opts: &SolverOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    if states.len() != feeder.breaker_count() {
        return Err(PowerFlowError::StateLength {
            expected: feeder.breaker_count(),
            got: states.len(),
        });
    }
    let idx = feeder.index();
    let nb = feeder.buses().len();
    let s_base = feeder.base().s_base_kva;
    let gens = feeder.generators();
    let lines = feeder.lines();

    let energized = feeder.energized_buses(states);
    let mut load = vec![Complex64::new(0.0, 0.0); nb];
    let mut served_load_kw = 0.0;
    for (i, l) in feeder.loads().iter().enumerate() {
        if feeder.load_served(states, &energized, i) {
            load[idx.load_bus[i]] += Complex64::new(l.p_rated, l.q_rated) / s_base;
            served_load_kw += l.p_rated;
        }
    }

    // Slack candidates: largest p_max first, lowest index on ties.
    let mut by_size: Vec<usize> = (0..gens.len()).collect();
    by_size.sort_by(|&a, &b| gens[b].p_max.total_cmp(&gens[a].p_max).then(a.cmp(&b)));

    let mut island_of = vec![usize::MAX; nb];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nb];
    let mut islands: Vec<Island> = Vec::new();
    for &g in &by_size {
        let root = idx.gen_bus[g];
        if island_of[root] != usize::MAX {
            continue;
        }
        let id = islands.len();
        island_of[root] = id;
        let mut order = vec![root];
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &(v, line) in &idx.adjacency[u] {
                if island_of[v] == usize::MAX && feeder.line_conducts(states, line) {
                    island_of[v] = id;
                    parent[v] = Some((u, line));
                    order.push(v);
                }
            }
        }
        islands.push(Island {
            root,
            root_gen: g,
            gens: Vec::new(),
            order,
        });
    }
    for (g, &bus) in idx.gen_bus.iter().enumerate() {
        islands[island_of[bus]].gens.push(g);
    }

    let z: Vec<Complex64> = lines
        .iter()
        .map(|l| Complex64::new(l.resistance, l.reactance))
        .collect();

    let mut voltage = vec![Complex64::new(opts.slack_voltage, 0.0); nb];
    let mut branch = vec![Complex64::new(0.0, 0.0); nb];
    let mut injection = vec![Complex64::new(0.0, 0.0); gens.len()];
    let mut total_iterations = 0;

    for island in &islands {
        let island_load: Complex64 = island.order.iter().map(|&b| load[b]).sum();
        let p_cap: f64 = island.gens.iter().map(|&g| gens[g].p_max).sum();
        let q_cap: f64 = island.gens.iter().map(|&g| gens[g].q_max.max(0.0)).sum();
        let mut losses = Complex64::new(0.0, 0.0);

        let mut converged = false;
        for it in 1..=opts.max_iterations {
            total_iterations = total_iterations.max(it);
            dispatch(island, gens, s_base, island_load + losses, p_cap, q_cap, &mut injection);
            let net = net_injections(island, &load, &injection, idx);

            backward(island, &net, &voltage, &parent, &mut branch);
            let mut delta: f64 = 0.0;
            for &u in island.order.iter().skip(1) {
                let (p, line) = parent[u].expect("non-root bus has a parent");
                let v = voltage[p] - z[line] * branch[u];
                delta = delta.max((v - voltage[u]).norm());
                voltage[u] = v;
            }
            losses = island
                .order
                .iter()
                .skip(1)
                .map(|&u| z[parent[u].unwrap().1] * branch[u].norm_sqr())
                .sum();

            let finite = island.order.iter().all(|&u| {
                let v = voltage[u];
                v.re.is_finite() && v.im.is_finite() && v.norm() > 1e-3
            });
            if !finite {
                return Err(PowerFlowError::Diverged { iterations: it });
            }
            if delta < opts.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(PowerFlowError::Diverged {
                iterations: opts.max_iterations,
            });
        }

        // Consistent currents for the final voltages.
        dispatch(island, gens, s_base, island_load + losses, p_cap, q_cap, &mut injection);
        let net = net_injections(island, &load, &injection, idx);
        backward(island, &net, &voltage, &parent, &mut branch);
    }

    let mut line_flows = vec![None; lines.len()];
    let mut total_losses_kw = 0.0;
    let mut root_send = vec![Complex64::new(0.0, 0.0); nb];
    for u in 0..nb {
        if let Some((p, line)) = parent[u] {
            let s = voltage[p] * branch[u].conj() * s_base;
            line_flows[line] = Some(LineFlow {
                p_kw: s.re,
                q_kvar: s.im,
                s_kva: s.norm(),
            });
            total_losses_kw += lines[line].resistance * branch[u].norm_sqr() * s_base;
            root_send[p] += s;
        }
    }

    let mut generator_output = vec![
        GeneratorOutput {
            p_kw: 0.0,
            q_kvar: 0.0
        };
        gens.len()
    ];
    for island in &islands {
        let mut root_out = root_send[island.root] + load[island.root] * s_base;
        for &g in &island.gens {
            if g != island.root_gen {
                let s = injection[g] * s_base;
                if idx.gen_bus[g] == island.root {
                    root_out -= s;
                }
                generator_output[g] = GeneratorOutput {
                    p_kw: s.re,
                    q_kvar: s.im,
                };
            }
        }
        generator_output[island.root_gen] = GeneratorOutput {
            p_kw: root_out.re,
            q_kvar: root_out.im,
        };
    }

    let bus_voltages = (0..nb)
        .map(|b| if energized[b] { voltage[b].norm() } else { 1.0 })
        .collect();

    Ok(PowerFlowSolution {
        bus_voltages,
        energized,
        line_flows,
        generator_output,
        total_losses_kw,
        served_load_kw,
        iterations: total_iterations,
    })
}

/// Proportional dispatch of the island's non-slack generators (p.u.).
fn dispatch(
    island: &Island,
    gens: &[crate::grid::Generator],
    s_base: f64,
    demand: Complex64,
    p_cap: f64,
    q_cap: f64,
    injection: &mut [Complex64],
) {
    for &g in &island.gens {
        if g == island.root_gen {
            continue;
        }
        let gen = &gens[g];
        let p_share = if p_cap > 0.0 {
            demand.re * s_base * gen.p_max / p_cap
        } else {
            0.0
        };
        let q_share = if q_cap > 0.0 {
            demand.im * s_base * gen.q_max.max(0.0) / q_cap
        } else {
            0.0
        };
        let p = p_share.clamp(gen.p_min, gen.p_max);
        let q = q_share.clamp(gen.q_min, gen.q_max);
        injection[g] = Complex64::new(p, q) / s_base;
    }
}

fn net_injections(
    island: &Island,
    load: &[Complex64],
    injection: &[Complex64],
    idx: &crate::grid::FeederIndex,
) -> Vec<(usize, Complex64)> {
    let mut net: Vec<(usize, Complex64)> = island.order.iter().map(|&b| (b, load[b])).collect();
    for &g in &island.gens {
        if g == island.root_gen {
            continue;
        }
        let bus = idx.gen_bus[g];
        if let Some(slot) = net.iter_mut().find(|(b, _)| *b == bus) {
            slot.1 -= injection[g];
        }
    }
    net
}

/// Accumulates branch currents from the leaves toward the slack bus.
/// `branch[u]` is the current flowing from `u`'s parent into `u`.
fn backward(
    island: &Island,
    net: &[(usize, Complex64)],
    voltage: &[Complex64],
    parent: &[Option<(usize, usize)>],
    branch: &mut [Complex64],
) {
    for &u in &island.order {
        branch[u] = Complex64::new(0.0, 0.0);
    }
    // `net` follows `island.order`.
    for &(u, s) in net.iter().rev() {
        if u == island.root {
            continue;
        }
        branch[u] += (s / voltage[u]).conj();
        let p = parent[u].expect("non-root bus has a parent").0;
        let carried = branch[u];
        if p != island.root {
            branch[p] += carried;
        }
    }
}

#[cfg(test)]
mod tests;
