use crate::grid::Feeder;

use super::{solve, PowerFlowSolution};

const KW_TOL: f64 = 1e-6;
const PU_TOL: f64 = 1e-9;

/// Outcome of one constraint family.
///
/// `element` names the worst offender (or the tightest element when the
/// check passes); `value` is family specific: the balance margin in kW, the
/// worst bus voltage in p.u., the worst generator excursion in kW/kvar, or
/// the worst line loading as a fraction of its rating.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub passed: bool,
    pub element: Option<String>,
    pub value: f64,
}

impl Check {
    fn failed() -> Self {
        Self {
            passed: false,
            element: None,
            value: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub converged: bool,
    /// Served load plus losses within total generation capacity.
    pub power_balance: Check,
    /// Energized bus voltages within their limits.
    pub voltage: Check,
    pub gen_p: Check,
    pub gen_q: Check,
    /// Line apparent power within rating.
    pub line_s: Check,
    pub all_ok: bool,
}

impl ConstraintReport {
    /// Report for a sweep that failed to converge: every family fails.
    pub fn diverged() -> Self {
        Self {
            converged: false,
            power_balance: Check::failed(),
            voltage: Check::failed(),
            gen_p: Check::failed(),
            gen_q: Check::failed(),
            line_s: Check::failed(),
            all_ok: false,
        }
    }

    /// Names of the failing families.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            ("power_balance", &self.power_balance),
            ("voltage", &self.voltage),
            ("gen_p", &self.gen_p),
            ("gen_q", &self.gen_q),
            ("line_s", &self.line_s),
        ]
        .into_iter()
        .filter(|(_, c)| !c.passed)
        .map(|(n, _)| n)
        .collect()
    }
}

fn worst<I: Iterator<Item = (String, f64, f64)>>(items: I, tol: f64) -> Check {
    // (element, excursion, reported value); excursion > tol is a failure.
    let mut best: Option<(String, f64, f64)> = None;
    for item in items {
        if best.as_ref().is_none_or(|b| item.1 > b.1) {
            best = Some(item);
        }
    }
    match best {
        Some((name, excursion, value)) => Check {
            passed: excursion <= tol,
            element: Some(name),
            value,
        },
        None => Check {
            passed: true,
            element: None,
            value: 0.0,
        },
    }
}

pub fn check_constraints(feeder: &Feeder, sol: &PowerFlowSolution) -> ConstraintReport {
    let capacity = feeder.generation_capacity_kw();
    let margin = capacity - sol.served_load_kw - sol.total_losses_kw;
    let power_balance = Check {
        passed: margin >= -KW_TOL,
        element: None,
        value: margin,
    };

    let voltage = worst(
        feeder
            .buses()
            .iter()
            .enumerate()
            .filter(|(i, _)| sol.energized[*i])
            .map(|(i, b)| {
                let v = sol.bus_voltages[i];
                (b.id.clone(), (b.v_min - v).max(v - b.v_max), v)
            }),
        PU_TOL,
    );

    let gens = feeder.generators();
    let gen_p = worst(
        gens.iter().zip(&sol.generator_output).map(|(g, out)| {
            let e = (g.p_min - out.p_kw).max(out.p_kw - g.p_max);
            (g.id.clone(), e, e)
        }),
        KW_TOL,
    );
    let gen_q = worst(
        gens.iter().zip(&sol.generator_output).map(|(g, out)| {
            let e = (g.q_min - out.q_kvar).max(out.q_kvar - g.q_max);
            (g.id.clone(), e, e)
        }),
        KW_TOL,
    );

    let line_s = worst(
        feeder
            .lines()
            .iter()
            .zip(&sol.line_flows)
            .filter_map(|(l, fl)| {
                fl.map(|fl| {
                    let ratio = fl.s_kva / l.s_rating;
                    (l.id.clone(), ratio - 1.0, ratio)
                })
            }),
        PU_TOL,
    );

    let all_ok = power_balance.passed && voltage.passed && gen_p.passed && gen_q.passed && line_s.passed;
    ConstraintReport {
        converged: true,
        power_balance,
        voltage,
        gen_p,
        gen_q,
        line_s,
        all_ok,
    }
}

/// Solves and checks in one go; divergence (or a malformed state vector)
/// yields an all-fail report.
pub fn evaluate(feeder: &Feeder, states: &[bool]) -> ConstraintReport {
    match solve(feeder, states) {
        Ok(sol) => check_constraints(feeder, &sol),
        Err(_) => ConstraintReport::diverged(),
    }
}

pub fn is_feasible(feeder: &Feeder, states: &[bool]) -> bool {
    evaluate(feeder, states).all_ok
}
