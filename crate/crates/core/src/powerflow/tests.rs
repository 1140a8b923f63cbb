use approx::assert_relative_eq;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::synthetic::{random_radial_feeder, SyntheticOptions};
use crate::grid::{
    builtin_feeder, BaseValues, Breaker, Bus, FeederDocument, Generator, Line, LoadPoint,
    MicrogridPartition, FORMAT_VERSION,
};

fn two_bus(r: f64, x: f64, p: f64, q: f64) -> Feeder {
    chain(&[(r, x)], &[(p, q)], 1000.0)
}

/// Source at `b0`, then one bus per segment, each with a switched load.
fn chain(segments: &[(f64, f64)], loads: &[(f64, f64)], p_max: f64) -> Feeder {
    let mut doc = FeederDocument {
        format_version: FORMAT_VERSION,
        name: "chain".into(),
        base: BaseValues::default(),
        buses: vec![Bus::new("b0")],
        lines: vec![],
        breakers: vec![],
        loads: vec![],
        generators: vec![Generator {
            id: "g".into(),
            bus_id: "b0".into(),
            p_min: 0.0,
            p_max,
            q_min: -p_max,
            q_max: p_max,
        }],
        partition: MicrogridPartition::default(),
    };
    let mut ids = vec![];
    for (i, (&(r, x), &(p, q))) in segments.iter().zip(loads).enumerate() {
        let n = i + 1;
        doc.buses.push(Bus::new(format!("b{n}")));
        doc.lines.push(Line {
            id: format!("l{n}"),
            from_bus: format!("b{i}"),
            to_bus: format!("b{n}"),
            resistance: r,
            reactance: x,
            s_rating: 5000.0,
        });
        doc.breakers.push(Breaker {
            id: format!("cb{n}"),
            line_id: format!("l{n}"),
            state: 0,
        });
        doc.loads.push(LoadPoint {
            id: format!("ld{n}"),
            bus_id: format!("b{n}"),
            p_rated: p,
            q_rated: q,
            weight: 1.0,
            breaker_id: format!("cb{n}"),
        });
        ids.push(format!("cb{n}"));
    }
    doc.partition.assignments.insert(0, ids);
    Feeder::from_document(doc).unwrap()
}

#[test]
fn lossless_line_keeps_flat_voltage() {
    let f = two_bus(0.0, 0.0, 100.0, 0.0);
    let sol = solve(&f, &[true]).unwrap();
    assert_relative_eq!(sol.bus_voltages[0], 1.0);
    assert_relative_eq!(sol.bus_voltages[1], 1.0);
    assert_relative_eq!(sol.total_losses_kw, 0.0);
    assert_relative_eq!(sol.served_load_kw, 100.0);
}

#[test]
fn two_bus_resistive_matches_closed_form() {
    // V2 = 1 - r * P / V2  =>  V2^2 - V2 + r*P = 0 with P = 0.1 p.u.
    let (r, p): (f64, f64) = (0.01, 0.1);
    let v2 = (1.0 + (1.0 - 4.0 * r * p).sqrt()) / 2.0;
    let loss_kw = r * (p / v2).powi(2) * 1000.0;
    // Frozen from the closed form above.
    assert_relative_eq!(v2, 0.998_998_997_994_986, epsilon = 1e-12);
    assert_relative_eq!(loss_kw, 0.100_200_501_404_213, epsilon = 1e-12);

    let f = two_bus(r, 0.0, 100.0, 0.0);
    let sol = solve(&f, &[true]).unwrap();
    assert!((sol.bus_voltages[1] - v2).abs() < 1e-6);
    assert!((sol.total_losses_kw - loss_kw).abs() < 1e-4);
    assert!(sol.iterations <= 4, "iterations {}", sol.iterations);
    let fl = sol.line_flows[0].unwrap();
    assert!((fl.p_kw - (100.0 + loss_kw)).abs() < 1e-4);
}

#[test]
fn all_open_is_deenergized() {
    let f = builtin_feeder("ieee13").unwrap();
    let states = vec![false; f.breaker_count()];
    let sol = solve(&f, &states).unwrap();
    assert_eq!(sol.served_load_kw, 0.0);
    assert_eq!(sol.total_losses_kw, 0.0);
    assert!(sol.bus_voltages.iter().all(|&v| v == 1.0));
    let report = check_constraints(&f, &sol);
    assert!(report.all_ok);
}

#[test]
fn state_length_is_checked() {
    let f = builtin_feeder("ieee13").unwrap();
    assert_eq!(
        solve(&f, &[true]),
        Err(PowerFlowError::StateLength {
            expected: 9,
            got: 1
        })
    );
}

#[test]
fn ieee13_full_closure_overloads_capacity() {
    let f = builtin_feeder("ieee13").unwrap();
    let sol = solve(&f, &[true; 9]).unwrap();
    let report = check_constraints(&f, &sol);
    assert!(!report.power_balance.passed);
    assert!(report.power_balance.value < -861.0);
    assert!(!report.all_ok);
}

#[test]
fn ieee13_reference_configuration_is_feasible() {
    let f = builtin_feeder("ieee13").unwrap();
    // MG1: 170 kW (cb2) and 400 kW (cb3); MG2: 1150 kW (cb7) and 843 kW (cb9).
    let states = parse_states("011000101");
    let sol = solve(&f, &states).unwrap();
    let report = check_constraints(&f, &sol);
    assert!(report.all_ok, "{report:?}");
    assert_relative_eq!(sol.served_load_kw, 2563.0);
    let rp = restored_power(&f, &states);
    assert_relative_eq!(rp.served_kw, 2563.0);
    assert_relative_eq!(rp.weighted_kw, 2563.0);
}

fn parse_states(s: &str) -> Vec<bool> {
    crate::grid::parse_states(s, s.len()).unwrap()
}

#[test]
fn restored_power_extremes() {
    let f = builtin_feeder("ieee13").unwrap();
    let none = restored_power(&f, &[false; 9]);
    assert_eq!((none.served_kw, none.weighted_kw), (0.0, 0.0));
    let all = restored_power(&f, &[true; 9]);
    assert_relative_eq!(all.served_kw, 3461.0);
}

#[test]
fn heavy_remote_load_violates_voltage_at_far_end() {
    let segs = [(0.01, 0.02); 4];
    let loads = [(10.0, 5.0), (10.0, 5.0), (10.0, 5.0), (900.0, 400.0)];
    let f = chain(&segs, &loads, 5000.0);
    let states = vec![true; 4];
    let sol = solve(&f, &states).unwrap();

    // Hand sweep on the chain, iterated to 1e-12.
    let z = Complex64::new(0.01, 0.02);
    let s: Vec<Complex64> = loads.iter().map(|&(p, q)| Complex64::new(p, q) / 1000.0).collect();
    let mut v = [Complex64::new(1.0, 0.0); 5];
    for _ in 0..200 {
        let mut carried = Complex64::new(0.0, 0.0);
        let mut j = [Complex64::new(0.0, 0.0); 5];
        for k in (1..5).rev() {
            carried += (s[k - 1] / v[k]).conj();
            j[k] = carried;
        }
        for k in 1..5 {
            v[k] = v[k - 1] - z * j[k];
        }
    }
    for (k, vk) in v.iter().enumerate().skip(1) {
        assert!((sol.bus_voltages[k] - vk.norm()).abs() < 1e-5);
    }
    assert!(v[4].norm() < 0.95);

    let report = check_constraints(&f, &sol);
    assert!(!report.voltage.passed);
    assert_eq!(report.voltage.element.as_deref(), Some("b4"));
    assert!(report.power_balance.passed);
}

#[test]
fn absurd_load_diverges_and_fails_everything() {
    let f = two_bus(0.5, 0.5, 5000.0, 5000.0);
    assert!(matches!(
        solve(&f, &[true]),
        Err(PowerFlowError::Diverged { .. })
    ));
    let report = evaluate(&f, &[true]);
    assert!(!report.converged && !report.all_ok);
    assert_eq!(report.failures().len(), 5);
}

#[test]
fn islands_with_several_generators_balance() {
    let f = builtin_feeder("ieee13").unwrap();
    let sol = solve(&f, &parse_states("000000101")).unwrap();
    // g2 (1015 kW) is the slack of MG2; g3 is dispatched proportionally.
    let g2 = sol.generator_output[1];
    let g3 = sol.generator_output[2];
    let ratio = g3.p_kw / (g2.p_kw + g3.p_kw);
    assert!((ratio - 1000.0 / 2015.0).abs() < 1e-4, "ratio {ratio}");
    assert!((sol.total_generation_kw() - sol.served_load_kw - sol.total_losses_kw).abs() < 1e-3);
}

#[test]
fn csv_dumps_have_headers() {
    let f = builtin_feeder("ieee13").unwrap();
    let sol = solve(&f, &parse_states("011000101")).unwrap();
    let mut buses = Vec::new();
    sol.write_bus_csv(&f, &mut buses).unwrap();
    let buses = String::from_utf8(buses).unwrap();
    assert!(buses.starts_with("bus,voltage\n"));
    assert_eq!(buses.lines().count(), 14);
    let mut lines = Vec::new();
    sol.write_line_csv(&f, &mut lines).unwrap();
    let lines = String::from_utf8(lines).unwrap();
    assert!(lines.starts_with("line,p,q,s\n"));
    // Two trunk/source lines plus four closed laterals.
    assert_eq!(lines.lines().count(), 1 + 6);
}

/// Dense reference: V = V0 - D * I with D[i][k] the impedance of the path
/// shared by buses i and k, iterated on I_k = conj(S_k / V_k).
fn dense_reference(f: &Feeder, states: &[bool]) -> Vec<f64> {
    let n = f.buses().len();
    let doc = f.document();
    let pos = |id: &str| doc.buses.iter().position(|b| b.id == id).unwrap();
    let conducting = |li: usize| {
        doc.breakers
            .iter()
            .enumerate()
            .filter(|(_, b)| b.line_id == doc.lines[li].id)
            .all(|(k, _)| states[k])
    };
    // Paths as line lists from the single source bus.
    let root = pos(&doc.generators[0].bus_id);
    let mut path: Vec<Option<Vec<usize>>> = vec![None; n];
    path[root] = Some(vec![]);
    let mut changed = true;
    while changed {
        changed = false;
        for (li, l) in doc.lines.iter().enumerate() {
            if !conducting(li) {
                continue;
            }
            let (a, b) = (pos(&l.from_bus), pos(&l.to_bus));
            for (u, w) in [(a, b), (b, a)] {
                if path[u].is_some() && path[w].is_none() {
                    let mut p = path[u].clone().unwrap();
                    p.push(li);
                    path[w] = Some(p);
                    changed = true;
                }
            }
        }
    }
    let live: Vec<usize> = (0..n).filter(|&i| path[i].is_some() && i != root).collect();
    let m = live.len();
    let mut dmat = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    for (a, &i) in live.iter().enumerate() {
        for (b, &k) in live.iter().enumerate() {
            let pk = path[k].as_ref().unwrap();
            for &li in path[i].as_ref().unwrap() {
                if pk.contains(&li) {
                    dmat[a][b] += Complex64::new(doc.lines[li].resistance, doc.lines[li].reactance);
                }
            }
        }
    }
    let mut s = vec![Complex64::new(0.0, 0.0); m];
    for (li, load) in doc.loads.iter().enumerate() {
        let bus = pos(&load.bus_id);
        let brk = doc.breakers.iter().position(|b| b.id == load.breaker_id).unwrap();
        if let Some(a) = live.iter().position(|&x| x == bus) {
            if states[brk] {
                s[a] += Complex64::new(load.p_rated, load.q_rated) / 1000.0;
            }
        }
        let _ = li;
    }
    let mut v = vec![Complex64::new(1.0, 0.0); m];
    for _ in 0..500 {
        let cur: Vec<Complex64> = (0..m).map(|k| (s[k] / v[k]).conj()).collect();
        v = (0..m)
            .map(|a| Complex64::new(1.0, 0.0) - (0..m).map(|b| dmat[a][b] * cur[b]).sum::<Complex64>())
            .collect();
    }
    let mut out = vec![1.0; n];
    for (a, &i) in live.iter().enumerate() {
        out[i] = v[a].norm();
    }
    out
}

#[test]
fn solver_matches_dense_reference_on_random_feeders() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let buses = 2 + case % 9;
        let f = random_radial_feeder(
            &mut rng,
            SyntheticOptions {
                buses,
                generators: 1,
                capacity_fraction: 1.2,
                agents: 1,
            },
        );
        let states: Vec<bool> = (0..f.breaker_count()).map(|k| (case + k) % 3 != 0).collect();
        let sol = solve(&f, &states).unwrap();
        let reference = dense_reference(&f, &states);
        for (got, want) in sol.bus_voltages.iter().zip(&reference) {
            assert!((got - want).abs() < 1e-5, "case {case}: {got} vs {want}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_is_conserved(seed in any::<u64>(), buses in 2usize..10, gens in 1usize..3, mask in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_radial_feeder(&mut rng, SyntheticOptions { buses, generators: gens, capacity_fraction: 1.0, agents: 2 });
        let states: Vec<bool> = (0..f.breaker_count()).map(|k| mask >> k & 1 == 1).collect();
        if let Ok(sol) = solve(&f, &states) {
            let imbalance = sol.total_generation_kw() - sol.served_load_kw - sol.total_losses_kw;
            prop_assert!(imbalance.abs() < 1e-3, "imbalance {imbalance}");
            for fl in sol.line_flows.iter().flatten() {
                prop_assert!((fl.s_kva.powi(2) - fl.p_kw.powi(2) - fl.q_kvar.powi(2)).abs() < 1e-6 * (1.0 + fl.s_kva.powi(2)));
            }
        }
    }

    #[test]
    fn closing_a_breaker_never_reduces_served_load(seed in any::<u64>(), buses in 2usize..10, mask in any::<u64>(), pick in any::<usize>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_radial_feeder(&mut rng, SyntheticOptions { buses, ..Default::default() });
        let mut states: Vec<bool> = (0..f.breaker_count()).map(|k| mask >> k & 1 == 1).collect();
        let before = restored_power(&f, &states).served_kw;
        states[pick % f.breaker_count()] = true;
        prop_assert!(restored_power(&f, &states).served_kw >= before);
    }

    #[test]
    fn constraint_check_is_pure(seed in any::<u64>(), mask in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_radial_feeder(&mut rng, SyntheticOptions::default());
        let states: Vec<bool> = (0..f.breaker_count()).map(|k| mask >> k & 1 == 1).collect();
        prop_assert_eq!(evaluate(&f, &states), evaluate(&f, &states));
    }
}
