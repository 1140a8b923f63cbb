//! Exhaustive ground truth for the restoration optimum.
//!
//! Every breaker configuration is solved and checked; the feasible
//! configuration with the largest weighted restored power wins. Ties go to
//! fewer closed breakers, then to the lexicographically smaller state vector
//! (open sorts before closed, breaker 0 first).

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{format_states, Feeder};
use crate::powerflow::{is_feasible, restored_power};

/// Largest breaker count accepted by exhaustive enumeration.
pub const MAX_BREAKERS: usize = 26;

const KW_TIE: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{breakers} breakers exceed the enumeration cap of {cap}")]
    TooManyBreakers { breakers: usize, cap: usize },
    #[error("decomposition requires every generator box to contain zero output ({0})")]
    DecompositionUnsupported(String),
    #[error("combined per-island optimum is infeasible on the full feeder")]
    InconsistentDecomposition,
    #[error("oracle cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("oracle cache format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    #[serde(with = "state_string")]
    pub best_states: Vec<bool>,
    pub best_weighted_kw: f64,
    pub best_served_kw: f64,
    pub feasible_count: u64,
    pub evaluated_count: u64,
}

mod state_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::grid::format_states(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let s = String::deserialize(d)?;
        crate::grid::parse_states(&s, s.len()).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    mask: u64,
    weighted: f64,
    served: f64,
}

/// `Less` means `a` is the better configuration.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    if (a.weighted - b.weighted).abs() > KW_TIE {
        return b.weighted.total_cmp(&a.weighted);
    }
    let (ca, cb) = (a.mask.count_ones(), b.mask.count_ones());
    if ca != cb {
        return ca.cmp(&cb);
    }
    let diff = a.mask ^ b.mask;
    if diff == 0 {
        return Ordering::Equal;
    }
    // First differing breaker: open wins.
    if a.mask >> diff.trailing_zeros() & 1 == 0 {
        Ordering::Less
    } else {
        Ordering::Greater
    }
}

fn pick(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if rank(&x, &y) != Ordering::Greater { x } else { y }),
        (x, None) => x,
        (None, y) => y,
    }
}

fn expand(mask: u64, n: usize, buf: &mut Vec<bool>) {
    buf.clear();
    buf.extend((0..n).map(|k| mask >> k & 1 == 1));
}

/// Evaluates `masks`, each a bit set over the breaker indices in `breakers`.
fn scan(
    feeder: &Feeder,
    breakers: &[usize],
    masks: impl Iterator<Item = u64>,
) -> (Option<Candidate>, u64, u64) {
    let n = feeder.breaker_count();
    let mut states = vec![false; n];
    let mut local = Vec::with_capacity(breakers.len());
    let mut best = None;
    let (mut feasible, mut evaluated) = (0u64, 0u64);
    for m in masks {
        evaluated += 1;
        expand(m, breakers.len(), &mut local);
        states.iter_mut().for_each(|s| *s = false);
        let mut full = 0u64;
        for (k, &b) in breakers.iter().enumerate() {
            if local[k] {
                states[b] = true;
                full |= 1 << b;
            }
        }
        if !is_feasible(feeder, &states) {
            continue;
        }
        feasible += 1;
        let rp = restored_power(feeder, &states);
        best = pick(
            best,
            Some(Candidate {
                mask: full,
                weighted: rp.weighted_kw,
                served: rp.served_kw,
            }),
        );
    }
    (best, feasible, evaluated)
}

fn check_cap(feeder: &Feeder) -> Result<usize, OracleError> {
    let n = feeder.breaker_count();
    if n > MAX_BREAKERS {
        return Err(OracleError::TooManyBreakers {
            breakers: n,
            cap: MAX_BREAKERS,
        });
    }
    Ok(n)
}

fn finish(n: usize, best: Option<Candidate>, feasible: u64, evaluated: u64) -> OracleResult {
    // The all-open configuration of a valid feeder is always feasible.
    let best = best.unwrap_or(Candidate {
        mask: 0,
        weighted: 0.0,
        served: 0.0,
    });
    let mut states = Vec::with_capacity(n);
    expand(best.mask, n, &mut states);
    OracleResult {
        best_states: states,
        best_weighted_kw: best.weighted,
        best_served_kw: best.served,
        feasible_count: feasible,
        evaluated_count: evaluated,
    }
}

/// Exhaustive search in Gray-code order, split across the rayon pool.
pub fn brute_force(feeder: &Feeder) -> Result<OracleResult, OracleError> {
    let n = check_cap(feeder)?;
    let all: Vec<usize> = (0..n).collect();
    let total = 1u64 << n;
    let chunk_bits = n.min(12);
    let chunk = 1u64 << chunk_bits;
    let (best, feasible, evaluated) = (0..total / chunk)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk;
            scan(feeder, &all, (start..start + chunk).map(|i| i ^ (i >> 1)))
        })
        .reduce(
            || (None, 0, 0),
            |a, b| (pick(a.0, b.0), a.1 + b.1, a.2 + b.2),
        );
    Ok(finish(n, best, feasible, evaluated))
}

/// Exhaustive search in plain binary order on the calling thread.
pub fn brute_force_naive(feeder: &Feeder) -> Result<OracleResult, OracleError> {
    let n = check_cap(feeder)?;
    let all: Vec<usize> = (0..n).collect();
    let (best, feasible, evaluated) = scan(feeder, &all, 0..1u64 << n);
    Ok(finish(n, best, feasible, evaluated))
}

/// Optimum assembled from independent searches over each electrically
/// isolated group of breakers (for the built-ins: each microgrid).
///
/// `evaluated_count` is the sum of per-group enumerations and
/// `feasible_count` the product of per-group feasible counts.
pub fn decomposed(feeder: &Feeder) -> Result<OracleResult, OracleError> {
    let n = feeder.breaker_count();
    if n > 64 {
        return Err(OracleError::TooManyBreakers {
            breakers: n,
            cap: 64,
        });
    }
    for g in feeder.generators() {
        if g.p_min > 0.0 || g.q_min > 0.0 || g.q_max < 0.0 {
            return Err(OracleError::DecompositionUnsupported(g.id.clone()));
        }
    }
    let groups = feeder.breaker_components();
    for g in &groups {
        if g.len() > MAX_BREAKERS {
            return Err(OracleError::TooManyBreakers {
                breakers: g.len(),
                cap: MAX_BREAKERS,
            });
        }
    }
    let parts: Vec<_> = groups
        .par_iter()
        .map(|g| scan(feeder, g, 0..1u64 << g.len()))
        .collect();

    let mut mask = 0u64;
    let (mut weighted, mut served) = (0.0, 0.0);
    let (mut feasible, mut evaluated) = (1u64, 0u64);
    for (best, f, e) in parts {
        let best = best.expect("all-open group configuration is feasible");
        mask |= best.mask;
        weighted += best.weighted;
        served += best.served;
        feasible *= f;
        evaluated += e;
    }
    let result = finish(
        n,
        Some(Candidate {
            mask,
            weighted,
            served,
        }),
        feasible,
        evaluated,
    );
    if !is_feasible(feeder, &result.best_states) {
        return Err(OracleError::InconsistentDecomposition);
    }
    Ok(result)
}

/// Cached oracle result keyed by the feeder's content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCache {
    pub feeder: String,
    pub feeder_hash: String,
    pub method: String,
    #[serde(flatten)]
    pub result: OracleResult,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl OracleCache {
    pub fn new(feeder: &Feeder, method: &str, result: OracleResult) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            feeder: feeder.name().to_string(),
            feeder_hash: feeder.content_hash(),
            method: method.to_string(),
            result,
            timestamp,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), OracleError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Loads a cache file when it exists and matches `feeder`.
    pub fn load_matching(path: &Path, feeder: &Feeder) -> Result<Option<Self>, OracleError> {
        if !path.exists() {
            return Ok(None);
        }
        let cache: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok((cache.feeder_hash == feeder.content_hash()).then_some(cache))
    }
}

impl std::fmt::Display for OracleResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "best {} weighted {:.3} kW served {:.3} kW ({} feasible states, {} configurations evaluated)",
            format_states(&self.best_states),
            self.best_weighted_kw,
            self.best_served_kw,
            self.feasible_count,
            self.evaluated_count
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::builtin_feeder;
    use crate::grid::synthetic::{random_radial_feeder, SyntheticOptions};
    use crate::powerflow::evaluate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ieee13_optimum_restores_2563_kw() {
        let f = builtin_feeder("ieee13").unwrap();
        let r = brute_force(&f).unwrap();
        assert_eq!(r.evaluated_count, 512);
        assert_eq!(r.best_served_kw, 2563.0);
        assert_eq!(r.best_weighted_kw, 2563.0);
        assert_eq!(format_states(&r.best_states), "011000101");
        assert!(evaluate(&f, &r.best_states).all_ok);
    }

    #[test]
    fn ieee123_decomposed_optimum() {
        let f = builtin_feeder("ieee123").unwrap();
        let r = decomposed(&f).unwrap();
        assert_eq!(r.best_served_kw, 2305.0);
        assert!(r.best_served_kw / 2400.0 >= 0.94);
        assert_eq!(r.evaluated_count, 1024 + 32 + 8 + 8 + 32);
    }

    #[test]
    fn zero_generation_keeps_everything_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_radial_feeder(
            &mut rng,
            SyntheticOptions {
                buses: 5,
                capacity_fraction: 1e-6,
                ..Default::default()
            },
        );
        let r = brute_force(&f).unwrap();
        assert!(r.best_states.iter().all(|&s| !s));
        assert_eq!(r.best_served_kw, 0.0);
    }

    #[test]
    fn ample_generation_closes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut doc = random_radial_feeder(&mut rng, SyntheticOptions::default()).into_document();
        for l in &mut doc.lines {
            l.resistance = 0.001;
            l.reactance = 0.001;
            l.s_rating = 10_000.0;
        }
        doc.generators[0].p_max = 10_000.0;
        doc.generators[0].q_max = 10_000.0;
        let f = Feeder::from_document(doc).unwrap();
        let r = brute_force(&f).unwrap();
        assert!(r.best_states.iter().all(|&s| s));
        assert_eq!(r.feasible_count, r.evaluated_count);
    }

    #[test]
    fn cap_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_radial_feeder(
            &mut rng,
            SyntheticOptions {
                buses: 28,
                ..Default::default()
            },
        );
        assert!(matches!(
            brute_force(&f),
            Err(OracleError::TooManyBreakers { breakers: 27, .. })
        ));
    }

    #[test]
    fn tie_breaks_prefer_fewer_then_open_first() {
        let a = Candidate { mask: 0b011, weighted: 10.0, served: 10.0 };
        let b = Candidate { mask: 0b100, weighted: 10.0, served: 10.0 };
        assert_eq!(rank(&b, &a), Ordering::Less);
        let c = Candidate { mask: 0b110, weighted: 10.0, served: 10.0 };
        // 011 vs 110: breaker 0 differs, c has it open.
        assert_eq!(rank(&c, &a), Ordering::Less);
    }

    #[test]
    fn cache_round_trip() {
        let f = builtin_feeder("ieee13").unwrap();
        let r = brute_force(&f).unwrap();
        let dir = std::env::temp_dir().join(format!("gridmask-oracle-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("oracle.json");
        OracleCache::new(&f, "exhaustive", r.clone()).save(&path).unwrap();
        let back = OracleCache::load_matching(&path, &f).unwrap().unwrap();
        assert_eq!(back.result, r);
        let other = builtin_feeder("ieee123").unwrap();
        assert!(OracleCache::load_matching(&path, &other).unwrap().is_none());
        std::fs::remove_dir_all(&dir).ok();
    }
}
