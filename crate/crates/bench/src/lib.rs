//! Criterion benchmarks for the restoration pipeline; see `benches/`.
