//! Criterion benchmarks for fedomg; see `benches/`.
