//! Criterion benchmarks for `ttpinn-core`; see `benches/`.
