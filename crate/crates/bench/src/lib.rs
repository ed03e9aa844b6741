//! Criterion benchmarks for `pgrad-core` live in `benches/`.
