//! Criterion benchmarks for `genz-core` live in `benches/`.
