//! Criterion benchmarks for the `dashaff` crate live under `benches/`.
