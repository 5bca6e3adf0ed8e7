//! Criterion benchmarks for the hot paths of `affordance`; see `benches/`.
