//! Criterion benchmarks for the hot paths of `holo-core`; see `benches/`.
