//! Benchmarks for the simulator pipeline live in `benches/`.
