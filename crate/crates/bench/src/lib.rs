//! Criterion benchmarks for `modbot-core`; see `benches/`.
