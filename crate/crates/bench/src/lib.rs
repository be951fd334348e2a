//! Criterion benchmarks for the gatepilot pipeline; see `benches/`.
