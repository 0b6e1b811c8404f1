//! Criterion benchmarks for the numeric kernels live in `benches/kernels.rs`.
