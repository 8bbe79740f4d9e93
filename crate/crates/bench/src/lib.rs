//! Criterion benchmarks for the fitting paths. Run with `cargo bench -p patternkit-bench`.
