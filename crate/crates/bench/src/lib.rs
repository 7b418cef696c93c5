//! Criterion benchmarks for the hot kernels; run with `cargo bench -p inkdiff-bench`.
