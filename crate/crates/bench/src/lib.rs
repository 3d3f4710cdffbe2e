//! Criterion benchmarks for `heisenclone-core` live in `benches/`; run them
//! with `cargo bench -p heisenclone-bench`.
