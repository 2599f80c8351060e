//! Benchmarks for the forest engine and the design pipeline live in
//! `benches/`. Run them with `cargo bench -p mixforge-bench`.
