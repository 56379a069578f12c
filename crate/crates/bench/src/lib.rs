//! Benchmark-only crate. The measurements live in `benches/pipeline.rs`;
//! run them with `cargo bench -p endonet-bench`.
