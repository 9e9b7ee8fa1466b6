//! Benchmark-only crate; the interesting content lives in `benches/pipeline.rs`.
