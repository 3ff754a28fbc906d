//! Benchmark-only crate; see benches/dfm.rs.
