//! Benchmarks for the stack live in benches/.
