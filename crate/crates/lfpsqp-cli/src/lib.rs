//! Library surface of the benchmark CLI: trace readers and writers shared
//! by the binary and its integration tests.

pub mod trace;
