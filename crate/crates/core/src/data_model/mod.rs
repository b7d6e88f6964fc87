//! Interchange types and the on-disk formats that connect pipeline stages.
//!
//! Detections are newline-delimited JSON, crops are PNG, everything else is
//! a single JSON document. Floats are written with shortest round-trip
//! precision, so every value survives a write/read cycle bit for bit.

mod io;
mod types;

pub use io::*;
pub use types::*;
