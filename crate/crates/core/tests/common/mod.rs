//! Helpers shared by the integration test targets.
#![allow(dead_code, unused_imports)]

pub mod cases;
pub mod naive;
mod oracle;
pub mod parity;

pub use oracle::{brute_force_map, synthetic_set};

use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}
