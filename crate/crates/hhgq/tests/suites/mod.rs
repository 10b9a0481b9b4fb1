#![allow(dead_code)]

pub mod common;
pub mod field;
pub mod fock;
pub mod measures;

use std::panic::{catch_unwind, AssertUnwindSafe};

/// Runs every check, returning the names of those that panicked.
pub fn failures(checks: &[(&str, fn())]) -> Vec<String> {
    checks
        .iter()
        .filter(|(_, f)| catch_unwind(AssertUnwindSafe(f)).is_err())
        .map(|(n, _)| n.to_string())
        .collect()
}

pub fn run(checks: &[(&str, fn())]) {
    let failed = failures(checks);
    assert!(failed.is_empty(), "failed: {failed:?}");
}
