//! Test-side oracles shared by the integration targets.
//!
//! Everything here is written against plain `f64` vectors so it does not
//! share code paths with the crate under test.

#![allow(dead_code)]

pub mod gradcheck;
