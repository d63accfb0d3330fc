//! Harness for neural network verification competitions.
//!
//! The crate reads VNN-LIB properties and ONNX networks, ships a reference
//! verifier (interval bound propagation, input-splitting branch-and-bound and
//! a PGD falsifier), runs external tools under wall-clock limits, validates
//! counterexamples and scores campaigns under the 2021 and 2022 rule sets.

pub mod cli;
pub mod error;
pub mod netio;
pub mod refverify;
pub mod report;
pub mod runner;
pub mod scoring;
pub mod speclang;
pub mod witness;

pub use error::{Error, Result};
