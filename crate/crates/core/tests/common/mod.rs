//! Test-only oracles, shared between integration test targets.
#![allow(dead_code)]

pub mod fd;
pub mod oracle;
