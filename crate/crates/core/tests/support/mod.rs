//! Helpers shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

pub mod brute;
pub mod downstream;
pub mod fixtures;
pub mod gradcheck;
pub mod midt_effect;
pub mod privacy;
