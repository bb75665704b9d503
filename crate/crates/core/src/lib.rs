//! Simulated FaaS platform with pluggable function-orchestration engines,
//! a billing meter, a trilemma verifier and an overhead benchmark harness.

pub mod accounting;
pub mod bench;
pub mod engines;
pub mod runtime;
pub mod workflow;
