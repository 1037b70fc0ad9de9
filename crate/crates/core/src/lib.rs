//! Deterministic desk-scale model of a trusted-path architecture:
//! enclaves with measured launch and local attestation, a TPM with
//! measured boot, a capability-enforcing hypervisor, encrypted I/O
//! channels, and a scenario harness that runs attacks against the
//! defenses.

pub mod attest;
pub mod crypto;
pub mod enclave;
pub mod machine;
pub mod platform;
pub mod scenario;
pub mod tb;
pub mod tpm;
pub mod trace;
pub mod trusted_path;
