//! Anonymous mesh messaging for Internet-blackout scenarios.
//!
//! Devices form a multi-hop mesh over short-range radio (Bluetooth 5
//! advertisements by default) and exchange fixed-size signcrypted packets at a
//! fixed rate, so an observer cannot tell real messages from cover traffic,
//! nor learn sender/recipient identities from ciphertexts. Message
//! dissemination is either naive flooding ("simple") or digest-driven
//! anti-entropy ("smart"): nodes periodically share a compact bitstring of
//! message hashes and request whatever they are missing.
//!
//! The crate has three layers:
//!
//! * Protocol: [`crypto`] (key-private signcryption), [`digest`] (the message
//!   digest structure), [`node`] (the per-device control loop).
//! * Evaluation: [`simnet`] (deterministic discrete-time simulator with
//!   bandwidth accounting and a 4-type event log), [`analysis`] (bandwidth
//!   percentiles, capacity search, delivery times).
//! * Assurance: [`secgames`] (executable integrity / metadata-invariance /
//!   key-privacy games), [`stats`] (chi-square helpers shared by tests and
//!   distinguishers).
//!
//! Most capabilities have a runnable example under `examples/`; the `meshmsg`
//! binary exposes the same operations as subcommands.

pub mod analysis;
pub mod cli;
pub mod crypto;
pub mod digest;
pub mod node;
pub mod secgames;
pub mod simnet;
pub mod stats;
