//! Proof-of-mining consensus.
//!
//! A block is valid when its hash falls under `(M / D) * mstak(miner)`, where
//! the mining stake blends an equal share among the previous window's miners
//! with the miner's share of that window's blocks. This crate provides the
//! ledger model, the validity and fork-choice rules, a real nonce-search
//! miner for small hash profiles, and a seeded Monte Carlo simulator for the
//! timing and security properties of the protocol.

pub mod consensus;
pub mod crypto;
pub mod experiments;
pub mod ledger;
pub mod miner;
pub mod ratio;
pub mod sim;
