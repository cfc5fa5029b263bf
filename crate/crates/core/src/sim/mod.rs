//! Seeded discrete-event simulation of competing miners.
//!
//! Hash search is modelled as a Poisson process: a miner with power `P`
//! and stake `s` facing difficulty `D` finds blocks at rate `P * s / D`.
//! No hashing happens here; [`replay`] turns a run back into a real chain
//! when a spot check is wanted.
//!
//! Randomness comes from ChaCha8 seeded with the scenario seed, one stream
//! per trial index (`set_stream(trial)`), so trial `t` draws the same
//! numbers whether trials run serially or on a thread pool.

pub mod analysis;
mod engine;
pub mod replay;
mod retarget;
mod scenario;

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::consensus::ConsensusError;

pub use engine::{run_scenario, Simulator};
pub use retarget::{retarget, WindowTiming, RETARGET_CLAMP};
pub use scenario::{sybil_identity, AttackConfig, Horizon, RetargetRule, Scenario, SimMiner, Strategy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("rate must be positive and finite, got {0}")]
    Rate(f64),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("{0}")]
    Replay(String),
}

/// The generator for trial `trial` of a scenario seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Exponential waiting time with the given rate.
pub fn block_time_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, SimError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(SimError::Rate(rate));
    }
    let e: f64 = rng.sample(Exp1);
    Ok(e / rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ForkId {
    /// The chain honest miners extend.
    Main,
    /// The attacker's private fork.
    Private,
}

impl ForkId {
    pub fn name(&self) -> &'static str {
        match self {
            ForkId::Main => "main",
            ForkId::Private => "private",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockRecord {
    /// Absolute block index, history included.
    pub height: u64,
    pub fork: ForkId,
    pub time: f64,
    pub miner: String,
    pub window: u64,
    pub difficulty: f64,
    /// Stake the miner held when the block was found.
    pub stake: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowRecord {
    pub fork: ForkId,
    pub window: u64,
    /// Blocks per account; accounts with no blocks are omitted.
    pub nobm: Vec<(String, u64)>,
    pub nom: u64,
    /// `None` for history windows.
    pub timing: Option<WindowTiming>,
    pub difficulty: f64,
    /// Stake of every participant while this window was mined.
    pub stakes: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub caught_up: bool,
    /// Main-fork difficulty minus private-fork difficulty at the end.
    pub final_deficit: f64,
    pub race_blocks: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Horizon,
    CaughtUp,
    DifficultyExhausted,
    /// No participant had a positive rate.
    Stalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub blocks: Vec<BlockRecord>,
    pub windows: Vec<WindowRecord>,
    pub attack: Option<AttackOutcome>,
    pub stop: StopReason,
    pub end_time: f64,
    pub history_len: u64,
}

pub const BLOCKS_CSV_HEADER: &str = "height,fork,time,miner,window,difficulty,stake";

impl SimResult {
    pub fn fork_blocks(&self, fork: ForkId) -> impl Iterator<Item = &BlockRecord> {
        self.blocks.iter().filter(move |b| b.fork == fork)
    }

    /// Time of the last block on `fork`, or 0 when it has none.
    pub fn last_time(&self, fork: ForkId) -> f64 {
        self.fork_blocks(fork).last().map(|b| b.time).unwrap_or(0.0)
    }

    /// One row per simulated block.
    pub fn blocks_csv(&self) -> String {
        let mut out = String::from(BLOCKS_CSV_HEADER);
        out.push('\n');
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                b.height,
                b.fork.name(),
                b.time,
                b.miner,
                b.window,
                b.difficulty,
                b.stake
            );
        }
        out
    }
}
