//! Nonce search against the profile's real hash function.
//!
//! Time is measured in hash attempts: at computing power 1 an attempt takes
//! one time unit, so the attempt count of a search is the time it took.

use num_bigint::BigUint;
use rayon::prelude::*;
use thiserror::Error;

use crate::consensus::{self, ConsensusError, Threshold};
use crate::crypto::{Account, Digest, HashProfile, KeyPair};
use crate::ledger::{self, codec_nonce_line, Block, Chain, ChainParams, Mode, SignedTransaction};
use crate::ratio::{self, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MinerError {
    #[error("job would produce an invalid chain: {0}")]
    IllegalJob(String),
    #[error("nonce range {start}..{limit} is reversed")]
    NonceRange { start: u64, limit: u64 },
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

#[derive(Clone, Debug)]
pub struct MiningJob<'a> {
    pub parent: &'a Chain,
    pub miner: Account,
    pub txs: Vec<SignedTransaction>,
    pub target: Threshold,
    /// First nonce tried.
    pub nonce_start: u64,
    /// One past the last nonce tried.
    pub nonce_limit: u64,
}

impl<'a> MiningJob<'a> {
    /// A job for the next block of `parent`, with the target the chain rules demand.
    pub fn next_block(
        parent: &'a Chain,
        miner: Account,
        txs: Vec<SignedTransaction>,
        nonce_start: u64,
        nonce_limit: u64,
    ) -> Result<Self, MinerError> {
        let target = consensus::block_target(parent, parent.len() as u64, &miner)?;
        Ok(MiningJob {
            parent,
            miner,
            txs,
            target,
            nonce_start,
            nonce_limit,
        })
    }

    fn template(&self) -> Block {
        Block::new(
            self.parent.next_prev_hash(),
            self.miner,
            self.txs.clone(),
            self.nonce_start,
        )
    }

    /// The block would break hash links, signatures, mass or balances.
    fn check_legal(&self, template: &Block) -> Result<(), MinerError> {
        if self.nonce_start > self.nonce_limit {
            return Err(MinerError::NonceRange {
                start: self.nonce_start,
                limit: self.nonce_limit,
            });
        }
        let mut extended = self.parent.clone();
        extended.blocks.push(template.clone());
        let index = self.parent.len();
        let report = ledger::validate_structure(&extended);
        match report.violations.iter().find(|v| v.index == index) {
            Some(v) => Err(MinerError::IllegalJob(v.to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MineOutcome {
    Found { block: Block, attempts: u64 },
    Exhausted { attempts: u64 },
}

impl MineOutcome {
    pub fn block(&self) -> Option<&Block> {
        match self {
            MineOutcome::Found { block, .. } => Some(block),
            MineOutcome::Exhausted { .. } => None,
        }
    }

    pub fn attempts(&self) -> u64 {
        match self {
            MineOutcome::Found { attempts, .. } | MineOutcome::Exhausted { attempts } => *attempts,
        }
    }
}

struct Searcher {
    prefix: Vec<u8>,
    profile: HashProfile,
    bound: Option<BigUint>,
}

impl Searcher {
    fn hits(&self, nonce: u64) -> bool {
        let Some(bound) = &self.bound else {
            return false;
        };
        let mut bytes = self.prefix.clone();
        bytes.extend_from_slice(codec_nonce_line(nonce).as_bytes());
        self.profile.value_of(&Digest::of(&bytes)).value() <= bound
    }
}

fn searcher(job: &MiningJob<'_>, template: &Block) -> Searcher {
    Searcher {
        prefix: template.mining_prefix(),
        profile: job.parent.params.profile,
        bound: job.target.bound(),
    }
}

/// Scans nonces upward from `nonce_start` and returns the first block whose
/// hash meets the target.
pub fn mine(job: &MiningJob<'_>) -> Result<MineOutcome, MinerError> {
    let template = job.template();
    job.check_legal(&template)?;
    let search = searcher(job, &template);
    if search.bound.is_none() {
        return Ok(MineOutcome::Exhausted { attempts: 0 });
    }
    for nonce in job.nonce_start..job.nonce_limit {
        if search.hits(nonce) {
            let mut block = template;
            block.nonce = nonce;
            return Ok(MineOutcome::Found {
                block,
                attempts: nonce - job.nonce_start + 1,
            });
        }
    }
    Ok(MineOutcome::Exhausted {
        attempts: job.nonce_limit - job.nonce_start,
    })
}

/// Same result as [`mine`], with the nonce range searched on the rayon pool.
pub fn mine_parallel(job: &MiningJob<'_>) -> Result<MineOutcome, MinerError> {
    let template = job.template();
    job.check_legal(&template)?;
    let search = searcher(job, &template);
    if search.bound.is_none() {
        return Ok(MineOutcome::Exhausted { attempts: 0 });
    }
    let found = (job.nonce_start..job.nonce_limit)
        .into_par_iter()
        .find_first(|n| search.hits(*n));
    Ok(match found {
        Some(nonce) => {
            let mut block = template;
            block.nonce = nonce;
            MineOutcome::Found {
                block,
                attempts: nonce - job.nonce_start + 1,
            }
        }
        None => MineOutcome::Exhausted {
            attempts: job.nonce_limit - job.nonce_start,
        },
    })
}

/// Mines and appends the next block of `chain`.
pub fn extend(
    chain: &mut Chain,
    miner: Account,
    txs: Vec<SignedTransaction>,
    nonce_limit: u64,
) -> Result<MineOutcome, MinerError> {
    let job = MiningJob::next_block(chain, miner, txs, 0, nonce_limit)?;
    let outcome = mine(&job)?;
    if let Some(block) = outcome.block() {
        chain.blocks.push(block.clone());
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttemptStats {
    pub trials: u64,
    pub mean: f64,
    pub variance: f64,
    /// `D / stake`.
    pub nominal_mean: f64,
    /// `(M + 1) / (floor(t) + 1)`, the exact geometric mean for target `t`.
    pub exact_mean: f64,
}

impl AttemptStats {
    pub fn relative_error(&self) -> f64 {
        (self.mean - self.nominal_mean).abs() / self.nominal_mean
    }
}

/// Mines `trials` independent empty blocks against `(M / D) * stake` and
/// summarises the attempt counts. Trial `t` mines for a key derived from
/// `t`, so results do not depend on thread scheduling.
pub fn attempts_distribution_check(
    profile: HashProfile,
    trials: u64,
    difficulty: &Rational,
    stake: &Rational,
) -> Result<AttemptStats, MinerError> {
    let max = profile.max_hash();
    let target = consensus::pom_threshold(difficulty, stake, &max)?;
    let Some(bound) = target.bound() else {
        return Err(MinerError::IllegalJob("target is zero".into()));
    };
    let params = ChainParams::new(Mode::Pow, profile, 1, ratio::from_u64(0), vec![difficulty.clone()])
        .map_err(|e| MinerError::IllegalJob(e.to_string()))?;
    let parent = Chain::new(params);

    let attempts: Vec<u64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let miner = KeyPair::from_seed_label(&format!("attempts-trial-{t}")).account();
            let job = MiningJob {
                parent: &parent,
                miner,
                txs: Vec::new(),
                target: target.clone(),
                nonce_start: 0,
                nonce_limit: u64::MAX,
            };
            mine(&job).map(|o| o.attempts())
        })
        .collect::<Result<_, _>>()?;

    let n = attempts.len() as f64;
    let mean = attempts.iter().map(|a| *a as f64).sum::<f64>() / n;
    let variance = if attempts.len() > 1 {
        attempts.iter().map(|a| (*a as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let nominal = ratio::to_f64(&(difficulty / stake));
    let exact = ratio::to_f64(&(ratio::from_biguint(&(max + 1u32)) / ratio::from_biguint(&(bound + 1u32))));
    Ok(AttemptStats {
        trials,
        mean,
        variance,
        nominal_mean: nominal,
        exact_mean: exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{pow_threshold, validate};
    use crate::ledger::Transaction;
    use crate::ratio::{from_u64, ratio};

    fn pow_chain(ds: &[u64]) -> Chain {
        Chain::new(
            ChainParams::new(
                Mode::Pow,
                HashProfile::default(),
                4,
                ratio(1, 2),
                ds.iter().map(|d| from_u64(*d)).collect(),
            )
            .unwrap(),
        )
    }

    fn acct(l: &str) -> Account {
        KeyPair::from_seed_label(l).account()
    }

    #[test]
    fn everything_valid_at_target_m() {
        let chain = pow_chain(&[1]);
        let job = MiningJob::next_block(&chain, acct("A"), vec![], 5, 100).unwrap();
        let out = mine(&job).unwrap();
        assert_eq!(out.block().unwrap().nonce, 5);
        assert_eq!(out.attempts(), 1);
    }

    #[test]
    fn empty_range_is_exhausted() {
        let chain = pow_chain(&[1]);
        let job = MiningJob::next_block(&chain, acct("A"), vec![], 9, 9).unwrap();
        assert_eq!(mine(&job).unwrap(), MineOutcome::Exhausted { attempts: 0 });
        let reversed = MiningJob { nonce_start: 10, ..job };
        assert!(matches!(mine(&reversed), Err(MinerError::NonceRange { .. })));
    }

    #[test]
    fn mined_blocks_validate_and_jobs_are_deterministic() {
        let mut chain = pow_chain(&[16, 16]);
        for m in ["A", "B", "A", "C", "B", "A"] {
            extend(&mut chain, acct(m), vec![], 1 << 20).unwrap();
        }
        assert!(validate(&chain).is_valid());
        let job = MiningJob::next_block(&chain, acct("A"), vec![], 0, 1 << 20).unwrap();
        assert_eq!(mine(&job).unwrap(), mine(&job).unwrap());
        assert_eq!(mine(&job).unwrap(), mine_parallel(&job).unwrap());
    }

    #[test]
    fn raising_target_never_raises_winning_nonce() {
        let chain = pow_chain(&[1]);
        let max = chain.params.profile.max_hash();
        let mut last = u64::MAX;
        for d in [512u64, 128, 32, 8, 2, 1] {
            let job = MiningJob {
                target: pow_threshold(&from_u64(d), &max).unwrap(),
                ..MiningJob::next_block(&chain, acct("Q"), vec![], 0, 1 << 24).unwrap()
            };
            let nonce = mine(&job).unwrap().block().unwrap().nonce;
            assert!(nonce <= last);
            last = nonce;
        }
    }

    #[test]
    fn overdraft_job_is_rejected() {
        let mut chain = pow_chain(&[1]);
        let (a, b) = (KeyPair::from_seed_label("A"), KeyPair::from_seed_label("B"));
        extend(&mut chain, a.account(), vec![], 10).unwrap();
        let tx = Transaction::new([(a.account(), -5), (b.account(), 5)]).unwrap();
        let stx = SignedTransaction::sign(tx, &[&a]).unwrap();
        let job = MiningJob::next_block(&chain, b.account(), vec![stx], 0, 10).unwrap();
        assert!(matches!(mine(&job), Err(MinerError::IllegalJob(_))));
    }

    #[test]
    fn mean_attempts_at_d16_over_1000_jobs() {
        let s = attempts_distribution_check(HashProfile::default(), 1000, &from_u64(16), &from_u64(1)).unwrap();
        assert_eq!(s.exact_mean, 16.0);
        assert!(s.relative_error() < 0.10, "{s:?}");
    }
}
