//! Accounts, mass-0 transactions, blocks, balances and hash-linked chains.

mod codec;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::crypto::{Account, CryptoError, Digest, HashProfile, HashValue, KeyPair, Signature};
use crate::ratio::{self, Rational};

pub(crate) use codec::nonce_line as codec_nonce_line;
pub use codec::{decode_chain, decode_txs, encode_chain, encode_txs, DecodeError, CHAIN_MAGIC, TXS_MAGIC};
pub use validate::{validate_structure, Rule, ValidationReport, Violation};

/// Reward minted to the miner of every block.
pub const BLOCK_REWARD: i64 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("transaction needs at least two entries, got {0}")]
    TooFewEntries(usize),
    #[error("zero amount for account {0}")]
    ZeroAmount(Account),
    #[error("account {0} appears twice in one transaction")]
    DuplicateAccount(Account),
    #[error("transaction mass is {0}, expected 0")]
    NonzeroMass(i128),
    #[error("no key supplied for sender {0}")]
    MissingKey(Account),
    #[error("invalid chain parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// A finite map from accounts to nonzero amounts.
///
/// [`Transaction::new`] also enforces mass 0. Data read off the wire goes
/// through [`Transaction::with_any_mass`] so that chain validation can report
/// the violation instead of the decoder.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Transaction {
    entries: BTreeMap<Account, i64>,
}

impl Transaction {
    pub fn new(entries: impl IntoIterator<Item = (Account, i64)>) -> Result<Self, LedgerError> {
        let tx = Self::with_any_mass(entries)?;
        match tx.mass() {
            0 => Ok(tx),
            m => Err(LedgerError::NonzeroMass(m)),
        }
    }

    pub fn with_any_mass(entries: impl IntoIterator<Item = (Account, i64)>) -> Result<Self, LedgerError> {
        let mut map = BTreeMap::new();
        for (account, amount) in entries {
            if amount == 0 {
                return Err(LedgerError::ZeroAmount(account));
            }
            if map.insert(account, amount).is_some() {
                return Err(LedgerError::DuplicateAccount(account));
            }
        }
        if map.len() < 2 {
            return Err(LedgerError::TooFewEntries(map.len()));
        }
        Ok(Transaction { entries: map })
    }

    /// Entries in canonical (account byte) order.
    pub fn entries(&self) -> impl Iterator<Item = (&Account, i64)> {
        self.entries.iter().map(|(a, v)| (a, *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `tx(A)`; zero for accounts outside the domain.
    pub fn amount(&self, account: &Account) -> i64 {
        self.entries.get(account).copied().unwrap_or(0)
    }

    /// Accounts with a negative amount. These must sign.
    pub fn senders(&self) -> impl Iterator<Item = &Account> {
        self.entries.iter().filter(|(_, v)| **v < 0).map(|(a, _)| a)
    }

    pub fn mass(&self) -> i128 {
        tx_mass(self)
    }
}

pub fn tx_mass(tx: &Transaction) -> i128 {
    tx.entries.values().map(|v| i128::from(*v)).sum()
}

/// A transaction plus one signature per sender over its canonical bytes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SignedTransaction {
    pub tx: Transaction,
    pub signatures: BTreeMap<Account, Signature>,
}

impl SignedTransaction {
    /// Signs with whichever of `keys` belong to senders; every sender needs a key.
    pub fn sign(tx: Transaction, keys: &[&KeyPair]) -> Result<Self, LedgerError> {
        let message = tx.canonical_bytes();
        let mut signatures = BTreeMap::new();
        for sender in tx.senders() {
            let key = keys
                .iter()
                .find(|k| k.account() == *sender)
                .ok_or(LedgerError::MissingKey(*sender))?;
            signatures.insert(*sender, key.sign(&message));
        }
        Ok(SignedTransaction { tx, signatures })
    }

    /// Checks the signature domain equals the sender set and every signature verifies.
    pub fn check_signatures(&self) -> Result<(), String> {
        let message = self.tx.canonical_bytes();
        for sender in self.tx.senders() {
            match self.signatures.get(sender) {
                None => return Err(format!("missing signature from {}", sender.short())),
                Some(sig) if !crate::crypto::verify(sender, &message, sig) => {
                    return Err(format!("bad signature from {}", sender.short()))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.signatures.keys().find(|a| self.tx.amount(a) >= 0) {
            return Err(format!("signature from non-sender {}", extra.short()));
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    /// Digest of the previous block; all zero for genesis.
    pub prev_hash: Digest,
    pub miner: Account,
    pub txs: Vec<SignedTransaction>,
    pub nonce: u64,
}

impl Block {
    pub fn new(prev_hash: Digest, miner: Account, txs: Vec<SignedTransaction>, nonce: u64) -> Self {
        Block {
            prev_hash,
            miner,
            txs,
            nonce,
        }
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    pub fn hash_value(&self, profile: &HashProfile) -> HashValue {
        profile.value_of(&self.digest())
    }
}

pub fn block_reward(account: &Account, block: &Block) -> i64 {
    if *account == block.miner {
        BLOCK_REWARD
    } else {
        0
    }
}

pub fn balance_in_block(account: &Account, block: &Block) -> i128 {
    let txs: i128 = block.txs.iter().map(|s| i128::from(s.tx.amount(account))).sum();
    txs + i128::from(block_reward(account, block))
}

pub fn balance_in_chain(account: &Account, blocks: &[Block]) -> i128 {
    blocks.iter().map(|b| balance_in_block(account, b)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Plain proof of work: `hash <= M / D`.
    Pow,
    /// Proof of mining: `hash <= (M / D) * mstak(miner)`.
    Pom,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pow => "pow",
            Mode::Pom => "pom",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pow" => Ok(Mode::Pow),
            "pom" => Ok(Mode::Pom),
            other => Err(LedgerError::Params(format!("unknown mode `{other}`"))),
        }
    }
}

/// Protocol parameters shared by every block of a chain.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChainParams {
    pub mode: Mode,
    pub profile: HashProfile,
    period: u64,
    discrimination: Rational,
    difficulty: Vec<Rational>,
}

impl ChainParams {
    pub fn new(
        mode: Mode,
        profile: HashProfile,
        period: u64,
        discrimination: Rational,
        difficulty: Vec<Rational>,
    ) -> Result<Self, LedgerError> {
        if period == 0 {
            return Err(LedgerError::Params("period must be at least 1".into()));
        }
        if !ratio::in_unit_interval(&discrimination) {
            return Err(LedgerError::Params(format!(
                "discrimination index {} outside [0, 1]",
                ratio::format_rational(&discrimination)
            )));
        }
        if difficulty.is_empty() {
            return Err(LedgerError::Params("difficulty vector is empty".into()));
        }
        if let Some(d) = difficulty.iter().find(|d| !ratio::is_positive(d)) {
            return Err(LedgerError::Params(format!(
                "difficulty {} is not positive",
                ratio::format_rational(d)
            )));
        }
        Ok(ChainParams {
            mode,
            profile,
            period,
            discrimination,
            difficulty,
        })
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn discrimination(&self) -> &Rational {
        &self.discrimination
    }

    pub fn difficulty(&self) -> &[Rational] {
        &self.difficulty
    }

    pub fn window_of(&self, index: u64) -> u64 {
        index / self.period
    }

    /// `D_{floor(i / L)}`, if the vector reaches that far.
    pub fn difficulty_at(&self, index: u64) -> Option<&Rational> {
        usize::try_from(self.window_of(index))
            .ok()
            .and_then(|w| self.difficulty.get(w))
    }

    /// Number of blocks the difficulty vector covers.
    pub fn capacity(&self) -> u64 {
        self.difficulty.len() as u64 * self.period
    }

    pub fn push_difficulty(&mut self, d: Rational) -> Result<(), LedgerError> {
        if !ratio::is_positive(&d) {
            return Err(LedgerError::Params("difficulty must be positive".into()));
        }
        self.difficulty.push(d);
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Chain {
    pub params: ChainParams,
    pub blocks: Vec<Block>,
}

impl Chain {
    pub fn new(params: ChainParams) -> Self {
        Chain {
            params,
            blocks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// What the next block must carry as `prev_hash`.
    pub fn next_prev_hash(&self) -> Digest {
        self.tip().map(Block::digest).unwrap_or(Digest::ZERO)
    }

    /// A copy truncated to the first `len` blocks.
    pub fn prefix(&self, len: usize) -> Chain {
        Chain {
            params: self.params.clone(),
            blocks: self.blocks[..len.min(self.blocks.len())].to_vec(),
        }
    }
}
