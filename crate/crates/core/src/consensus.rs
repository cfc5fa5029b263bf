//! Validity and fork-choice rules.
//!
//! Blocks are grouped into windows of `L` consecutive blocks. A complete
//! window yields [`WindowStats`]: how many blocks each account mined (NOBM)
//! and how many distinct accounts mined at least one (NOM). The mining
//! stake of an account for window `n` is computed from window `n - 1`:
//!
//! ```text
//! mstak(A) = (1 - a) / NOM + a * NOBM(A) / L
//! ```
//!
//! and a block mined by `A` in window `n` is valid when
//! `hash <= (M / D_n) * mstak(A)`. Blocks of window 0 have no previous
//! window and are checked with stake 1, i.e. as plain proof of work.
//!
//! All thresholds are exact rationals; a threshold of zero admits nothing,
//! not even the zero hash.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::crypto::{Account, HashValue};
use crate::ledger::{validate_structure, Block, Chain, ChainParams, Mode, Rule, ValidationReport};
use crate::ratio::{self, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("window {window} starts at block {start} but the chain has {len} blocks")]
    WindowOutOfRange { window: u64, start: u64, len: usize },
    #[error("window {window} has {have} of {need} blocks")]
    IncompleteWindow { window: u64, have: usize, need: u64 },
    #[error("stake is undefined for a window without miners")]
    NoMiners,
    #[error("difficulty must be positive")]
    NonPositiveDifficulty,
    #[error("stake {0} outside [0, 1]")]
    StakeOutOfRange(String),
    #[error("discrimination index outside [0, 1]")]
    DiscriminationOutOfRange,
    #[error("segment {k}..={m} is outside a chain of {len} blocks")]
    SegmentRange { k: usize, m: usize, len: usize },
    #[error("difficulty vector does not cover block {0}")]
    DifficultyExhausted(u64),
    #[error("no candidate chains")]
    NoCandidates,
}

/// `C_{L,n}`: blocks `nL ..= min(nL + L - 1, last)`.
pub fn window(chain: &Chain, n: u64) -> Result<&[Block], ConsensusError> {
    let period = chain.params.period();
    let out_of_range = || ConsensusError::WindowOutOfRange {
        window: n,
        start: n.saturating_mul(period),
        len: chain.len(),
    };
    let start = n.checked_mul(period).ok_or_else(out_of_range)?;
    let start = usize::try_from(start).map_err(|_| out_of_range())?;
    if start >= chain.len() {
        return Err(out_of_range());
    }
    let end = (start as u64 + period).min(chain.len() as u64) as usize;
    Ok(&chain.blocks[start..end])
}

/// Per-window mining counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowStats {
    pub window_index: u64,
    nobm: BTreeMap<Account, u64>,
    blocks: u64,
}

impl WindowStats {
    /// Builds stats from the miner of each block in window order.
    pub fn from_miners<'a>(window_index: u64, miners: impl IntoIterator<Item = &'a Account>) -> Self {
        let mut nobm = BTreeMap::new();
        let mut blocks = 0;
        for m in miners {
            *nobm.entry(*m).or_insert(0) += 1;
            blocks += 1;
        }
        WindowStats {
            window_index,
            nobm,
            blocks,
        }
    }

    /// Builds stats from per-account counts; zero counts are dropped.
    pub fn from_counts(window_index: u64, counts: impl IntoIterator<Item = (Account, u64)>) -> Self {
        let nobm: BTreeMap<Account, u64> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        let blocks = nobm.values().sum();
        WindowStats {
            window_index,
            nobm,
            blocks,
        }
    }

    pub fn nobm(&self, account: &Account) -> u64 {
        self.nobm.get(account).copied().unwrap_or(0)
    }

    /// Accounts that mined at least one block, with their counts.
    pub fn miners(&self) -> impl Iterator<Item = (&Account, u64)> {
        self.nobm.iter().map(|(a, c)| (a, *c))
    }

    pub fn nom(&self) -> u64 {
        self.nobm.len() as u64
    }

    /// Number of blocks in the window, i.e. the sum of all NOBM values.
    pub fn blocks(&self) -> u64 {
        self.blocks
    }
}

/// NOBM and NOM of a complete window.
pub fn window_stats(chain: &Chain, n: u64) -> Result<WindowStats, ConsensusError> {
    let blocks = window(chain, n)?;
    let need = chain.params.period();
    if blocks.len() as u64 != need {
        return Err(ConsensusError::IncompleteWindow {
            window: n,
            have: blocks.len(),
            need,
        });
    }
    Ok(WindowStats::from_miners(n, blocks.iter().map(|b| &b.miner)))
}

/// A single account's mining stake, always in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct StakeValue(Rational);

impl StakeValue {
    pub fn new(value: Rational) -> Result<Self, ConsensusError> {
        if !ratio::in_unit_interval(&value) {
            return Err(ConsensusError::StakeOutOfRange(ratio::format_rational(&value)));
        }
        Ok(StakeValue(value))
    }

    pub fn one() -> Self {
        StakeValue(Rational::one())
    }

    pub fn value(&self) -> &Rational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        ratio::to_f64(&self.0)
    }
}

/// `(1 - a) * members / nom + a * blocks / period`, the stake of a set of
/// `members` accounts that together mined `blocks` blocks of the window.
pub fn stake_from_counts(members: u64, blocks: u64, nom: u64, a: &Rational, period: u64) -> Rational {
    let base = (Rational::one() - a) * ratio::ratio(members, nom);
    let share = a * ratio::ratio(blocks, period);
    base + share
}

fn check_stake_inputs(stats: &WindowStats, a: &Rational, period: u64) -> Result<(), ConsensusError> {
    if stats.nom() == 0 || period == 0 {
        return Err(ConsensusError::NoMiners);
    }
    if !ratio::in_unit_interval(a) {
        return Err(ConsensusError::DiscriminationOutOfRange);
    }
    Ok(())
}

/// `mstak(A, C_{L,n}, a)`. Accounts that did not mine in the window still
/// receive the `(1 - a) / NOM` term.
pub fn mstak(account: &Account, stats: &WindowStats, a: &Rational, period: u64) -> Result<StakeValue, ConsensusError> {
    check_stake_inputs(stats, a, period)?;
    StakeValue::new(stake_from_counts(1, stats.nobm(account), stats.nom(), a, period))
}

/// Sum of member stakes. May exceed 1 when the set includes non-miners.
pub fn set_mstak<'a>(
    accounts: impl IntoIterator<Item = &'a Account>,
    stats: &WindowStats,
    a: &Rational,
    period: u64,
) -> Result<Rational, ConsensusError> {
    check_stake_inputs(stats, a, period)?;
    let members: BTreeSet<&Account> = accounts.into_iter().collect();
    let mut total = Rational::zero();
    for account in members {
        total += mstak(account, stats, a, period)?.0;
    }
    Ok(total)
}

/// Right-hand side of the majority condition
/// `NOBM(S) / L > ((1 - a) / a) * (1 / (2(1 - a)) - |S| / NOM)`,
/// expanded to `1 / (2a) - ((1 - a) / a) * |S| / NOM` so it stays defined at `a = 1`.
///
/// # Panics
/// If `a` is zero or `nom` is zero.
pub fn majority_bound(a: &Rational, members: u64, nom: u64) -> Rational {
    assert!(a.is_positive() && nom > 0);
    let half_over_a = Rational::one() / (ratio::from_u64(2) * a);
    half_over_a - (Rational::one() - a) / a * ratio::ratio(members, nom)
}

/// `|S| / NOM` needed for a guaranteed majority: `1 / (2(1 - a))`. `None` at `a = 1`.
pub fn sybil_ratio_threshold(a: &Rational) -> Option<Rational> {
    let rest = Rational::one() - a;
    if rest.is_zero() {
        None
    } else {
        Some(Rational::one() / (ratio::from_u64(2) * rest))
    }
}

/// A target value `t`; a hash `h` meets it iff `t > 0` and `h <= t`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Threshold(Rational);

impl Threshold {
    pub fn value(&self) -> &Rational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        ratio::to_f64(&self.0)
    }

    /// Largest admissible hash, or `None` when nothing is admissible.
    pub fn bound(&self) -> Option<BigUint> {
        if !self.0.is_positive() {
            return None;
        }
        self.0.floor().to_integer().to_biguint()
    }

    pub fn admits(&self, hash: &HashValue) -> bool {
        self.0.is_positive() && ratio::from_biguint(hash.value()) <= self.0
    }
}

/// `M / D`.
pub fn pow_threshold(difficulty: &Rational, max_hash: &BigUint) -> Result<Threshold, ConsensusError> {
    if !difficulty.is_positive() {
        return Err(ConsensusError::NonPositiveDifficulty);
    }
    Ok(Threshold(ratio::from_biguint(max_hash) / difficulty))
}

/// `(M / D) * stake`.
pub fn pom_threshold(difficulty: &Rational, stake: &Rational, max_hash: &BigUint) -> Result<Threshold, ConsensusError> {
    if !ratio::in_unit_interval(stake) {
        return Err(ConsensusError::StakeOutOfRange(ratio::format_rational(stake)));
    }
    let base = pow_threshold(difficulty, max_hash)?;
    Ok(Threshold(base.0 * stake))
}

/// Stake used to price block `index` of `chain` when mined by `miner`.
///
/// Only blocks before `index` are consulted, so this also prices the next
/// block to be appended (`index == chain.len()`).
pub fn block_stake(chain: &Chain, index: u64, miner: &Account) -> Result<StakeValue, ConsensusError> {
    let params = &chain.params;
    let w = params.window_of(index);
    if params.mode == Mode::Pow || w == 0 {
        return Ok(StakeValue::one());
    }
    let stats = window_stats(chain, w - 1)?;
    mstak(miner, &stats, params.discrimination(), params.period())
}

/// Threshold that block `index` mined by `miner` has to meet.
pub fn block_target(chain: &Chain, index: u64, miner: &Account) -> Result<Threshold, ConsensusError> {
    let params = &chain.params;
    let d = params
        .difficulty_at(index)
        .ok_or(ConsensusError::DifficultyExhausted(index))?;
    let stake = block_stake(chain, index, miner)?;
    pom_threshold(d, stake.value(), &params.profile.max_hash())
}

/// Difficulty coverage and the PoW/PoM hash threshold for every block.
pub fn validate_consensus(chain: &Chain) -> ValidationReport {
    let mut report = ValidationReport::default();
    let params = &chain.params;
    let max_hash = params.profile.max_hash();
    let mut stats_cache: BTreeMap<u64, WindowStats> = BTreeMap::new();

    for (i, block) in chain.blocks.iter().enumerate() {
        let index = i as u64;
        let Some(d) = params.difficulty_at(index) else {
            report.push(
                i,
                Rule::DifficultyCoverage,
                format!("no difficulty for window {}", params.window_of(index)),
            );
            continue;
        };
        let w = params.window_of(index);
        let stake = if params.mode == Mode::Pow || w == 0 {
            StakeValue::one()
        } else {
            let stats = stats_cache
                .entry(w - 1)
                .or_insert_with(|| window_stats(chain, w - 1).expect("earlier window is complete"));
            match mstak(&block.miner, stats, params.discrimination(), params.period()) {
                Ok(s) => s,
                Err(e) => {
                    report.push(i, Rule::Threshold, e.to_string());
                    continue;
                }
            }
        };
        let target = pom_threshold(d, stake.value(), &max_hash).expect("validated parameters");
        let hash = block.hash_value(&params.profile);
        if !target.admits(&hash) {
            report.push(
                i,
                Rule::Threshold,
                format!(
                    "hash {hash} above target {:.3} (D {}, stake {})",
                    target.to_f64(),
                    ratio::format_rational(d),
                    ratio::format_rational(stake.value())
                ),
            );
        }
    }
    report
}

/// Structural and consensus validation together.
pub fn validate(chain: &Chain) -> ValidationReport {
    validate_structure(chain).merge(validate_consensus(chain))
}

/// `sum_{i=k}^{m} D_{floor(i / L)}` over the parameters' difficulty vector.
pub fn params_segment_difficulty(params: &ChainParams, k: u64, m: u64) -> Result<Rational, ConsensusError> {
    let period = params.period();
    let mut total = Rational::zero();
    let mut i = k;
    while i <= m {
        let w = params.window_of(i);
        let d = params.difficulty_at(i).ok_or(ConsensusError::DifficultyExhausted(i))?;
        let window_end = (w + 1) * period - 1;
        let last = window_end.min(m);
        total += d * ratio::from_u64(last - i + 1);
        i = last + 1;
    }
    Ok(total)
}

pub fn segment_difficulty(chain: &Chain, k: usize, m: usize) -> Result<Rational, ConsensusError> {
    if k > m || m >= chain.len() {
        return Err(ConsensusError::SegmentRange { k, m, len: chain.len() });
    }
    params_segment_difficulty(&chain.params, k as u64, m as u64)
}

/// Segment difficulty of the whole chain; zero when empty.
pub fn total_difficulty(chain: &Chain) -> Result<Rational, ConsensusError> {
    if chain.is_empty() {
        return Ok(Rational::zero());
    }
    segment_difficulty(chain, 0, chain.len() - 1)
}

fn tip_key(chain: &Chain) -> Option<(HashValue, Vec<u8>)> {
    chain
        .tip()
        .map(|b| (b.hash_value(&chain.params.profile), b.canonical_bytes()))
}

/// Fork-choice order: `Greater` means `a` is preferred.
///
/// Heavier total difficulty wins; ties go to the smaller tip hash value,
/// then to the lexicographically smaller tip encoding.
pub fn compare_chains(a: &Chain, b: &Chain) -> Ordering {
    let weight = |c: &Chain| total_difficulty(c).unwrap_or_else(|_| Rational::zero());
    weight(a).cmp(&weight(b)).then_with(|| tip_key(b).cmp(&tip_key(a)))
}

pub fn fork_choice(candidates: &[Chain]) -> Result<&Chain, ConsensusError> {
    candidates
        .iter()
        .reduce(|best, c| {
            if compare_chains(c, best) == Ordering::Greater {
                c
            } else {
                best
            }
        })
        .ok_or(ConsensusError::NoCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Digest, HashProfile, KeyPair};
    use crate::ratio::{from_u64, ratio};

    fn acct(l: &str) -> Account {
        KeyPair::from_seed_label(l).account()
    }

    fn params(mode: Mode, period: u64, a: Rational, ds: &[u64]) -> ChainParams {
        ChainParams::new(
            mode,
            HashProfile::default(),
            period,
            a,
            ds.iter().map(|d| from_u64(*d)).collect(),
        )
        .unwrap()
    }

    /// Chain with the given miners and unchecked hashes.
    fn chain_of(p: ChainParams, miners: &[&str]) -> Chain {
        let mut c = Chain::new(p);
        for m in miners {
            let prev = c.next_prev_hash();
            c.blocks.push(Block::new(prev, acct(m), vec![], 0));
        }
        c
    }

    #[test]
    fn window_slices() {
        let c = chain_of(params(Mode::Pow, 4, ratio(1, 2), &[1, 1, 1]), &["A"; 10]);
        assert_eq!(window(&c, 1).unwrap(), &c.blocks[4..8]);
        assert_eq!(window(&c, 0).unwrap(), &c.blocks[0..4]);
        assert_eq!(window(&c, 2).unwrap(), &c.blocks[8..10]);
        assert!(matches!(window(&c, 3), Err(ConsensusError::WindowOutOfRange { .. })));
    }

    #[test]
    fn window_stats_examples() {
        let c = chain_of(params(Mode::Pom, 4, ratio(1, 2), &[1]), &["A", "A", "B", "C"]);
        let s = window_stats(&c, 0).unwrap();
        assert_eq!((s.nobm(&acct("A")), s.nobm(&acct("B")), s.nobm(&acct("C"))), (2, 1, 1));
        assert_eq!(s.nom(), 3);

        let mono = chain_of(params(Mode::Pom, 4, ratio(1, 2), &[1]), &["A"; 4]);
        let s = window_stats(&mono, 0).unwrap();
        assert_eq!((s.nobm(&acct("A")), s.nom()), (4, 1));

        let uni = chain_of(params(Mode::Pom, 4, ratio(1, 2), &[1]), &["A", "B", "C", "D"]);
        let s = window_stats(&uni, 0).unwrap();
        assert_eq!(s.nom(), 4);
        assert!(s.miners().all(|(_, n)| n == 1));

        let partial = chain_of(params(Mode::Pom, 4, ratio(1, 2), &[1]), &["A"; 3]);
        assert!(matches!(
            window_stats(&partial, 0),
            Err(ConsensusError::IncompleteWindow { have: 3, need: 4, .. })
        ));
    }

    fn stats(counts: &[(&str, u64)]) -> WindowStats {
        WindowStats::from_counts(0, counts.iter().map(|(l, c)| (acct(l), *c)))
    }

    #[test]
    fn mstak_examples() {
        let s = stats(&[("A", 3), ("B", 3), ("C", 2), ("D", 2)]);
        assert_eq!(mstak(&acct("A"), &s, &ratio(0, 1), 10).unwrap().value(), &ratio(1, 4));
        assert_eq!(mstak(&acct("A"), &s, &ratio(1, 1), 10).unwrap().value(), &ratio(3, 10));
        assert_eq!(
            mstak(&acct("A"), &s, &ratio(1, 2), 10).unwrap().value(),
            &ratio(275, 1000)
        );
        // Non-miners keep the base term.
        assert_eq!(mstak(&acct("Z"), &s, &ratio(1, 2), 10).unwrap().value(), &ratio(1, 8));
        let empty = WindowStats::from_counts(0, []);
        assert_eq!(
            mstak(&acct("A"), &empty, &ratio(1, 2), 10),
            Err(ConsensusError::NoMiners)
        );
    }

    #[test]
    fn set_mstak_examples() {
        let s = stats(&[("A", 3), ("B", 3), ("C", 2), ("D", 2)]);
        let all = [acct("A"), acct("B"), acct("C"), acct("D")];
        assert_eq!(set_mstak(&all, &s, &ratio(3, 7), 10).unwrap(), Rational::one());
        assert_eq!(set_mstak(&[], &s, &ratio(3, 7), 10).unwrap(), Rational::zero());

        let labels: Vec<String> = (0..10).map(|i| format!("m{i}")).collect();
        let sizes = [15, 15, 8, 8, 8, 8, 8, 8, 8, 14];
        let counts: Vec<(&str, u64)> = labels.iter().map(String::as_str).zip(sizes).collect();
        let s = stats(&counts);
        assert_eq!(s.blocks(), 100);
        let pair = [acct("m0"), acct("m1")];
        assert_eq!(set_mstak(&pair, &s, &ratio(1, 2), 100).unwrap(), ratio(1, 4));
    }

    #[test]
    fn thresholds() {
        let m = HashProfile::default().max_hash();
        assert_eq!(pow_threshold(&from_u64(1), &m).unwrap().bound(), Some(m.clone()));
        let at_m = pow_threshold(&ratio::from_biguint(&m), &m).unwrap();
        assert_eq!(at_m.value(), &Rational::one());
        assert_eq!(
            pom_threshold(&from_u64(100), &ratio(1, 4), &m).unwrap().value(),
            &(ratio::from_biguint(&m) / from_u64(400))
        );
        assert_eq!(
            pom_threshold(&from_u64(7), &Rational::one(), &m).unwrap(),
            pow_threshold(&from_u64(7), &m).unwrap()
        );
        let zero = pom_threshold(&from_u64(1), &Rational::zero(), &m).unwrap();
        assert_eq!(zero.bound(), None);
        let zero_hash = HashProfile::default().value_of(&Digest::ZERO);
        assert!(!zero.admits(&zero_hash));
        assert!(pom_threshold(&from_u64(1), &ratio(3, 2), &m).is_err());
        assert!(pow_threshold(&from_u64(0), &m).is_err());
    }

    #[test]
    fn pow_threshold_half_passes_half_the_hashes() {
        let p = HashProfile::default();
        let t = pow_threshold(&from_u64(2), &p.max_hash()).unwrap();
        let n = 20_000u32;
        let pass = (0..n).filter(|i| t.admits(&p.hash(&i.to_le_bytes()))).count();
        let frac = pass as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.015, "{frac}");
    }

    #[test]
    fn segment_difficulty_examples() {
        let c = chain_of(params(Mode::Pow, 2, ratio(1, 2), &[1, 3]), &["A"; 4]);
        assert_eq!(segment_difficulty(&c, 0, 3).unwrap(), from_u64(8));
        assert_eq!(segment_difficulty(&c, 2, 2).unwrap(), from_u64(3));
        assert_eq!(segment_difficulty(&c, 0, 1).unwrap(), from_u64(2));
        assert!(segment_difficulty(&c, 2, 4).is_err());
        assert!(segment_difficulty(&c, 3, 2).is_err());
    }

    #[test]
    fn fork_choice_examples() {
        let p = params(Mode::Pow, 100, ratio(1, 2), &[1]);
        let ten = chain_of(p.clone(), &["A"; 10]);
        let twelve = chain_of(p.clone(), &["B"; 12]);
        assert_eq!(fork_choice(std::slice::from_ref(&ten)).unwrap(), &ten);
        assert_eq!(fork_choice(&[ten.clone(), twelve.clone()]).unwrap(), &twelve);
        assert_eq!(fork_choice(&[twelve.clone(), ten.clone()]).unwrap(), &twelve);
        assert_eq!(fork_choice(&[]), Err(ConsensusError::NoCandidates));

        let x = chain_of(p.clone(), &["A", "B"]);
        let y = chain_of(p, &["A", "C"]);
        let hx = x.tip().unwrap().hash_value(&x.params.profile);
        let hy = y.tip().unwrap().hash_value(&y.params.profile);
        let expected = if hx < hy || (hx == hy && x.blocks[1].canonical_bytes() < y.blocks[1].canonical_bytes()) {
            &x
        } else {
            &y
        };
        assert_eq!(fork_choice(&[x.clone(), y.clone()]).unwrap(), expected);
        assert_eq!(fork_choice(&[y.clone(), x.clone()]).unwrap(), expected);
    }

    #[test]
    fn majority_bound_matches_raw_form_below_one() {
        for j in 1..20u64 {
            let a = ratio(j, 20);
            for nom in 1..6u64 {
                for s in 0..=nom {
                    let raw = (Rational::one() - &a) / &a * (sybil_ratio_threshold(&a).unwrap() - ratio(s, nom));
                    assert_eq!(majority_bound(&a, s, nom), raw);
                }
            }
        }
        assert_eq!(sybil_ratio_threshold(&Rational::one()), None);
        assert_eq!(sybil_ratio_threshold(&ratio(1, 5)).unwrap(), ratio(5, 8));
    }
}
