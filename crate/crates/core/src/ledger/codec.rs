//! Canonical text encoding.
//!
//! The same bytes serve as hash/signature input and as the on-disk format.
//! Keys, digests and signatures are lowercase hex, amounts are decimal, one
//! field per line with a fixed keyword. A transaction:
//!
//! ```text
//! tx 2
//! <account> -5
//! <account> 5
//! ```
//!
//! Entries are sorted by account bytes. A block lists its fields in the
//! order prev, miner, txs, sigs, nonce; the nonce is the final line, so
//! miners can reuse the encoded prefix while scanning nonces:
//!
//! ```text
//! block
//! prev <digest>
//! miner <account>
//! txs <n>
//! <tx>...
//! sigs <m>
//! sig <tx-index> <account> <signature>
//! nonce <u64>
//! ```
//!
//! A chain file is a header with the parameters, the blocks, and a trailing
//! `checksum` line holding the SHA-256 of every byte before it. Decoding is
//! strict: the input must re-encode to exactly the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{Block, Chain, ChainParams, LedgerError, Mode, SignedTransaction, Transaction};
use crate::crypto::{Account, Digest, HashProfile, Signature};
use crate::ratio::{format_rational, parse_rational};

pub const CHAIN_MAGIC: &str = "pom-chain 1";
pub const TXS_MAGIC: &str = "pom-txs 1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: LedgerError },
    #[error("checksum mismatch")]
    Checksum,
    #[error("input is not in canonical form")]
    NonCanonical,
}

impl Transaction {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        write_tx(&mut out, self);
        out.into_bytes()
    }
}

impl SignedTransaction {
    /// Standalone encoding used in transaction files.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        write_signed_tx(&mut out, self);
        out.into_bytes()
    }
}

impl Block {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = self.mining_prefix();
        out.extend_from_slice(nonce_line(self.nonce).as_bytes());
        out
    }

    /// Everything before the nonce line.
    pub fn mining_prefix(&self) -> Vec<u8> {
        let mut out = String::new();
        write_block_prefix(&mut out, self);
        out.into_bytes()
    }
}

pub(crate) fn nonce_line(nonce: u64) -> String {
    format!("nonce {nonce}\n")
}

fn write_tx(out: &mut String, tx: &Transaction) {
    let _ = writeln!(out, "tx {}", tx.len());
    for (account, amount) in tx.entries() {
        let _ = writeln!(out, "{account} {amount}");
    }
}

fn write_signed_tx(out: &mut String, stx: &SignedTransaction) {
    write_tx(out, &stx.tx);
    let _ = writeln!(out, "sigs {}", stx.signatures.len());
    for (account, sig) in &stx.signatures {
        let _ = writeln!(out, "sig {account} {}", sig.to_hex());
    }
}

fn write_block_prefix(out: &mut String, block: &Block) {
    out.push_str("block\n");
    let _ = writeln!(out, "prev {}", block.prev_hash);
    let _ = writeln!(out, "miner {}", block.miner);
    let _ = writeln!(out, "txs {}", block.txs.len());
    for stx in &block.txs {
        write_tx(out, &stx.tx);
    }
    let total: usize = block.txs.iter().map(|s| s.signatures.len()).sum();
    let _ = writeln!(out, "sigs {total}");
    for (i, stx) in block.txs.iter().enumerate() {
        for (account, sig) in &stx.signatures {
            let _ = writeln!(out, "sig {i} {account} {}", sig.to_hex());
        }
    }
}

fn write_block(out: &mut String, block: &Block) {
    write_block_prefix(out, block);
    out.push_str(&nonce_line(block.nonce));
}

fn write_params(out: &mut String, params: &ChainParams) {
    let _ = writeln!(out, "mode {}", params.mode);
    let _ = writeln!(out, "profile {}", params.profile.bits());
    let _ = writeln!(out, "period {}", params.period());
    let _ = writeln!(out, "alpha {}", format_rational(params.discrimination()));
    let ds: Vec<String> = params.difficulty().iter().map(format_rational).collect();
    let _ = writeln!(out, "difficulty {}", ds.join(" "));
}

pub fn encode_chain(chain: &Chain) -> String {
    let mut out = String::new();
    out.push_str(CHAIN_MAGIC);
    out.push('\n');
    write_params(&mut out, &chain.params);
    let _ = writeln!(out, "blocks {}", chain.blocks.len());
    for block in &chain.blocks {
        write_block(&mut out, block);
    }
    let sum = Digest::of(out.as_bytes());
    let _ = writeln!(out, "checksum {sum}");
    out
}

pub fn encode_txs(txs: &[SignedTransaction]) -> String {
    let mut out = String::new();
    out.push_str(TXS_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "count {}", txs.len());
    for stx in txs {
        write_signed_tx(&mut out, stx);
    }
    out
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Result<Self, DecodeError> {
        let body = text.strip_suffix('\n').ok_or(DecodeError::Syntax {
            line: text.lines().count().max(1),
            message: "missing final newline".into(),
        })?;
        Ok(Lines {
            lines: body.split('\n').collect(),
            pos: 0,
        })
    }

    fn line_no(&self) -> usize {
        self.pos + 1
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, DecodeError> {
        Err(DecodeError::Syntax {
            line: self.line_no(),
            message: message.into(),
        })
    }

    fn invalid<T>(&self, source: impl Into<LedgerError>) -> Result<T, DecodeError> {
        Err(DecodeError::Invalid {
            line: self.line_no(),
            source: source.into(),
        })
    }

    fn next(&mut self) -> Result<&'a str, DecodeError> {
        match self.lines.get(self.pos) {
            Some(line) => {
                self.pos += 1;
                Ok(line)
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    /// Consumes `<keyword> <rest>` and returns `rest`.
    fn field(&mut self, keyword: &str) -> Result<&'a str, DecodeError> {
        let line = self.next()?;
        match line.strip_prefix(keyword).and_then(|r| r.strip_prefix(' ')) {
            Some(rest) => Ok(rest),
            None => {
                self.pos -= 1;
                self.err(format!("expected `{keyword} ...`"))
            }
        }
    }

    fn exact(&mut self, expected: &str) -> Result<(), DecodeError> {
        if self.next()? != expected {
            self.pos -= 1;
            return self.err(format!("expected `{expected}`"));
        }
        Ok(())
    }

    fn count(&mut self, keyword: &str) -> Result<usize, DecodeError> {
        let raw = self.field(keyword)?;
        match raw.parse::<usize>() {
            Ok(n) => Ok(n),
            Err(_) => {
                self.pos -= 1;
                self.err(format!("bad count `{raw}`"))
            }
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.lines.len()
    }
}

fn parse_hex<T: std::str::FromStr<Err = crate::crypto::CryptoError>>(
    lines: &Lines<'_>,
    s: &str,
) -> Result<T, DecodeError> {
    s.parse::<T>().map_err(|e| DecodeError::Invalid {
        line: lines.pos,
        source: e.into(),
    })
}

fn read_tx(lines: &mut Lines<'_>) -> Result<Transaction, DecodeError> {
    let n = lines.count("tx")?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next()?;
        let Some((acct, amount)) = line.split_once(' ') else {
            lines.pos -= 1;
            return lines.err("expected `<account> <amount>`");
        };
        let account: Account = parse_hex(lines, acct)?;
        let amount: i64 = match amount.parse() {
            Ok(v) => v,
            Err(_) => {
                lines.pos -= 1;
                return lines.err(format!("amount `{amount}` is not a 64-bit integer"));
            }
        };
        entries.push((account, amount));
    }
    Transaction::with_any_mass(entries).or_else(|e| lines.invalid(e))
}

fn read_signed_tx(lines: &mut Lines<'_>) -> Result<SignedTransaction, DecodeError> {
    let tx = read_tx(lines)?;
    let n = lines.count("sigs")?;
    let mut signatures = BTreeMap::new();
    for _ in 0..n {
        let rest = lines.field("sig")?;
        let Some((acct, sig)) = rest.split_once(' ') else {
            return lines.err("expected `sig <account> <signature>`");
        };
        let account: Account = parse_hex(lines, acct)?;
        let sig: Signature = parse_hex(lines, sig)?;
        if signatures.insert(account, sig).is_some() {
            return lines.err("duplicate signature");
        }
    }
    Ok(SignedTransaction { tx, signatures })
}

fn read_block(lines: &mut Lines<'_>) -> Result<Block, DecodeError> {
    lines.exact("block")?;
    let prev = lines.field("prev")?;
    let prev_hash: Digest = parse_hex(lines, prev)?;
    let miner = lines.field("miner")?;
    let miner: Account = parse_hex(lines, miner)?;
    let n = lines.count("txs")?;
    let mut txs = Vec::with_capacity(n);
    for _ in 0..n {
        txs.push(SignedTransaction {
            tx: read_tx(lines)?,
            signatures: BTreeMap::new(),
        });
    }
    let m = lines.count("sigs")?;
    for _ in 0..m {
        let rest = lines.field("sig")?;
        let parts: Vec<&str> = rest.split(' ').collect();
        let [index, acct, sig] = parts.as_slice() else {
            return lines.err("expected `sig <tx-index> <account> <signature>`");
        };
        let Some(stx) = index.parse::<usize>().ok().and_then(|i| txs.get_mut(i)) else {
            return lines.err(format!("signature refers to missing transaction `{index}`"));
        };
        let account: Account = parse_hex(lines, acct)?;
        let sig: Signature = parse_hex(lines, sig)?;
        if stx.signatures.insert(account, sig).is_some() {
            return lines.err("duplicate signature");
        }
    }
    let raw = lines.field("nonce")?;
    let Ok(nonce) = raw.parse::<u64>() else {
        return lines.err(format!("bad nonce `{raw}`"));
    };
    Ok(Block {
        prev_hash,
        miner,
        txs,
        nonce,
    })
}

fn read_params(lines: &mut Lines<'_>) -> Result<ChainParams, DecodeError> {
    let mode: Mode = match lines.field("mode")?.parse() {
        Ok(m) => m,
        Err(e) => return lines.invalid(e),
    };
    let raw = lines.field("profile")?;
    let profile = match raw.parse::<u32>() {
        Ok(bits) => HashProfile::test(bits).or_else(|e| lines.invalid(e))?,
        Err(_) => return lines.err(format!("bad profile width `{raw}`")),
    };
    let raw = lines.field("period")?;
    let Ok(period) = raw.parse::<u64>() else {
        return lines.err(format!("bad period `{raw}`"));
    };
    let raw = lines.field("alpha")?;
    let Ok(alpha) = parse_rational(raw) else {
        return lines.err(format!("bad discrimination index `{raw}`"));
    };
    let raw = lines.field("difficulty")?;
    let mut difficulty = Vec::new();
    for d in raw.split(' ') {
        match parse_rational(d) {
            Ok(v) => difficulty.push(v),
            Err(_) => return lines.err(format!("bad difficulty `{d}`")),
        }
    }
    ChainParams::new(mode, profile, period, alpha, difficulty).or_else(|e| lines.invalid(e))
}

pub fn decode_chain(text: &str) -> Result<Chain, DecodeError> {
    let mut lines = Lines::new(text)?;
    lines.exact(CHAIN_MAGIC)?;
    let params = read_params(&mut lines)?;
    let n = lines.count("blocks")?;
    let mut blocks = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        blocks.push(read_block(&mut lines)?);
    }
    let sum_line = lines.pos;
    let recorded = lines.field("checksum")?;
    if !lines.at_end() {
        return lines.err("trailing data after checksum");
    }
    let covered: usize = lines.lines[..sum_line].iter().map(|l| l.len() + 1).sum();
    let expected = Digest::of(&text.as_bytes()[..covered]);
    if recorded != expected.to_hex() {
        return Err(DecodeError::Checksum);
    }
    let chain = Chain { params, blocks };
    if encode_chain(&chain) != text {
        return Err(DecodeError::NonCanonical);
    }
    Ok(chain)
}

pub fn decode_txs(text: &str) -> Result<Vec<SignedTransaction>, DecodeError> {
    let mut lines = Lines::new(text)?;
    lines.exact(TXS_MAGIC)?;
    let n = lines.count("count")?;
    let mut txs = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        txs.push(read_signed_tx(&mut lines)?);
    }
    if let Some(extra) = lines.peek() {
        return lines.err(format!("unexpected `{extra}`"));
    }
    if encode_txs(&txs) != text {
        return Err(DecodeError::NonCanonical);
    }
    Ok(txs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::ratio;
    use proptest::prelude::*;

    fn kp(l: &str) -> KeyPair {
        KeyPair::from_seed_label(l)
    }

    fn sample_chain() -> Chain {
        let params = ChainParams::new(
            Mode::Pom,
            HashProfile::default(),
            2,
            ratio::ratio(1, 2),
            vec![ratio::from_u64(1), ratio::ratio(3, 2)],
        )
        .unwrap();
        let (a, b) = (kp("A"), kp("B"));
        let mut chain = Chain::new(params);
        chain.blocks.push(Block::new(Digest::ZERO, a.account(), vec![], 7));
        let tx = Transaction::new([(a.account(), -1), (b.account(), 1)]).unwrap();
        let stx = SignedTransaction::sign(tx, &[&a]).unwrap();
        let prev = chain.next_prev_hash();
        chain.blocks.push(Block::new(prev, b.account(), vec![stx], 3));
        chain
    }

    #[test]
    fn tx_bytes_ignore_insertion_order() {
        let (a, b, c) = (kp("A").account(), kp("B").account(), kp("C").account());
        let t1 = Transaction::new([(a, -5), (b, 3), (c, 2)]).unwrap();
        let t2 = Transaction::new([(c, 2), (a, -5), (b, 3)]).unwrap();
        assert_eq!(t1.canonical_bytes(), t2.canonical_bytes());
        assert_eq!(t1.canonical_bytes(), t1.canonical_bytes());
    }

    #[test]
    fn nonce_changes_bytes_and_prefix_matches() {
        let chain = sample_chain();
        let mut b = chain.blocks[1].clone();
        let before = b.canonical_bytes();
        b.nonce += 1;
        assert_ne!(before, b.canonical_bytes());
        let mut rebuilt = b.mining_prefix();
        rebuilt.extend_from_slice(nonce_line(b.nonce).as_bytes());
        assert_eq!(rebuilt, b.canonical_bytes());
    }

    #[test]
    fn chain_file_round_trip() {
        let chain = sample_chain();
        let text = encode_chain(&chain);
        assert!(
            text.starts_with("pom-chain 1\nmode pom\nprofile 16\nperiod 2\nalpha 1/2\ndifficulty 1 3/2\nblocks 2\n")
        );
        assert_eq!(decode_chain(&text).unwrap(), chain);
    }

    #[test]
    fn decode_rejects_tampering() {
        let text = encode_chain(&sample_chain());
        let tampered = text.replacen("nonce 7", "nonce 8", 1);
        assert_eq!(decode_chain(&tampered).unwrap_err(), DecodeError::Checksum);

        // Re-checksummed but non-canonical (leading zero).
        let body = text[..text.rfind("checksum").unwrap()].replacen("nonce 7", "nonce 07", 1);
        let resummed = format!("{body}checksum {}\n", Digest::of(body.as_bytes()));
        assert_eq!(decode_chain(&resummed).unwrap_err(), DecodeError::NonCanonical);

        assert!(matches!(
            decode_chain("garbage\n").unwrap_err(),
            DecodeError::Syntax { line: 1, .. }
        ));
        assert!(decode_chain(text.trim_end()).is_err());
    }

    #[test]
    fn amount_overflow_is_rejected() {
        let (a, b) = (kp("A").account(), kp("B").account());
        let text = format!("{TXS_MAGIC}\ncount 1\ntx 2\n{a} -99999999999999999999\n{b} 5\nsigs 0\n");
        assert!(matches!(decode_txs(&text), Err(DecodeError::Syntax { .. })));
    }

    #[test]
    fn txs_file_round_trip() {
        let chain = sample_chain();
        let txs = chain.blocks[1].txs.clone();
        let text = encode_txs(&txs);
        assert_eq!(decode_txs(&text).unwrap(), txs);
    }

    fn arb_tx() -> impl Strategy<Value = Transaction> {
        prop::collection::btree_map(0u8..12, 1i64..1_000_000, 1..5).prop_map(|m| {
            let mut entries: Vec<(Account, i64)> = m
                .into_iter()
                .map(|(k, v)| (kp(&format!("p{k}")).account(), v))
                .collect();
            let total: i64 = entries.iter().map(|(_, v)| v).sum();
            entries.push((kp("sink").account(), -total));
            Transaction::new(entries).unwrap()
        })
    }

    fn arb_chain() -> impl Strategy<Value = Chain> {
        let block = (
            0u8..4,
            prop::collection::vec(arb_tx(), 0..3),
            any::<u64>(),
            any::<[u8; 32]>(),
        );
        (
            prop::collection::vec(block, 0..5),
            1u64..6,
            0u64..=8,
            prop::collection::vec(1u64..50, 1..4),
        )
            .prop_map(|(blocks, period, alpha8, ds)| {
                let params = ChainParams::new(
                    Mode::Pom,
                    HashProfile::default(),
                    period,
                    ratio::ratio(alpha8, 8),
                    ds.into_iter().map(|d| ratio::ratio(d, 3)).collect(),
                )
                .unwrap();
                let blocks = blocks
                    .into_iter()
                    .map(|(m, txs, nonce, prev)| {
                        let txs = txs
                            .into_iter()
                            .map(|tx| SignedTransaction {
                                signatures: tx.senders().map(|s| (*s, Signature([nonce as u8; 64]))).collect(),
                                tx,
                            })
                            .collect();
                        Block::new(Digest(prev), kp(&format!("m{m}")).account(), txs, nonce)
                    })
                    .collect();
                Chain { params, blocks }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn decode_inverts_encode(chain in arb_chain()) {
            let text = encode_chain(&chain);
            prop_assert_eq!(decode_chain(&text).unwrap(), chain);
        }

        #[test]
        fn single_byte_mutation_never_decodes_to_same_chain(chain in arb_chain(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
            let mut bytes = encode_chain(&chain).into_bytes();
            let i = pos.index(bytes.len());
            bytes[i] ^= flip;
            if let Ok(text) = String::from_utf8(bytes) {
                prop_assert!(decode_chain(&text).map(|c| c != chain).unwrap_or(true));
            }
        }
    }
}
