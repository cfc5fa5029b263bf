use std::collections::BTreeMap;
use std::fmt;

use super::{block_reward, Chain};
use crate::crypto::{Account, Digest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    HashLink,
    Signature,
    Mass,
    NonnegativeBalance,
    DifficultyCoverage,
    Threshold,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::HashLink => "hash-link",
            Rule::Signature => "signature",
            Rule::Mass => "mass",
            Rule::NonnegativeBalance => "nonnegative-balance",
            Rule::DifficultyCoverage => "difficulty-coverage",
            Rule::Threshold => "threshold",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}", self.index, self.rule, self.detail)
    }
}

/// Violations in block order. Empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }

    pub(crate) fn push(&mut self, index: usize, rule: Rule, detail: impl Into<String>) {
        self.violations.push(Violation {
            index,
            rule,
            detail: detail.into(),
        });
    }

    /// Combines two reports, keeping block order stable.
    pub fn merge(mut self, other: ValidationReport) -> Self {
        self.violations.extend(other.violations);
        self.violations.sort_by_key(|v| v.index);
        self
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Hash links, signatures, mass 0 and nonnegative balances.
///
/// Balances are checked on every prefix at transaction granularity: the
/// block reward is credited first, then transactions apply in block order
/// and every sender must stay nonnegative after each one. Transactions that
/// fail the signature or mass rule do not move balances.
pub fn validate_structure(chain: &Chain) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut balances: BTreeMap<Account, i128> = BTreeMap::new();
    let mut prev_digest: Option<Digest> = None;

    for (index, block) in chain.blocks.iter().enumerate() {
        if let Some(expected) = prev_digest {
            if block.prev_hash != expected {
                report.push(
                    index,
                    Rule::HashLink,
                    format!("prev {} does not match {}", block.prev_hash, expected),
                );
            }
        }
        prev_digest = Some(block.digest());

        *balances.entry(block.miner).or_default() += i128::from(block_reward(&block.miner, block));

        for (t, stx) in block.txs.iter().enumerate() {
            let mass = stx.tx.mass();
            if mass != 0 {
                report.push(index, Rule::Mass, format!("tx {t} has mass {mass}"));
                continue;
            }
            if let Err(e) = stx.check_signatures() {
                report.push(index, Rule::Signature, format!("tx {t}: {e}"));
                continue;
            }
            for (account, amount) in stx.tx.entries() {
                *balances.entry(*account).or_default() += i128::from(amount);
            }
            for sender in stx.tx.senders() {
                let bal = balances[sender];
                if bal < 0 {
                    report.push(
                        index,
                        Rule::NonnegativeBalance,
                        format!("tx {t} leaves {} at {bal}", sender.short()),
                    );
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{HashProfile, KeyPair};
    use crate::ledger::{Block, ChainParams, Mode, SignedTransaction, Transaction};
    use crate::ratio;

    fn params() -> ChainParams {
        ChainParams::new(
            Mode::Pow,
            HashProfile::default(),
            4,
            ratio::ratio(1, 2),
            vec![ratio::from_u64(1)],
        )
        .unwrap()
    }

    fn push(chain: &mut Chain, miner: &KeyPair, txs: Vec<SignedTransaction>) {
        let prev = chain.next_prev_hash();
        chain.blocks.push(Block::new(prev, miner.account(), txs, 0));
    }

    fn pay(from: &KeyPair, to: &KeyPair, amount: i64) -> SignedTransaction {
        let tx = Transaction::new([(from.account(), -amount), (to.account(), amount)]).unwrap();
        SignedTransaction::sign(tx, &[from]).unwrap()
    }

    #[test]
    fn well_formed_chain_is_accepted() {
        let (a, b) = (KeyPair::from_seed_label("A"), KeyPair::from_seed_label("B"));
        let mut chain = Chain::new(params());
        push(&mut chain, &a, vec![]);
        push(&mut chain, &b, vec![pay(&a, &b, 1)]);
        push(&mut chain, &a, vec![pay(&b, &a, 2)]);
        let report = validate_structure(&chain);
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn corrupted_link_is_pinpointed() {
        let a = KeyPair::from_seed_label("A");
        let mut chain = Chain::new(params());
        for _ in 0..3 {
            push(&mut chain, &a, vec![]);
        }
        chain.blocks[2].prev_hash.0[0] ^= 1;
        let report = validate_structure(&chain);
        let first = report.first().unwrap();
        assert_eq!((first.index, first.rule), (2, Rule::HashLink));
        assert!(first.to_string().starts_with("2, hash-link, "));
    }

    #[test]
    fn overdraft_is_rejected() {
        let (a, b) = (KeyPair::from_seed_label("A"), KeyPair::from_seed_label("B"));
        let mut chain = Chain::new(params());
        push(&mut chain, &a, vec![]);
        push(&mut chain, &b, vec![pay(&a, &b, 2)]);
        let first = validate_structure(&chain).first().cloned().unwrap();
        assert_eq!((first.index, first.rule), (1, Rule::NonnegativeBalance));
    }

    #[test]
    fn miner_may_spend_own_block_reward() {
        let (a, b) = (KeyPair::from_seed_label("A"), KeyPair::from_seed_label("B"));
        let mut chain = Chain::new(params());
        push(&mut chain, &a, vec![pay(&a, &b, 1)]);
        assert!(validate_structure(&chain).is_valid());
    }

    #[test]
    fn intra_block_order_matters() {
        let (a, b, c) = (
            KeyPair::from_seed_label("A"),
            KeyPair::from_seed_label("B"),
            KeyPair::from_seed_label("C"),
        );
        let mut ok = Chain::new(params());
        push(&mut ok, &a, vec![pay(&a, &b, 1), pay(&b, &c, 1)]);
        assert!(validate_structure(&ok).is_valid());

        let mut bad = Chain::new(params());
        push(&mut bad, &a, vec![pay(&b, &c, 1), pay(&a, &b, 1)]);
        assert_eq!(validate_structure(&bad).first().unwrap().rule, Rule::NonnegativeBalance);
    }

    #[test]
    fn mass_and_signature_faults() {
        let (a, b) = (KeyPair::from_seed_label("A"), KeyPair::from_seed_label("B"));
        let mut chain = Chain::new(params());
        push(&mut chain, &a, vec![]);
        let bad_mass = Transaction::with_any_mass([(a.account(), -1), (b.account(), 2)]).unwrap();
        let signed = SignedTransaction::sign(bad_mass, &[&a]).unwrap();
        push(&mut chain, &a, vec![signed]);
        assert_eq!(validate_structure(&chain).first().unwrap().rule, Rule::Mass);

        let mut chain = Chain::new(params());
        push(&mut chain, &a, vec![]);
        let mut forged = pay(&a, &b, 1);
        forged
            .signatures
            .insert(a.account(), b.sign(&forged.tx.canonical_bytes()));
        push(&mut chain, &a, vec![forged]);
        let first = validate_structure(&chain).first().cloned().unwrap();
        assert_eq!((first.index, first.rule), (1, Rule::Signature));
    }
}
