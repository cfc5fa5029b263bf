//! Rebuilds a simulated fork as a real chain by mining every block in the
//! scenario's hash profile.

use super::{ForkId, Scenario, SimError, SimResult};
use crate::consensus;
use crate::crypto::KeyPair;
use crate::ledger::{Chain, ChainParams};
use crate::miner::{self, MineOutcome};
use crate::ratio::{self, Rational};

/// Nonces tried per block before giving up.
pub const REPLAY_NONCE_LIMIT: u64 = 1 << 28;

/// Difficulty vector covering every window `fork` touched.
fn difficulties(s: &Scenario, result: &SimResult, fork: ForkId) -> Result<Vec<Rational>, SimError> {
    let mut per_window: Vec<f64> = Vec::new();
    for w in &result.windows {
        if w.timing.is_none() || w.fork == fork {
            if w.window as usize >= per_window.len() {
                per_window.resize(w.window as usize + 1, f64::NAN);
            }
            per_window[w.window as usize] = w.difficulty;
        }
    }
    for b in result.fork_blocks(fork) {
        if b.window as usize >= per_window.len() {
            per_window.resize(b.window as usize + 1, f64::NAN);
        }
        per_window[b.window as usize] = b.difficulty;
    }
    let configured = s.params.difficulty();
    per_window
        .iter()
        .enumerate()
        .map(|(w, d)| match configured.get(w) {
            Some(exact) => Ok(exact.clone()),
            None => ratio::from_f64(*d).ok_or_else(|| SimError::Replay(format!("window {w} has no difficulty"))),
        })
        .collect()
}

/// Mines the history windows followed by the blocks `result` recorded on
/// `fork`, then validates the chain. Each block's recorded stake is checked
/// against the stake the chain rules assign.
pub fn materialize(s: &Scenario, result: &SimResult, fork: ForkId) -> Result<Chain, SimError> {
    let mut vector = difficulties(s, result, fork)?;
    if vector.is_empty() {
        vector.push(s.params.difficulty()[0].clone());
    }
    let params = ChainParams::new(
        s.params.mode,
        s.params.profile,
        s.params.period(),
        s.params.discrimination().clone(),
        vector,
    )
    .map_err(|e| SimError::Replay(e.to_string()))?;
    let mut chain = Chain::new(params);

    let mut order: Vec<(String, Option<f64>)> = Vec::new();
    for window in &s.history {
        for (name, count) in window {
            order.extend((0..*count).map(|_| (name.clone(), None)));
        }
    }
    order.extend(result.fork_blocks(fork).map(|b| (b.miner.clone(), Some(b.stake))));

    for (name, recorded) in order {
        let account = KeyPair::from_seed_label(&name).account();
        let index = chain.len() as u64;
        if let Some(stake) = recorded {
            let rule = consensus::block_stake(&chain, index, &account)?.to_f64();
            if rule != stake {
                return Err(SimError::Replay(format!(
                    "block {index}: simulated stake {stake} but the chain assigns {rule}"
                )));
            }
        }
        let outcome = miner::extend(&mut chain, account, Vec::new(), REPLAY_NONCE_LIMIT)
            .map_err(|e| SimError::Replay(format!("block {index}: {e}")))?;
        if let MineOutcome::Exhausted { .. } = outcome {
            return Err(SimError::Replay(format!("block {index}: no nonce meets the target")));
        }
    }
    let report = consensus::validate(&chain);
    if !report.is_valid() {
        return Err(SimError::Replay(report.to_string()));
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::crypto::HashProfile;
    use crate::ledger::Mode;
    use crate::ratio::{from_u64, ratio};
    use crate::sim::{run_scenario, Horizon, SimMiner};

    #[test]
    fn short_pom_run_materializes_to_a_valid_chain() {
        let params = ChainParams::new(Mode::Pom, HashProfile::default(), 4, ratio(1, 2), vec![from_u64(8); 6]).unwrap();
        let s = Scenario::new(
            params,
            vec![
                SimMiner::honest("a", 1.0),
                SimMiner::honest("b", 2.0),
                SimMiner::sybil("s", 1.0, 2),
            ],
            Horizon::Blocks(16),
            42,
        )
        .with_history(vec![BTreeMap::from([("a".to_string(), 3), ("z".to_string(), 1)])]);
        let r = run_scenario(&s).unwrap();
        let chain = materialize(&s, &r, ForkId::Main).unwrap();
        assert_eq!(chain.len(), 20);
    }

    #[test]
    fn retargeted_run_materializes() {
        let params = ChainParams::new(Mode::Pow, HashProfile::default(), 4, ratio(1, 2), vec![from_u64(4)]).unwrap();
        let miners = vec![SimMiner::honest("a", 1.0), SimMiner::honest("b", 1.0)];
        let s = Scenario::new(params, miners, Horizon::Blocks(20), 3).with_retarget(1.0);
        let r = run_scenario(&s).unwrap();
        let chain = materialize(&s, &r, ForkId::Main).unwrap();
        assert_eq!(chain.len(), 20);
    }
}
