//! Statistics over many simulator trials, each paired with the value the
//! timing and stake laws predict for it.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::engine::Role;
use super::{ForkId, Horizon, Scenario, SimError, SimResult, Simulator, Strategy};
use crate::consensus::{self, WindowStats};
use crate::ledger::Mode;
use crate::ratio::{self, Rational};

/// Empirical mean of a timing against its prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingStat {
    pub trials: u64,
    pub predicted: f64,
    pub mean: f64,
    /// Standard error of `mean`; zero for a single run.
    pub std_error: f64,
    /// One value per trial, in trial order.
    pub samples: Vec<f64>,
}

impl TimingStat {
    fn from_samples(predicted: f64, samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std_error = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        TimingStat {
            trials: samples.len() as u64,
            predicted,
            mean,
            std_error,
            samples,
        }
    }

    pub fn rel_error(&self) -> f64 {
        (self.mean - self.predicted).abs() / self.predicted
    }
}

fn with_horizon(s: &Scenario, horizon: Horizon) -> Scenario {
    Scenario { horizon, ..s.clone() }
}

/// Runs trials `0..trials` on the rayon pool; results come back in trial order.
pub fn run_trials(sim: &Simulator, trials: u64) -> Result<Vec<SimResult>, SimError> {
    (0..trials).into_par_iter().map(|t| sim.run(t)).collect()
}

fn total_power(s: &Scenario) -> f64 {
    s.miners
        .iter()
        .filter(|m| m.strategy != Strategy::AttackerPrivateFork)
        .map(|m| m.power * m.identity_names().len() as f64)
        .sum()
}

fn pow_only(s: &Scenario) -> Result<(), SimError> {
    if s.params.mode != Mode::Pow || s.attack.is_some() {
        return Err(SimError::Scenario(
            "expected a proof-of-work scenario without attackers".into(),
        ));
    }
    Ok(())
}

/// Time to the first block against `D / P`, where `P` is the total power.
pub fn block_time_check(s: &Scenario, trials: u64) -> Result<TimingStat, SimError> {
    pow_only(s)?;
    let sim = Simulator::new(&with_horizon(s, Horizon::Blocks(1)))?;
    let predicted = sim.initial_difficulty() / total_power(s);
    let samples = run_trials(&sim, trials)?.into_iter().map(|r| r.end_time).collect();
    Ok(TimingStat::from_samples(predicted, samples))
}

/// Time for `k` blocks in one run against `k D / P`. Needs a constant difficulty.
pub fn k_block_time_check(s: &Scenario, k: u64) -> Result<TimingStat, SimError> {
    pow_only(s)?;
    let sim = Simulator::new(&with_horizon(s, Horizon::Blocks(k)))?;
    let predicted = k as f64 * sim.initial_difficulty() / total_power(s);
    let r = sim.run(0)?;
    if r.blocks.len() as u64 != k {
        return Err(SimError::Scenario(format!(
            "run stopped after {} blocks",
            r.blocks.len()
        )));
    }
    Ok(TimingStat::from_samples(predicted, vec![r.end_time]))
}

/// Row of a concentration check: deviation of `k`-block times from `k D / P`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationRow {
    pub k: u64,
    pub replicates: u64,
    /// Root-mean-square relative deviation.
    pub rms: f64,
    /// `rms * sqrt(k)`, which stays near `1` when deviations shrink as `1 / sqrt(k)`.
    pub scaled: f64,
}

pub fn concentration(s: &Scenario, ks: &[u64], replicates: u64) -> Result<Vec<ConcentrationRow>, SimError> {
    pow_only(s)?;
    ks.iter()
        .map(|&k| {
            let sim = Simulator::new(&with_horizon(s, Horizon::Blocks(k)))?;
            let predicted = k as f64 * sim.initial_difficulty() / total_power(s);
            let runs = run_trials(&sim, replicates)?;
            let ms = runs
                .iter()
                .map(|r| ((r.end_time - predicted) / predicted).powi(2))
                .sum::<f64>()
                / replicates as f64;
            let rms = ms.sqrt();
            Ok(ConcentrationRow {
                k,
                replicates,
                rms,
                scaled: rms * (k as f64).sqrt(),
            })
        })
        .collect()
}

/// `set_mstak(S)` for the first simulated window, checking that only members
/// of `S` mine and that each has unit power.
fn set_stake(s: &Scenario, set: &[&str]) -> Result<(Simulator, Rational), SimError> {
    if s.params.mode != Mode::Pom {
        return Err(SimError::Scenario("expected a proof-of-mining scenario".into()));
    }
    let members: BTreeSet<&str> = set.iter().copied().collect();
    for m in &s.miners {
        if m.power != 1.0 {
            return Err(SimError::Scenario(format!("miner `{}` must have unit power", m.name)));
        }
        for id in m.identity_names() {
            if !members.contains(id.as_str()) {
                return Err(SimError::Scenario(format!("miner `{id}` is not in the set")));
            }
        }
    }
    let sim = Simulator::new(s)?;
    let Some(last) = s.history.last() else {
        return Err(SimError::Scenario("stake needs at least one history window".into()));
    };
    let account = |name: &str| {
        sim.account(name)
            .ok_or_else(|| SimError::Scenario(format!("unknown account `{name}`")))
    };
    let stats = WindowStats::from_counts(
        s.history.len() as u64 - 1,
        last.iter()
            .map(|(n, c)| Ok((account(n)?, *c)))
            .collect::<Result<Vec<_>, SimError>>()?,
    );
    let accounts = set.iter().map(|n| account(n)).collect::<Result<Vec<_>, _>>()?;
    let stake = consensus::set_mstak(accounts.iter(), &stats, s.params.discrimination(), s.params.period())?;
    Ok((sim, stake))
}

/// Time for the set to mine one block against `D_N / set_mstak(S)`.
/// Only members of `S` may mine, each with power 1.
pub fn set_time_check(s: &Scenario, set: &[&str], trials: u64) -> Result<TimingStat, SimError> {
    let (sim, stake) = set_stake(&with_horizon(s, Horizon::Blocks(1)), set)?;
    let predicted = sim.initial_difficulty() / ratio::to_f64(&stake);
    let samples = run_trials(&sim, trials)?.into_iter().map(|r| r.end_time).collect();
    Ok(TimingStat::from_samples(predicted, samples))
}

/// Time for the set to mine `k` blocks inside one window against
/// `k D_N / set_mstak(S)`.
pub fn set_k_block_time_check(s: &Scenario, set: &[&str], k: u64) -> Result<TimingStat, SimError> {
    if k > s.params.period() {
        return Err(SimError::Scenario(format!("{k} blocks do not fit in one window")));
    }
    let (sim, stake) = set_stake(&with_horizon(s, Horizon::Blocks(k)), set)?;
    let predicted = k as f64 * sim.initial_difficulty() / ratio::to_f64(&stake);
    let r = sim.run(0)?;
    Ok(TimingStat::from_samples(predicted, vec![r.end_time]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CatchupStat {
    /// Attacker share of the total block rate at the fork.
    pub q: f64,
    pub p: f64,
    pub z: u64,
    pub trials: u64,
    pub successes: u64,
    pub estimate: f64,
    /// `(q / p)^z`.
    pub oracle: f64,
}

/// Fraction of trials in which a private fork started `z` blocks behind
/// reaches the main fork's total difficulty before the horizon.
pub fn attack_catchup(s: &Scenario, z: u64, trials: u64) -> Result<CatchupStat, SimError> {
    if s.attack.is_none() {
        return Err(SimError::Scenario("scenario has no attack".into()));
    }
    let s = Scenario {
        attack: Some(super::AttackConfig { lag: z }),
        ..s.clone()
    };
    let sim = Simulator::new(&s)?;
    let (mut attacker, mut honest) = (0.0, 0.0);
    for (p, (_, stake)) in sim.participants().iter().zip(sim.initial_stakes()) {
        match p.role {
            Role::Attacker => attacker += p.power * stake,
            Role::Honest | Role::Sybil => honest += p.power * stake,
            Role::HistoryOnly => {}
        }
    }
    let q = attacker / (attacker + honest);
    let p = 1.0 - q;
    let successes = run_trials(&sim, trials)?
        .iter()
        .filter(|r| r.attack.as_ref().is_some_and(|a| a.caught_up))
        .count() as u64;
    Ok(CatchupStat {
        q,
        p,
        z,
        trials,
        successes,
        estimate: successes as f64 / trials as f64,
        oracle: (q / p).powi(z as i32),
    })
}

/// One simulated window of a Sybil run.
#[derive(Clone, Debug, PartialEq)]
pub struct SybilRow {
    pub window: u64,
    pub nom: u64,
    /// Sybil identities that mined in the window.
    pub members: u64,
    /// `members / nom`.
    pub ratio: f64,
    /// `1 / (2(1 - a))`; `None` at `a = 1`.
    pub threshold: Option<f64>,
    /// Combined stake the identities carry into the next window.
    pub set_mstak: f64,
    pub majority: bool,
    /// Fraction of the window's blocks mined by the identities.
    pub share: f64,
    /// Share implied by the stakes and powers in force during the window.
    pub predicted_share: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SybilReport {
    pub alpha: f64,
    pub identities: u64,
    pub rows: Vec<SybilRow>,
}

/// Runs trial 0 and reports, for each simulated window, how the Sybil
/// identities' stake and block share evolve.
pub fn sybil_experiment(s: &Scenario) -> Result<SybilReport, SimError> {
    let spawner: Vec<_> = s
        .miners
        .iter()
        .filter(|m| matches!(m.strategy, Strategy::SybilSpawner { .. }))
        .collect();
    let [spawner] = spawner.as_slice() else {
        return Err(SimError::Scenario("expected exactly one sybil spawner".into()));
    };
    let ids: BTreeSet<String> = spawner.identity_names().into_iter().collect();
    let sim = Simulator::new(s)?;
    let power = |name: &str| {
        sim.participants()
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.power)
            .unwrap_or(0.0)
    };
    let a = s.params.discrimination();
    let period = s.params.period();
    let threshold = consensus::sybil_ratio_threshold(a).map(|t| ratio::to_f64(&t));
    let result = sim.run(0)?;
    let rows = result
        .windows
        .iter()
        .filter(|w| w.fork == ForkId::Main && w.timing.is_some())
        .map(|w| {
            let members = w.nobm.iter().filter(|(n, _)| ids.contains(n)).count() as u64;
            let blocks: u64 = w.nobm.iter().filter(|(n, _)| ids.contains(n)).map(|(_, c)| c).sum();
            let set = consensus::stake_from_counts(members, blocks, w.nom, a, period);
            let (mut ours, mut all) = (0.0, 0.0);
            for (name, stake) in &w.stakes {
                let rate = power(name) * stake;
                all += rate;
                if ids.contains(name) {
                    ours += rate;
                }
            }
            SybilRow {
                window: w.window,
                nom: w.nom,
                members,
                ratio: members as f64 / w.nom as f64,
                threshold,
                set_mstak: ratio::to_f64(&set),
                majority: set > ratio::ratio(1, 2),
                share: blocks as f64 / period as f64,
                predicted_share: if all > 0.0 { ours / all } else { 0.0 },
            }
        })
        .collect();
    Ok(SybilReport {
        alpha: ratio::to_f64(a),
        identities: ids.len() as u64,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::crypto::HashProfile;
    use crate::ledger::ChainParams;
    use crate::ratio::{from_u64, ratio};
    use crate::sim::SimMiner;

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

    fn window(entries: &[(&str, u64)]) -> BTreeMap<String, u64> {
        entries.iter().map(|(n, c)| (n.to_string(), *c)).collect()
    }

    #[test]
    fn set_time_quarter_stake() {
        let s = Scenario::new(
            params(Mode::Pom, 10, ratio(1, 2), &[100, 100]),
            vec![SimMiner::honest("A", 1.0)],
            Horizon::Blocks(1),
            42,
        )
        .with_history(vec![window(&[("A", 3), ("B", 3), ("C", 2), ("D", 1), ("E", 1)])]);
        let stat = set_time_check(&s, &["A"], 10_000).unwrap();
        assert_eq!(stat.predicted, 400.0);
        assert!(stat.rel_error() < 0.03, "{stat:?}");
    }

    #[test]
    fn set_time_whole_window_has_stake_one() {
        let names = ["A", "B", "C", "D", "E"];
        let s = Scenario::new(
            params(Mode::Pom, 10, ratio(1, 2), &[100, 100]),
            names.iter().map(|n| SimMiner::honest(*n, 1.0)).collect(),
            Horizon::Blocks(1),
            42,
        )
        .with_history(vec![window(&[("A", 3), ("B", 3), ("C", 2), ("D", 1), ("E", 1)])]);
        let stat = set_time_check(&s, &names, 10_000).unwrap();
        assert_eq!(stat.predicted, 100.0);
        assert!(stat.rel_error() < 0.03, "{stat:?}");
    }

    #[test]
    fn set_time_rejects_outsiders_and_weighted_power() {
        let s = Scenario::new(
            params(Mode::Pom, 2, ratio(1, 2), &[100, 100]),
            vec![SimMiner::honest("A", 2.0)],
            Horizon::Blocks(1),
            42,
        )
        .with_history(vec![window(&[("A", 2)])]);
        assert!(set_time_check(&s, &["A"], 10).is_err());
        assert!(set_time_check(&s, &[], 10).is_err());
    }

    #[test]
    fn block_time_scales_with_power() {
        for p in [1.0, 2.0, 5.0] {
            let s = Scenario::new(
                params(Mode::Pow, 10, ratio(1, 2), &[100]),
                vec![SimMiner::honest("A", p)],
                Horizon::Blocks(1),
                42,
            );
            let stat = block_time_check(&s, 10_000).unwrap();
            assert!(stat.rel_error() < 0.03, "{stat:?}");
        }
    }

    #[test]
    fn symmetric_race_almost_always_catches_up() {
        let s = Scenario::new(
            params(Mode::Pom, 100_000, from_u64(1), &[10, 10]),
            vec![SimMiner::honest("h", 1.0), SimMiner::attacker("x", 1.0)],
            Horizon::Blocks(5000),
            42,
        )
        .with_history(vec![window(&[("h", 50_000), ("x", 50_000)])])
        .with_attack(1);
        let stat = attack_catchup(&s, 1, 500).unwrap();
        assert_eq!(stat.q, 0.5);
        assert!(stat.estimate > 0.97, "{stat:?}");
    }
}
