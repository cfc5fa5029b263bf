use std::collections::BTreeSet;

use super::{
    block_time_sample, retarget, trial_rng, AttackOutcome, BlockRecord, ForkId, Horizon, Scenario, SimError, SimResult,
    StopReason, Strategy, WindowRecord, WindowTiming,
};
use crate::consensus::{self, WindowStats};
use crate::crypto::{Account, KeyPair};
use crate::ledger::Mode;
use crate::ratio;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Role {
    Honest,
    Attacker,
    Sybil,
    /// Appears in history windows only.
    HistoryOnly,
}

#[derive(Clone, Debug)]
pub(crate) struct Participant {
    pub name: String,
    pub account: Account,
    pub power: f64,
    pub role: Role,
}

#[derive(Clone, Debug)]
struct ForkState {
    fork: ForkId,
    height: u64,
    total_difficulty: f64,
    counts: Vec<u64>,
    stakes: Vec<f64>,
    difficulty: f64,
    window_start: f64,
    timings: Vec<WindowTiming>,
}

/// A scenario prepared for repeated runs.
#[derive(Clone, Debug)]
pub struct Simulator {
    scenario: Scenario,
    participants: Vec<Participant>,
    base: ForkState,
    history_windows: Vec<WindowRecord>,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut participants = Vec::new();
        for m in &scenario.miners {
            let role = match m.strategy {
                Strategy::Honest => Role::Honest,
                Strategy::AttackerPrivateFork => Role::Attacker,
                Strategy::SybilSpawner { .. } => Role::Sybil,
            };
            for name in m.identity_names() {
                participants.push(Participant {
                    account: KeyPair::from_seed_label(&name).account(),
                    name,
                    power: m.power,
                    role,
                });
            }
        }
        let known: BTreeSet<String> = participants.iter().map(|p| p.name.clone()).collect();
        let extra: BTreeSet<&String> = scenario
            .history
            .iter()
            .flat_map(|w| w.keys())
            .filter(|n| !known.contains(*n))
            .collect();
        for name in extra {
            participants.push(Participant {
                account: KeyPair::from_seed_label(name).account(),
                name: name.clone(),
                power: 0.0,
                role: Role::HistoryOnly,
            });
        }

        let n = participants.len();
        let first = difficulty_for(scenario, 0, &[], 0.0).ok_or_else(|| SimError::Scenario("no difficulty".into()))?;
        let mut sim = Simulator {
            scenario: scenario.clone(),
            participants,
            base: ForkState {
                fork: ForkId::Main,
                height: 0,
                total_difficulty: 0.0,
                counts: vec![0; n],
                stakes: vec![1.0; n],
                difficulty: first,
                window_start: 0.0,
                timings: Vec::new(),
            },
            history_windows: Vec::new(),
        };
        let period = scenario.params.period();
        let mut base = sim.base.clone();
        let mut records = Vec::new();
        for window in &scenario.history {
            for (i, p) in sim.participants.iter().enumerate() {
                base.counts[i] = window.get(&p.name).copied().unwrap_or(0);
            }
            base.height += period;
            base.total_difficulty += base.difficulty * period as f64;
            if !sim.close_window(&mut base, None, &mut records)? {
                return Err(SimError::Scenario(
                    "difficulty vector does not cover the history".into(),
                ));
            }
        }
        sim.base = base;
        sim.history_windows = records;
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Account of a participant by name.
    pub fn account(&self, name: &str) -> Option<Account> {
        self.participants.iter().find(|p| p.name == name).map(|p| p.account)
    }

    pub(crate) fn participants(&self) -> &[Participant] {
        &self.participants
    }

    /// Stake each participant holds in the first simulated window.
    pub fn initial_stakes(&self) -> Vec<(String, f64)> {
        self.participants
            .iter()
            .zip(&self.base.stakes)
            .map(|(p, s)| (p.name.clone(), *s))
            .collect()
    }

    /// Difficulty of the first simulated window.
    pub fn initial_difficulty(&self) -> f64 {
        self.base.difficulty
    }

    /// Records the completed window and moves `state` to the next one.
    /// Returns false when no difficulty is available for the next window.
    fn close_window(
        &self,
        state: &mut ForkState,
        now: Option<f64>,
        out: &mut Vec<WindowRecord>,
    ) -> Result<bool, SimError> {
        let params = &self.scenario.params;
        let period = params.period();
        let window = state.height / period - 1;
        let stats = WindowStats::from_counts(
            window,
            self.participants
                .iter()
                .zip(&state.counts)
                .map(|(p, c)| (p.account, *c)),
        );
        let mut nobm: Vec<(String, u64)> = self
            .participants
            .iter()
            .zip(&state.counts)
            .filter(|(_, c)| **c > 0)
            .map(|(p, c)| (p.name.clone(), *c))
            .collect();
        nobm.sort();
        let timing = now.map(|end| WindowTiming {
            start: state.window_start,
            end,
        });
        out.push(WindowRecord {
            fork: state.fork,
            window,
            nobm,
            nom: stats.nom(),
            timing,
            difficulty: state.difficulty,
            stakes: self
                .participants
                .iter()
                .zip(&state.stakes)
                .filter(|(p, _)| p.role != Role::HistoryOnly)
                .map(|(p, s)| (p.name.clone(), *s))
                .collect(),
        });
        if let Some(t) = timing {
            state.timings.push(t);
            state.window_start = t.end;
        }
        if params.mode == Mode::Pom {
            for (i, p) in self.participants.iter().enumerate() {
                state.stakes[i] = consensus::mstak(&p.account, &stats, params.discrimination(), period)?.to_f64();
            }
        }
        state.counts.iter_mut().for_each(|c| *c = 0);
        match difficulty_for(&self.scenario, window + 1, &state.timings, state.difficulty) {
            Some(d) => {
                state.difficulty = d;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn rate(&self, state: &ForkState, i: usize) -> f64 {
        self.participants[i].power * state.stakes[i] / state.difficulty
    }

    /// Runs trial `trial` on its own random stream.
    pub fn run(&self, trial: u64) -> Result<SimResult, SimError> {
        let mut rng = trial_rng(self.scenario.seed, trial);
        let period = self.scenario.params.period();
        let attack = self.scenario.attack;
        let mut main = self.base.clone();
        let mut private: Option<ForkState> = None;
        let mut blocks = Vec::new();
        let mut windows = self.history_windows.clone();
        let mut now = 0.0;
        let mut mined = 0u64;
        let mut race_blocks = 0u64;

        let stop = loop {
            if private.is_none() {
                if let Some(a) = attack {
                    if main.height - self.base.height >= a.lag {
                        let mut fork = self.base.clone();
                        fork.fork = ForkId::Private;
                        private = Some(fork);
                    }
                }
            }
            if let Some(p) = &private {
                if p.total_difficulty >= main.total_difficulty {
                    break StopReason::CaughtUp;
                }
            }
            if let Horizon::Blocks(n) = self.scenario.horizon {
                let counted = if attack.is_some() { race_blocks } else { mined };
                if counted >= n {
                    break StopReason::Horizon;
                }
            }

            let mut best: Option<(f64, ForkId, usize)> = None;
            for (i, p) in self.participants.iter().enumerate() {
                let state = match p.role {
                    Role::Honest | Role::Sybil => &main,
                    Role::Attacker => match &private {
                        Some(f) => f,
                        None => continue,
                    },
                    Role::HistoryOnly => continue,
                };
                let rate = self.rate(state, i);
                if rate <= 0.0 {
                    continue;
                }
                let dt = block_time_sample(rate, &mut rng)?;
                if best.is_none_or(|(b, _, _)| dt < b) {
                    best = Some((dt, state.fork, i));
                }
            }
            let Some((dt, fork, i)) = best else {
                break StopReason::Stalled;
            };
            if let Horizon::Time(limit) = self.scenario.horizon {
                if now + dt > limit {
                    now = limit;
                    break StopReason::Horizon;
                }
            }
            now += dt;
            let state = match fork {
                ForkId::Main => &mut main,
                ForkId::Private => private.as_mut().expect("private fork exists"),
            };
            blocks.push(BlockRecord {
                height: state.height,
                fork,
                time: now,
                miner: self.participants[i].name.clone(),
                window: state.height / period,
                difficulty: state.difficulty,
                stake: state.stakes[i],
            });
            state.counts[i] += 1;
            state.height += 1;
            state.total_difficulty += state.difficulty;
            mined += 1;
            if private.is_some() {
                race_blocks += 1;
            }
            let state = match fork {
                ForkId::Main => &mut main,
                ForkId::Private => private.as_mut().expect("private fork exists"),
            };
            if state.height % period == 0 && !self.close_window(state, Some(now), &mut windows)? {
                break StopReason::DifficultyExhausted;
            }
        };

        let attack = attack.map(|_| {
            let private_td = private
                .as_ref()
                .map(|p| p.total_difficulty)
                .unwrap_or(self.base.total_difficulty);
            AttackOutcome {
                caught_up: stop == StopReason::CaughtUp,
                final_deficit: main.total_difficulty - private_td,
                race_blocks,
            }
        });
        Ok(SimResult {
            blocks,
            windows,
            attack,
            stop,
            end_time: now,
            history_len: self.scenario.history_len(),
        })
    }
}

/// Difficulty of window `w`: the configured value if there is one, otherwise
/// the retarget rule applied to the completed windows.
fn difficulty_for(s: &Scenario, w: u64, timings: &[WindowTiming], current: f64) -> Option<f64> {
    if let Some(d) = usize::try_from(w).ok().and_then(|w| s.params.difficulty().get(w)) {
        return Some(ratio::to_f64(d));
    }
    let rule = s.retarget?;
    if timings.is_empty() {
        return Some(current);
    }
    retarget(timings, rule.target_interval, s.params.period(), current).ok()
}

/// Runs trial 0 of `s`.
pub fn run_scenario(s: &Scenario) -> Result<SimResult, SimError> {
    Simulator::new(s)?.run(0)
}
