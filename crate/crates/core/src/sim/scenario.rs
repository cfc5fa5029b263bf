//! Scenario description and its TOML file format.
//!
//! ```toml
//! seed = 42
//! mode = "pom"            # or "pow"
//! period = 10
//! alpha = "1/2"           # discrimination index, decimal or p/q
//! difficulty = ["100"]    # D_0, D_1, ...; later windows need retargeting
//! bits = 16               # hash width used when a run is materialised
//!
//! [horizon]
//! blocks = 1000           # or: time = 5000.0
//!
//! [retarget]              # optional
//! target_interval = 10.0
//!
//! [attack]                # optional; requires at least one attacker
//! lag = 5
//!
//! [[miners]]
//! name = "alice"
//! power = 1.0
//! strategy = "honest"     # "attacker" | "sybil"
//! identities = 10         # sybil only: number of accounts spawned
//!
//! [[history]]             # complete windows preceding the run
//! alice = 7
//! mallory = 3
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::crypto::HashProfile;
use crate::ledger::{ChainParams, Mode};
use crate::ratio::{self, format_rational, parse_rational};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Strategy {
    Honest,
    /// Mines a private fork from the end of the history.
    AttackerPrivateFork,
    /// Mines the public chain under `identities` separate accounts, each
    /// with the miner's full power.
    SybilSpawner {
        identities: u32,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimMiner {
    pub name: String,
    /// Hash attempts per unit time.
    pub power: f64,
    pub strategy: Strategy,
}

impl SimMiner {
    pub fn honest(name: impl Into<String>, power: f64) -> Self {
        SimMiner {
            name: name.into(),
            power,
            strategy: Strategy::Honest,
        }
    }

    pub fn attacker(name: impl Into<String>, power: f64) -> Self {
        SimMiner {
            name: name.into(),
            power,
            strategy: Strategy::AttackerPrivateFork,
        }
    }

    pub fn sybil(name: impl Into<String>, power: f64, identities: u32) -> Self {
        SimMiner {
            name: name.into(),
            power,
            strategy: Strategy::SybilSpawner { identities },
        }
    }

    /// Account names this miner mines under.
    pub fn identity_names(&self) -> Vec<String> {
        match self.strategy {
            Strategy::SybilSpawner { identities } => (0..identities).map(|i| sybil_identity(&self.name, i)).collect(),
            _ => vec![self.name.clone()],
        }
    }
}

pub fn sybil_identity(name: &str, i: u32) -> String {
    format!("{name}#{i}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    /// Blocks mined in the run. With an attack, blocks mined during the race.
    Blocks(u64),
    /// Simulated time.
    Time(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetargetRule {
    /// Desired mean time between blocks.
    pub target_interval: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttackConfig {
    /// Blocks the honest fork is ahead when the attacker starts.
    pub lag: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub params: ChainParams,
    pub miners: Vec<SimMiner>,
    /// Block counts per account for complete windows preceding the run.
    pub history: Vec<BTreeMap<String, u64>>,
    pub horizon: Horizon,
    pub seed: u64,
    pub retarget: Option<RetargetRule>,
    pub attack: Option<AttackConfig>,
}

impl Scenario {
    pub fn new(params: ChainParams, miners: Vec<SimMiner>, horizon: Horizon, seed: u64) -> Self {
        Scenario {
            params,
            miners,
            history: Vec::new(),
            horizon,
            seed,
            retarget: None,
            attack: None,
        }
    }

    pub fn with_history(mut self, history: Vec<BTreeMap<String, u64>>) -> Self {
        self.history = history;
        self
    }

    pub fn with_attack(mut self, lag: u64) -> Self {
        self.attack = Some(AttackConfig { lag });
        self
    }

    pub fn with_retarget(mut self, target_interval: f64) -> Self {
        self.retarget = Some(RetargetRule { target_interval });
        self
    }

    /// Height at which simulation starts.
    pub fn history_len(&self) -> u64 {
        self.history.len() as u64 * self.params.period()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if self.miners.is_empty() {
            return bad("no miners".into());
        }
        if !self
            .miners
            .iter()
            .any(|m| !matches!(m.strategy, Strategy::AttackerPrivateFork))
        {
            return bad("at least one non-attacking miner is required".into());
        }
        match self.horizon {
            Horizon::Blocks(0) => return bad("horizon must be positive".into()),
            Horizon::Time(t) if !(t > 0.0 && t.is_finite()) => return bad("horizon must be positive".into()),
            _ => {}
        }
        let mut names = BTreeSet::new();
        for m in &self.miners {
            if !(m.power > 0.0 && m.power.is_finite()) {
                return bad(format!("miner `{}` needs positive power", m.name));
            }
            if m.name.is_empty() || m.name.contains('#') {
                return bad(format!("invalid miner name `{}`", m.name));
            }
            if let Strategy::SybilSpawner { identities: 0 } = m.strategy {
                return bad(format!("sybil `{}` needs at least one identity", m.name));
            }
            for id in m.identity_names() {
                if !names.insert(id.clone()) {
                    return bad(format!("duplicate miner `{id}`"));
                }
            }
        }
        let period = self.params.period();
        for (w, window) in self.history.iter().enumerate() {
            let total: u64 = window.values().sum();
            if total != period {
                return bad(format!("history window {w} has {total} blocks, expected {period}"));
            }
        }
        let attackers = self.miners.iter().any(|m| m.strategy == Strategy::AttackerPrivateFork);
        if attackers != self.attack.is_some() {
            return bad("attackers and an [attack] section must appear together".into());
        }
        if let Some(AttackConfig { lag: 0 }) = self.attack {
            return bad("attack lag must be at least 1".into());
        }
        if let Some(r) = self.retarget {
            if !(r.target_interval > 0.0 && r.target_interval.is_finite()) {
                return bad("retarget interval must be positive".into());
            }
        }
        if self.params.difficulty().len() <= self.history.len() && self.retarget.is_none() {
            return bad("difficulty vector does not cover the first simulated window".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        file.into_scenario()
    }

    pub fn to_toml(&self) -> String {
        let file = ScenarioFile::from(self);
        toml::to_string(&file).expect("scenario serialises")
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: u64,
    mode: String,
    period: u64,
    alpha: String,
    difficulty: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bits: Option<u32>,
    horizon: HorizonFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    retarget: Option<RetargetFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attack: Option<AttackFile>,
    miners: Vec<MinerFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    history: Vec<BTreeMap<String, u64>>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct HorizonFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blocks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct RetargetFile {
    target_interval: f64,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct AttackFile {
    lag: u64,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct MinerFile {
    name: String,
    power: f64,
    #[serde(default = "default_strategy")]
    strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    identities: Option<u32>,
}

fn default_strategy() -> String {
    "honest".into()
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, SimError> {
        let err = |m: String| SimError::Scenario(m);
        let mode: Mode = self
            .mode
            .parse()
            .map_err(|e: crate::ledger::LedgerError| err(e.to_string()))?;
        let profile =
            HashProfile::test(self.bits.unwrap_or(crate::crypto::DEFAULT_TEST_BITS)).map_err(|e| err(e.to_string()))?;
        let alpha = parse_rational(&self.alpha).map_err(|e| err(e.to_string()))?;
        let difficulty = self
            .difficulty
            .iter()
            .map(|d| parse_rational(d))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(e.to_string()))?;
        let params = ChainParams::new(mode, profile, self.period, alpha, difficulty).map_err(|e| err(e.to_string()))?;
        let horizon = match (self.horizon.blocks, self.horizon.time) {
            (Some(b), None) => Horizon::Blocks(b),
            (None, Some(t)) => Horizon::Time(t),
            _ => return Err(err("horizon needs exactly one of `blocks` or `time`".into())),
        };
        let miners = self
            .miners
            .into_iter()
            .map(|m| {
                let strategy = match (m.strategy.as_str(), m.identities) {
                    ("honest", None) => Strategy::Honest,
                    ("attacker", None) => Strategy::AttackerPrivateFork,
                    ("sybil", Some(identities)) => Strategy::SybilSpawner { identities },
                    ("sybil", None) => return Err(err(format!("sybil `{}` needs `identities`", m.name))),
                    (s, _) => return Err(err(format!("unknown strategy `{s}` for `{}`", m.name))),
                };
                Ok(SimMiner {
                    name: m.name,
                    power: m.power,
                    strategy,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scenario = Scenario {
            params,
            miners,
            history: self.history,
            horizon,
            seed: self.seed,
            retarget: self.retarget.map(|r| RetargetRule {
                target_interval: r.target_interval,
            }),
            attack: self.attack.map(|a| AttackConfig { lag: a.lag }),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let (blocks, time) = match s.horizon {
            Horizon::Blocks(b) => (Some(b), None),
            Horizon::Time(t) => (None, Some(t)),
        };
        ScenarioFile {
            seed: s.seed,
            mode: s.params.mode.to_string(),
            period: s.params.period(),
            alpha: format_rational(s.params.discrimination()),
            difficulty: s.params.difficulty().iter().map(ratio::format_rational).collect(),
            bits: Some(s.params.profile.bits()),
            horizon: HorizonFile { blocks, time },
            retarget: s.retarget.map(|r| RetargetFile {
                target_interval: r.target_interval,
            }),
            attack: s.attack.map(|a| AttackFile { lag: a.lag }),
            miners: s
                .miners
                .iter()
                .map(|m| {
                    let (strategy, identities) = match m.strategy {
                        Strategy::Honest => ("honest", None),
                        Strategy::AttackerPrivateFork => ("attacker", None),
                        Strategy::SybilSpawner { identities } => ("sybil", Some(identities)),
                    };
                    MinerFile {
                        name: m.name.clone(),
                        power: m.power,
                        strategy: strategy.into(),
                        identities,
                    }
                })
                .collect(),
            history: s.history.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
mode = "pom"
period = 10
alpha = "0.5"
difficulty = ["100", "100"]

[horizon]
blocks = 20

[attack]
lag = 2

[[miners]]
name = "alice"
power = 1.0

[[miners]]
name = "mallory"
power = 0.5
strategy = "attacker"

[[miners]]
name = "swarm"
power = 1.0
strategy = "sybil"
identities = 3

[[history]]
alice = 7
mallory = 3
"#;

    #[test]
    fn parses_and_round_trips() {
        let s = Scenario::from_toml(SAMPLE).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.params.discrimination(), &ratio::ratio(1, 2));
        assert_eq!(s.horizon, Horizon::Blocks(20));
        assert_eq!(s.miners[2].identity_names(), vec!["swarm#0", "swarm#1", "swarm#2"]);
        assert_eq!(s.history_len(), 10);
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_inconsistent_files() {
        let no_attack = SAMPLE.replace("[attack]\nlag = 2\n", "");
        assert!(Scenario::from_toml(&no_attack).is_err());
        let short_history = SAMPLE.replace("mallory = 3", "mallory = 2");
        assert!(Scenario::from_toml(&short_history).is_err());
        let unknown = SAMPLE.replace("seed = 7", "seed = 7\ncolour = 1");
        assert!(Scenario::from_toml(&unknown).is_err());
        let uncovered = SAMPLE.replace(r#"difficulty = ["100", "100"]"#, r#"difficulty = ["100"]"#);
        assert!(Scenario::from_toml(&uncovered).is_err());
        let zero = SAMPLE.replace("blocks = 20", "blocks = 0");
        assert!(Scenario::from_toml(&zero).is_err());
    }
}
