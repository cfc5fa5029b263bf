//! Named experiment recipes. Each produces a per-trial CSV and summary rows
//! comparing an empirical value with its prediction.
//!
//! Summary columns: `experiment,case,metric,prediction,empirical,error,tolerance,pass`.
//! `metric` is `relative` (error is `|empirical - prediction| / prediction`),
//! `absolute` (error is `|empirical - prediction|`) or `count` (error is the
//! empirical count and must not exceed the tolerance).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use thiserror::Error;

use crate::consensus::{majority_bound, stake_from_counts, sybil_ratio_threshold};
use crate::crypto::HashProfile;
use crate::ledger::{ChainParams, Mode};
use crate::ratio::{self, from_u64, ratio, Rational};
use crate::sim::analysis;
use crate::sim::{ForkId, Horizon, Scenario, SimError, SimMiner, Simulator};

pub const EXPERIMENTS: [&str; 8] = [
    "lemma1",
    "theorem1",
    "lemma2",
    "theorem2",
    "lemma3-grid",
    "catchup",
    "sybil",
    "retarget-demo",
];

pub const SUMMARY_CSV_HEADER: &str = "experiment,case,metric,prediction,empirical,error,tolerance,pass";

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown experiment `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Overrides the recipe's trial count where it has one.
    pub trials: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: DEFAULT_SEED,
            trials: None,
        }
    }
}

impl ExperimentConfig {
    fn trials_or(&self, default: u64) -> u64 {
        self.trials.unwrap_or(default)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Relative,
    Absolute,
    Count,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Relative => "relative",
            Metric::Absolute => "absolute",
            Metric::Count => "count",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub case: String,
    pub metric: Metric,
    pub prediction: f64,
    pub empirical: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SummaryRow {
    fn new(
        experiment: &str,
        case: impl Into<String>,
        metric: Metric,
        prediction: f64,
        empirical: f64,
        tolerance: f64,
    ) -> Self {
        let error = match metric {
            Metric::Relative => (empirical - prediction).abs() / prediction,
            Metric::Absolute => (empirical - prediction).abs(),
            Metric::Count => empirical,
        };
        SummaryRow {
            experiment: experiment.into(),
            case: case.into(),
            metric,
            prediction,
            empirical,
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub name: String,
    pub trials_csv: String,
    pub summary: Vec<SummaryRow>,
    /// Extra report lines for the console.
    pub notes: Vec<String>,
}

impl ExperimentOutput {
    pub fn passed(&self) -> bool {
        self.summary.iter().all(|r| r.pass)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_CSV_HEADER);
        out.push('\n');
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.experiment, r.case, r.metric, r.prediction, r.empirical, r.error, r.tolerance, r.pass
            );
        }
        out
    }
}

pub fn run_experiment(name: &str, config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    let out = match name {
        "lemma1" => single_block_time(config)?,
        "theorem1" => k_block_time(config)?,
        "lemma2" => set_block_time(config)?,
        "theorem2" => set_k_block_time(config)?,
        "lemma3-grid" => majority_grid_recipe(),
        "catchup" => catchup(config)?,
        "sybil" => sybil(config)?,
        "retarget-demo" => retarget_demo(config)?,
        other => return Err(ExperimentError::Unknown(other.into())),
    };
    Ok(out)
}

fn params(mode: Mode, period: u64, a: Rational, difficulty: &[u64]) -> ChainParams {
    ChainParams::new(
        mode,
        HashProfile::default(),
        period,
        a,
        difficulty.iter().map(|d| from_u64(*d)).collect(),
    )
    .expect("recipe parameters are valid")
}

fn window(entries: &[(&str, u64)]) -> BTreeMap<String, u64> {
    entries.iter().map(|(n, c)| (n.to_string(), *c)).collect()
}

fn output(name: &str, trials_csv: String, summary: Vec<SummaryRow>) -> ExperimentOutput {
    ExperimentOutput {
        name: name.into(),
        trials_csv,
        summary,
        notes: Vec::new(),
    }
}

fn single_block_time(config: &ExperimentConfig) -> Result<ExperimentOutput, SimError> {
    let trials = config.trials_or(10_000);
    let mut csv = String::from("case,trial,time\n");
    let mut rows = Vec::new();
    for p in [1.0, 2.0, 5.0] {
        let s = Scenario::new(
            params(Mode::Pow, 100, from_u64(0), &[100]),
            vec![SimMiner::honest("miner", p)],
            Horizon::Blocks(1),
            config.seed,
        );
        let stat = analysis::block_time_check(&s, trials)?;
        let case = format!("P={p}");
        for (t, x) in stat.samples.iter().enumerate() {
            let _ = writeln!(csv, "{case},{t},{x}");
        }
        rows.push(SummaryRow::new(
            "lemma1",
            case,
            Metric::Relative,
            stat.predicted,
            stat.mean,
            0.03,
        ));
    }
    Ok(output("lemma1", csv, rows))
}

fn k_block_time(config: &ExperimentConfig) -> Result<ExperimentOutput, SimError> {
    let s = Scenario::new(
        params(Mode::Pow, 1_000_000, from_u64(0), &[100]),
        vec![SimMiner::honest("miner", 1.0)],
        Horizon::Blocks(1),
        config.seed,
    );
    let mut csv = String::from("case,k,replicates,value\n");
    let single = analysis::k_block_time_check(&s, 10_000)?;
    let _ = writeln!(csv, "single-run,10000,1,{}", single.mean);
    let mut rows = vec![SummaryRow::new(
        "theorem1",
        "k=10000 single run",
        Metric::Relative,
        single.predicted,
        single.mean,
        0.03,
    )];
    let replicates = config.trials_or(100);
    for row in analysis::concentration(&s, &[100, 1000, 10_000], replicates)? {
        let _ = writeln!(csv, "rms,{},{},{}", row.k, row.replicates, row.rms);
        rows.push(SummaryRow::new(
            "theorem1",
            format!("k={} rms*sqrt(k)", row.k),
            Metric::Relative,
            1.0,
            row.scaled,
            0.25,
        ));
    }
    Ok(output("theorem1", csv, rows))
}

fn set_block_time(config: &ExperimentConfig) -> Result<ExperimentOutput, SimError> {
    let trials = config.trials_or(10_000);
    let egalitarian: Vec<(String, u64)> = (0..10).map(|i| (format!("m{i}"), 1)).collect();
    let egalitarian = Scenario::new(
        params(Mode::Pom, 10, from_u64(0), &[100, 100]),
        vec![SimMiner::honest("m0", 1.0)],
        Horizon::Blocks(1),
        config.seed,
    )
    .with_history(vec![egalitarian.into_iter().collect()]);
    let mixed = window(&[("A", 3), ("B", 3), ("C", 2), ("D", 1), ("E", 1)]);
    let single = Scenario::new(
        params(Mode::Pom, 10, ratio(1, 2), &[100, 100]),
        vec![SimMiner::honest("A", 1.0)],
        Horizon::Blocks(1),
        config.seed,
    )
    .with_history(vec![mixed.clone()]);
    let pair = Scenario {
        miners: vec![SimMiner::honest("A", 1.0), SimMiner::honest("B", 1.0)],
        ..single.clone()
    };
    let cases: [(&str, &Scenario, &[&str]); 3] = [
        ("stake=0.1", &egalitarian, &["m0"]),
        ("stake=0.25", &single, &["A"]),
        ("stake=0.5", &pair, &["A", "B"]),
    ];
    let mut csv = String::from("case,trial,time\n");
    let mut rows = Vec::new();
    for (case, s, set) in cases {
        let stat = analysis::set_time_check(s, set, trials)?;
        for (t, x) in stat.samples.iter().enumerate() {
            let _ = writeln!(csv, "{case},{t},{x}");
        }
        rows.push(SummaryRow::new(
            "lemma2",
            case,
            Metric::Relative,
            stat.predicted,
            stat.mean,
            0.03,
        ));
    }
    Ok(output("lemma2", csv, rows))
}

fn set_k_block_time(config: &ExperimentConfig) -> Result<ExperimentOutput, SimError> {
    let s = Scenario::new(
        params(Mode::Pom, 1000, ratio(1, 2), &[100, 100]),
        vec![SimMiner::honest("A", 1.0), SimMiner::honest("B", 1.0)],
        Horizon::Blocks(1000),
        config.seed,
    )
    .with_history(vec![window(&[("A", 300), ("B", 300), ("C", 200), ("D", 200)])]);
    let stat = analysis::set_k_block_time_check(&s, &["A", "B"], 1000)?;
    let csv = format!("case,k,time\nS=A+B,1000,{}\n", stat.mean);
    let rows = vec![SummaryRow::new(
        "theorem2",
        "S=A+B k=1000",
        Metric::Relative,
        stat.predicted,
        stat.mean,
        0.05,
    )];
    Ok(output("theorem2", csv, rows))
}

/// Results of enumerating the majority condition over the parameter grid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GridReport {
    pub cases: u64,
    /// Cases where `set_mstak(S) > 1/2` and the expanded inequality disagree.
    pub disagreements: u64,
    /// Cases with `|S| / NOM >= 1 / (2(1 - a))` and `NOBM(S) >= 1`.
    pub threshold_cases: u64,
    /// Threshold cases where `set_mstak(S) <= 1/2`.
    pub threshold_failures: u64,
    /// Cases at the threshold ratio with `NOBM(S) = 0`, where the set stake is exactly 1/2.
    pub equality_edges: u64,
}

impl GridReport {
    fn add(mut self, o: GridReport) -> GridReport {
        self.cases += o.cases;
        self.disagreements += o.disagreements;
        self.threshold_cases += o.threshold_cases;
        self.threshold_failures += o.threshold_failures;
        self.equality_edges += o.equality_edges;
        self
    }
}

/// Checks one `(a, L)` slice: NOM in 1..=20, `|S|` in 0..=NOM, NOBM(S) in 0..=L.
pub fn majority_grid_slice(a: &Rational, period: u64) -> GridReport {
    let half = ratio(1, 2);
    let threshold = sybil_ratio_threshold(a);
    let mut r = GridReport::default();
    for nom in 1..=20u64 {
        for members in 0..=nom {
            let bound = majority_bound(a, members, nom);
            let over = threshold.as_ref().map(|t| ratio(members, nom) >= *t);
            for blocks in 0..=period {
                r.cases += 1;
                let stake = stake_from_counts(members, blocks, nom, a, period);
                let direct = stake > half;
                let inequality = ratio(blocks, period) > bound;
                if direct != inequality {
                    r.disagreements += 1;
                }
                if over == Some(true) {
                    if blocks >= 1 {
                        r.threshold_cases += 1;
                        if !direct {
                            r.threshold_failures += 1;
                        }
                    } else if stake == half {
                        r.equality_edges += 1;
                    }
                }
            }
        }
    }
    r
}

/// The full grid: `a = j/20` for `j` in 1..=20 and `L` in {10, 100}.
pub fn majority_grid() -> (GridReport, Vec<(Rational, u64, GridReport)>) {
    let slices: Vec<(Rational, u64, GridReport)> = (1..=20u64)
        .flat_map(|j| [10u64, 100].map(move |l| (j, l)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(j, l)| {
            let a = ratio(j, 20);
            let r = majority_grid_slice(&a, l);
            (a, l, r)
        })
        .collect();
    let total = slices
        .iter()
        .fold(GridReport::default(), |acc, (_, _, r)| acc.add(r.clone()));
    (total, slices)
}

fn majority_grid_recipe() -> ExperimentOutput {
    let (total, slices) = majority_grid();
    let mut csv = String::from("alpha,period,cases,disagreements,threshold_cases,threshold_failures,equality_edges\n");
    for (a, l, r) in &slices {
        let _ = writeln!(
            csv,
            "{},{l},{},{},{},{},{}",
            ratio::format_rational(a),
            r.cases,
            r.disagreements,
            r.threshold_cases,
            r.threshold_failures,
            r.equality_edges
        );
    }
    let rows = vec![
        SummaryRow::new(
            "lemma3-grid",
            "disagreements",
            Metric::Count,
            0.0,
            total.disagreements as f64,
            0.0,
        ),
        SummaryRow::new(
            "lemma3-grid",
            "threshold failures",
            Metric::Count,
            0.0,
            total.threshold_failures as f64,
            0.0,
        ),
    ];
    let mut out = output("lemma3-grid", csv, rows);
    out.notes = vec![
        format!("cases: {}", total.cases),
        format!("violations: {}", total.disagreements),
        format!("threshold cases: {}", total.threshold_cases),
        format!("threshold failures: {}", total.threshold_failures),
        format!(
            "equality edges (no blocks, stake exactly 1/2): {}",
            total.equality_edges
        ),
    ];
    out
}

/// Attacker with 30% of the stake against two honest miners. The window is
/// long enough that the race never crosses a window boundary.
pub fn catchup_scenario(seed: u64) -> Scenario {
    Scenario::new(
        params(Mode::Pom, 100_000, from_u64(1), &[10, 10]),
        vec![
            SimMiner::honest("h1", 1.0),
            SimMiner::honest("h2", 1.0),
            SimMiner::attacker("x", 1.0),
        ],
        Horizon::Blocks(300),
        seed,
    )
    .with_history(vec![window(&[("h1", 35_000), ("h2", 35_000), ("x", 30_000)])])
    .with_attack(1)
}

fn catchup(config: &ExperimentConfig) -> Result<ExperimentOutput, SimError> {
    let trials = config.trials_or(10_000);
    let s = catchup_scenario(config.seed);
    let mut csv = String::from("z,trials,successes,estimate,oracle\n");
    let mut rows = Vec::new();
    for z in 1..=10 {
        let stat = analysis::attack_catchup(&s, z, trials)?;
        let _ = writeln!(
            csv,
            "{z},{},{},{},{}",
            stat.trials, stat.successes, stat.estimate, stat.oracle
        );
        rows.push(SummaryRow::new(
            "catchup",
            format!("q={} z={z}", stat.q),
            Metric::Absolute,
            stat.oracle,
            stat.estimate,
            0.01,
        ));
    }
    Ok(output("catchup", csv, rows))
}

/// Six honest miners with 8 blocks each and an attacker with 16 blocks in
/// the history window; the attacker then mines under `identities` accounts.
pub fn sybil_scenario(a: Rational, identities: u32, seed: u64) -> Scenario {
    let mut history: BTreeMap<String, u64> = (0..6).map(|i| (format!("h{i}"), 8)).collect();
    history.insert("mallory".into(), 16);
    let mut miners: Vec<SimMiner> = (0..6).map(|i| SimMiner::honest(format!("h{i}"), 1.0)).collect();
    miners.push(SimMiner::sybil("mallory", 1.0, identities));
    Scenario::new(params(Mode::Pom, 64, a, &[100; 4]), miners, Horizon::Blocks(192), seed).with_history(vec![history])
}

fn sybil(config: &ExperimentConfig) -> Result<ExperimentOutput, SimError> {
    let alphas = [(0, 1), (1, 5), (1, 2), (4, 5), (1, 1)];
    let counts = [1u32, 2, 4, 8, 10, 16];
    let mut csv =
        String::from("alpha,identities,window,nom,members,ratio,threshold,set_mstak,majority,share,predicted_share\n");
    let mut rows = Vec::new();
    for (n, d) in alphas {
        for k in counts {
            let a = ratio(n, d);
            let report = analysis::sybil_experiment(&sybil_scenario(a.clone(), k, config.seed))?;
            let alpha = ratio::format_rational(&a);
            for r in &report.rows {
                let threshold = r.threshold.map(|t| t.to_string()).unwrap_or_else(|| "none".into());
                let _ = writeln!(
                    csv,
                    "{alpha},{k},{},{},{},{},{threshold},{},{},{},{}",
                    r.window, r.nom, r.members, r.ratio, r.set_mstak, r.majority, r.share, r.predicted_share
                );
                let p = r.predicted_share;
                let tolerance = 4.0 * (p * (1.0 - p) / 64.0).sqrt();
                rows.push(SummaryRow::new(
                    "sybil",
                    format!("a={alpha} k={k} window={} share", r.window),
                    Metric::Absolute,
                    p,
                    r.share,
                    tolerance,
                ));
                if let Some(t) = r.threshold {
                    if r.ratio >= t && r.share > 0.0 {
                        rows.push(SummaryRow::new(
                            "sybil",
                            format!("a={alpha} k={k} window={} majority", r.window),
                            Metric::Count,
                            0.0,
                            if r.majority { 0.0 } else { 1.0 },
                            0.0,
                        ));
                    }
                }
            }
        }
    }
    Ok(output("sybil", csv, rows))
}

fn retarget_demo(config: &ExperimentConfig) -> Result<ExperimentOutput, SimError> {
    let miners = (0..4).map(|i| SimMiner::honest(format!("m{i}"), 1.0)).collect();
    let s = Scenario::new(
        params(Mode::Pow, 64, ratio(1, 2), &[10]),
        miners,
        Horizon::Blocks(64 * 20),
        config.seed,
    )
    .with_retarget(10.0);
    let result = Simulator::new(&s)?.run(0)?;
    let mut csv = String::from("window,difficulty,duration,mean_interval\n");
    let mut intervals = Vec::new();
    for w in result.windows.iter().filter(|w| w.fork == ForkId::Main) {
        if let Some(t) = w.timing {
            let interval = t.duration() / 64.0;
            intervals.push(interval);
            let _ = writeln!(csv, "{},{},{},{interval}", w.window, w.difficulty, t.duration());
        }
    }
    let tail = &intervals[intervals.len().saturating_sub(6)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let rows = vec![SummaryRow::new(
        "retarget-demo",
        "mean interval over last 6 windows",
        Metric::Relative,
        10.0,
        mean,
        0.2,
    )];
    Ok(output("retarget-demo", csv, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_slice_at_half() {
        let r = majority_grid_slice(&ratio(1, 2), 10);
        assert_eq!(r.cases, 230 * 11);
        assert_eq!(r.disagreements, 0);
        assert_eq!(r.threshold_failures, 0);
        assert_eq!(r.equality_edges, 20);
    }

    #[test]
    fn fully_proportional_slice_has_no_threshold() {
        let r = majority_grid_slice(&from_u64(1), 10);
        assert_eq!(r.disagreements, 0);
        assert_eq!(r.threshold_cases, 0);
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(
            run_experiment("lemma9", &ExperimentConfig::default()),
            Err(ExperimentError::Unknown(_))
        ));
    }

    #[test]
    fn summary_csv_has_stable_header() {
        let out = run_experiment("theorem2", &ExperimentConfig::default()).unwrap();
        assert!(out.summary_csv().starts_with(SUMMARY_CSV_HEADER));
        assert!(out.passed(), "{}", out.summary_csv());
    }
}
