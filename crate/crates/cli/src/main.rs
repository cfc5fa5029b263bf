//! `pom`: mine, validate and inspect proof-of-mining chains, and run the
//! simulator's experiment recipes.
//!
//! Exit status is 0 on success or a valid chain, 1 when the domain rejects
//! the request (invalid chain, failed experiment, unsolvable target) and 2 on
//! usage or parse errors.

mod keys;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pom_core::consensus::{self, total_difficulty};
use pom_core::crypto::{Account, HashProfile, KeyPair, DEFAULT_TEST_BITS};
use pom_core::experiments::{self, ExperimentConfig, ExperimentError};
use pom_core::ledger::{
    self, decode_chain, decode_txs, encode_chain, encode_txs, Chain, ChainParams, Mode, SignedTransaction, Transaction,
};
use pom_core::miner::{self, MineOutcome, MiningJob};
use pom_core::ratio::{self, parse_rational, Rational};
use pom_core::sim::{self, RetargetRule, Scenario};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "pom", version, about = "Proof-of-mining chains and simulations")]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Production,
    Test,
}

#[derive(Args, Debug)]
struct Globals {
    /// Hash profile: 256-bit production or truncated test hash.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Width of the test hash in bits.
    #[arg(long, global = true)]
    bits: Option<u32>,
    /// Window length L in blocks.
    #[arg(long, global = true)]
    period: Option<u64>,
    /// Discrimination index a, as a decimal or p/q.
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// Comma-separated difficulty vector D_0,D_1,...
    #[arg(long, global = true)]
    difficulty: Option<String>,
    /// Target block interval for difficulty retargeting (simulations only).
    #[arg(long, global = true)]
    retarget_interval: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Output file, or output directory for experiments.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derive a key pair from a label and write it as a key file.
    Keygen {
        #[arg(long)]
        label: String,
    },
    /// Write an empty chain with the given parameters.
    Init {
        #[arg(long, value_enum, default_value = "pom")]
        mode: ModeArg,
    },
    /// Build a transaction, sign it, and append it to a transaction file.
    SignTx {
        /// Key files of the signing accounts.
        #[arg(long = "key", required = true)]
        keys: Vec<PathBuf>,
        /// `<account-hex>=<amount>`, repeated.
        #[arg(long = "entry", required = true)]
        entries: Vec<String>,
        /// Existing transaction file to extend.
        #[arg(long)]
        txs: Option<PathBuf>,
    },
    /// Mine one block onto a chain file.
    Mine {
        chain: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        txs: Option<PathBuf>,
        #[arg(long, default_value_t = 1 << 26)]
        nonce_limit: u64,
        /// Allow mining in the production profile.
        #[arg(long)]
        allow_production: bool,
    },
    /// Check a chain file against every structural and consensus rule.
    Validate { chain: PathBuf },
    /// Print a chain's parameters, blocks, stakes and balances.
    Inspect { chain: PathBuf },
    /// Run a named experiment recipe.
    Experiment { name: String },
    /// Run a scenario file and emit one CSV row per block.
    Simulate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Pow,
    Pom,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Domain(m) => eprintln!("{m}"),
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<u8> {
    let g = &cli.globals;
    match cli.command {
        Command::Keygen { label } => {
            let key = KeyPair::from_seed_label(&label);
            emit(g.out.as_deref(), &keys::encode_key(&key))?;
            if g.out.is_some() {
                println!("{}", key.account());
            }
            Ok(0)
        }
        Command::Init { mode } => {
            let params = chain_params(g, mode)?;
            emit(g.out.as_deref(), &encode_chain(&Chain::new(params)))?;
            Ok(0)
        }
        Command::SignTx { keys, entries, txs } => sign_tx(g, &keys, &entries, txs.as_deref()),
        Command::Mine {
            chain,
            key,
            txs,
            nonce_limit,
            allow_production,
        } => mine(g, &chain, &key, txs.as_deref(), nonce_limit, allow_production),
        Command::Validate { chain } => validate(&chain),
        Command::Inspect { chain } => inspect(&chain),
        Command::Experiment { name } => experiment(g, &name),
        Command::Simulate => simulate(g),
    }
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_chain(path: &Path) -> CliResult<Chain> {
    decode_chain(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn profile(g: &Globals) -> CliResult<Option<HashProfile>> {
    let p = match (g.profile, g.bits) {
        (Some(ProfileArg::Production), Some(_)) => return Err(usage("--bits applies to the test profile only")),
        (Some(ProfileArg::Production), None) => HashProfile::production(),
        (Some(ProfileArg::Test), bits) => {
            HashProfile::test(bits.unwrap_or(DEFAULT_TEST_BITS)).map_err(|e| usage(e.to_string()))?
        }
        (None, Some(bits)) => HashProfile::test(bits).map_err(|e| usage(e.to_string()))?,
        (None, None) => return Ok(None),
    };
    Ok(Some(p))
}

fn difficulty_vector(g: &Globals) -> CliResult<Option<Vec<Rational>>> {
    if g.retarget_interval.is_some() && g.difficulty.is_some() {
        return Err(usage("--retarget-interval and --difficulty are exclusive"));
    }
    g.difficulty
        .as_deref()
        .map(|list| {
            list.split(',')
                .map(|d| parse_rational(d.trim()).map_err(|e| usage(format!("--difficulty: {e}"))))
                .collect()
        })
        .transpose()
}

fn alpha(g: &Globals) -> CliResult<Option<Rational>> {
    g.alpha
        .as_deref()
        .map(|a| parse_rational(a).map_err(|e| usage(format!("--alpha: {e}"))))
        .transpose()
}

fn chain_params(g: &Globals, mode: ModeArg) -> CliResult<ChainParams> {
    if g.retarget_interval.is_some() {
        return Err(usage(
            "chains need an explicit difficulty vector; --retarget-interval is for simulations",
        ));
    }
    let mode = match mode {
        ModeArg::Pow => Mode::Pow,
        ModeArg::Pom => Mode::Pom,
    };
    ChainParams::new(
        mode,
        profile(g)?.unwrap_or_default(),
        g.period.unwrap_or(4),
        alpha(g)?.unwrap_or_else(|| ratio::ratio(1, 2)),
        difficulty_vector(g)?.unwrap_or_else(|| vec![ratio::from_u64(4)]),
    )
    .map_err(|e| usage(e.to_string()))
}

fn parse_entry(s: &str) -> CliResult<(Account, i64)> {
    let (acct, amount) = s
        .split_once('=')
        .ok_or_else(|| usage(format!("entry `{s}` is not <account>=<amount>")))?;
    let acct: Account = acct.parse().map_err(|e| usage(format!("entry `{s}`: {e}")))?;
    let amount: i64 = amount.parse().map_err(|e| usage(format!("entry `{s}`: {e}")))?;
    Ok((acct, amount))
}

fn sign_tx(g: &Globals, key_paths: &[PathBuf], entries: &[String], existing: Option<&Path>) -> CliResult<u8> {
    let keys: Vec<KeyPair> = key_paths.iter().map(|p| keys::load_key(p)).collect::<Result<_, _>>()?;
    let entries: Vec<(Account, i64)> = entries.iter().map(|e| parse_entry(e)).collect::<Result<_, _>>()?;
    let tx = Transaction::new(entries).map_err(|e| CliError::Domain(e.to_string()))?;
    let refs: Vec<&KeyPair> = keys.iter().collect();
    let stx = SignedTransaction::sign(tx, &refs).map_err(|e| CliError::Domain(e.to_string()))?;
    let mut txs = match existing {
        Some(p) => decode_txs(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    txs.push(stx);
    emit(g.out.as_deref(), &encode_txs(&txs))?;
    Ok(0)
}

fn mine(
    g: &Globals,
    chain_path: &Path,
    key_path: &Path,
    txs_path: Option<&Path>,
    nonce_limit: u64,
    allow_production: bool,
) -> CliResult<u8> {
    let mut chain = load_chain(chain_path)?;
    if chain.params.profile.is_production() && !allow_production {
        return Err(usage("mining in the production profile needs --allow-production"));
    }
    let key = keys::load_key(key_path)?;
    let txs = match txs_path {
        Some(p) => decode_txs(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    let job = MiningJob::next_block(&chain, key.account(), txs, 0, nonce_limit)
        .map_err(|e| CliError::Domain(format!("cannot mine block {}: {e}", chain.len())))?;
    if job.target.bound().is_none() {
        return Err(CliError::Domain(format!(
            "cannot mine block {}: target is zero for this miner",
            chain.len()
        )));
    }
    let outcome = miner::mine_parallel(&job).map_err(|e| CliError::Domain(format!("cannot mine: {e}")))?;
    match outcome {
        MineOutcome::Found { block, attempts } => {
            println!("block {} nonce {} attempts {attempts}", chain.len(), block.nonce);
            chain.blocks.push(block);
        }
        MineOutcome::Exhausted { attempts } => {
            return Err(CliError::Domain(format!("no nonce found in {attempts} attempts")));
        }
    }
    write(g.out.as_deref().unwrap_or(chain_path), &encode_chain(&chain))?;
    Ok(0)
}

fn validate(path: &Path) -> CliResult<u8> {
    let chain = load_chain(path)?;
    let report = consensus::validate(&chain);
    if report.is_valid() {
        println!("valid: {} blocks", chain.len());
        Ok(0)
    } else {
        print!("{report}");
        if !report.to_string().ends_with('\n') {
            println!();
        }
        Ok(1)
    }
}

fn inspect(path: &Path) -> CliResult<u8> {
    let chain = load_chain(path)?;
    let p = &chain.params;
    println!("mode {}", p.mode);
    println!("profile {}", p.profile);
    println!("period {}", p.period());
    println!("alpha {}", ratio::format_rational(p.discrimination()));
    let ds: Vec<String> = p.difficulty().iter().map(ratio::format_rational).collect();
    println!("difficulty {}", ds.join(","));
    println!("blocks {}", chain.len());
    println!("index,window,miner,hash,target,stake,txs");
    for (i, b) in chain.blocks.iter().enumerate() {
        let prefix = chain.prefix(i);
        let (target, stake) = match (
            consensus::block_target(&prefix, i as u64, &b.miner),
            consensus::block_stake(&prefix, i as u64, &b.miner),
        ) {
            (Ok(t), Ok(s)) => (
                t.bound().map(|b| b.to_string()).unwrap_or_else(|| "0".into()),
                ratio::format_rational(s.value()),
            ),
            _ => ("-".into(), "-".into()),
        };
        println!(
            "{i},{},{},{},{target},{stake},{}",
            p.window_of(i as u64),
            b.miner.short(),
            b.hash_value(&p.profile).value(),
            b.txs.len()
        );
    }
    let mut accounts: Vec<Account> = chain
        .blocks
        .iter()
        .flat_map(|b| std::iter::once(b.miner).chain(b.txs.iter().flat_map(|t| t.tx.entries().map(|(a, _)| *a))))
        .collect();
    accounts.sort();
    accounts.dedup();
    for a in accounts {
        println!("balance {} {}", a, ledger::balance_in_chain(&a, &chain.blocks));
    }
    match total_difficulty(&chain) {
        Ok(d) => println!("total-difficulty {}", ratio::format_rational(&d)),
        Err(e) => println!("total-difficulty unavailable: {e}"),
    }
    Ok(0)
}

fn experiment(g: &Globals, name: &str) -> CliResult<u8> {
    let config = ExperimentConfig {
        seed: g.seed.unwrap_or(experiments::DEFAULT_SEED),
        trials: g.trials,
    };
    let out = experiments::run_experiment(name, &config).map_err(|e| match e {
        ExperimentError::Unknown(_) => usage(format!("{e}; known: {}", experiments::EXPERIMENTS.join(", "))),
        ExperimentError::Sim(e) => CliError::Domain(e.to_string()),
    })?;
    if let Some(dir) = &g.out {
        fs::create_dir_all(dir).map_err(|e| CliError::Domain(format!("{}: {e}", dir.display())))?;
        write(&dir.join(format!("{name}-trials.csv")), &out.trials_csv)?;
        write(&dir.join(format!("{name}-summary.csv")), &out.summary_csv())?;
    }
    print!("{}", out.summary_csv());
    for note in &out.notes {
        println!("{note}");
    }
    Ok(if out.passed() { 0 } else { 1 })
}

fn simulate(g: &Globals) -> CliResult<u8> {
    let path = g
        .scenario
        .as_deref()
        .ok_or_else(|| usage("simulate needs --scenario"))?;
    let mut s = Scenario::from_toml(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(seed) = g.seed {
        s.seed = seed;
    }
    let vector = difficulty_vector(g)?;
    if g.period.is_some() || g.alpha.is_some() || vector.is_some() || profile(g)?.is_some() {
        s.params = ChainParams::new(
            s.params.mode,
            profile(g)?.unwrap_or(s.params.profile),
            g.period.unwrap_or(s.params.period()),
            alpha(g)?.unwrap_or_else(|| s.params.discrimination().clone()),
            vector.unwrap_or_else(|| s.params.difficulty().to_vec()),
        )
        .map_err(|e| usage(e.to_string()))?;
    }
    if let Some(t) = g.retarget_interval {
        s.retarget = Some(RetargetRule { target_interval: t });
    }
    s.validate().map_err(|e| usage(e.to_string()))?;
    let result = sim::run_scenario(&s).map_err(|e| CliError::Domain(e.to_string()))?;
    emit(g.out.as_deref(), &result.blocks_csv())?;
    if g.out.is_some() {
        println!("blocks {}", result.blocks.len());
        println!("end-time {}", result.end_time);
        println!("stop {:?}", result.stop);
        if let Some(a) = &result.attack {
            println!("caught-up {}", a.caught_up);
            println!("final-deficit {}", a.final_deficit);
        }
    }
    Ok(0)
}
