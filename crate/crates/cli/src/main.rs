//! `testingplus`: key management, local chain operation, queries, and
//! simulation runs. JSON and CSV go to stdout, diagnostics to stderr.
//!
//! Exit codes: 0 success (a reverted receipt included), 2 usage or input
//! error, 3 chain store corruption.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use testingplus::chain::ChainError;
use testingplus::consensus::{
    run_simulation, GenesisAccount, SimScenario, SimTrace, TimedTx, Workload,
};
use testingplus::crypto::hash_concat;
use testingplus::metrics::{analyze, run_sweep, sweep_csv, SweepSpec};
use testingplus::workflow::{audit_trail_csv, compensation_csv};
use testingplus::{
    Address, CompensationQuery, Digest, GenesisConfig, KeyFile, Keypair, LocalChain,
    PayloadRequest, PublicKey, UnsignedTransaction,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Corrupt(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Corrupt(_) => 3,
        }
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        if e.is_corruption() {
            CliError::Corrupt(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "testingplus",
    version,
    about = "Permissioned ledger for distributed software testing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an Ed25519 key file.
    Keygen {
        out: PathBuf,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
        /// Derive the key from a seed instead of system randomness.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a genesis file from key files.
    Genesis {
        #[arg(long)]
        out: PathBuf,
        /// Validator key file or public key hex; repeatable.
        #[arg(long = "validator", required = true)]
        validators: Vec<String>,
        /// `<key file or public key hex>=<balance>`; repeatable.
        #[arg(long = "account")]
        accounts: Vec<String>,
        /// 32-byte hex; derived from the validator keys when absent.
        #[arg(long)]
        chain_id: Option<Digest>,
        #[arg(long)]
        force: bool,
    },
    /// Create a single-validator chain store.
    Init {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        genesis: PathBuf,
        /// The validator's key file.
        #[arg(long)]
        key: PathBuf,
    },
    /// Sign and submit a payload request (`-` reads stdin).
    Submit {
        request: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long, required_unless_present = "queue")]
        store: Option<PathBuf>,
        /// Append to this workload file instead of applying.
        #[arg(long, conflicts_with = "store")]
        queue: Option<PathBuf>,
        /// Seeds a new queue file's accounts.
        #[arg(long, requires = "queue")]
        genesis: Option<PathBuf>,
        /// Submission tick in the queue; defaults to one after the last.
        #[arg(long, requires = "queue")]
        tick: Option<u64>,
    },
    /// Read-only queries against a chain store.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[command(subcommand)]
        selector: Selector,
    },
    /// Verify the whole store.
    Verify {
        #[arg(long)]
        store: PathBuf,
    },
    /// Content-addressed artifacts in a chain store.
    Artifact {
        #[arg(long)]
        store: PathBuf,
        #[command(subcommand)]
        action: ArtifactAction,
    },
    /// Run a simulation scenario and write its trace.
    Scenario {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the scenario's workload with this workload file.
        #[arg(long)]
        workload: Option<PathBuf>,
    },
    /// Run a parameter sweep and write the CSV table.
    Bench {
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the metrics report of a trace.
    Analyze {
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Selector {
    Head,
    Block {
        height: u64,
    },
    State,
    Case {
        id: Digest,
    },
    Audit {
        case_id: Digest,
        #[arg(long)]
        csv: bool,
    },
    Compensation {
        tester: Address,
        from: u64,
        to: u64,
        base: u64,
        bonus: u64,
        #[arg(long)]
        csv: bool,
    },
    Proof {
        block: u64,
        tx_index: u64,
    },
}

#[derive(Subcommand)]
enum ArtifactAction {
    /// Store a file; prints its digest.
    Put { file: PathBuf },
    /// Write an artifact's bytes to stdout.
    Get { digest: Digest },
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(usage)?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_input(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T) -> CliResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(usage)?;
    writeln!(out).map_err(usage)
}

fn load_key(path: &Path) -> Result<Keypair, CliError> {
    read_json::<KeyFile>(path)?
        .to_keypair()
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// A key file path or a bare public key in hex.
fn public_key_arg(s: &str) -> Result<PublicKey, CliError> {
    if let Ok(pk) = PublicKey::from_hex(s) {
        return Ok(pk);
    }
    Ok(read_json::<KeyFile>(Path::new(s))?.public_key)
}

fn keygen(out: &Path, force: bool, seed: Option<u64>) -> CliResult {
    if out.exists() && !force {
        return Err(usage(format!(
            "{} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let kp = match seed {
        Some(s) => Keypair::derive("testingplus/keygen", s, 0),
        None => Keypair::generate(&mut rand::rngs::OsRng),
    };
    let file = KeyFile::from_keypair(&kp);
    let mut text = serde_json::to_string_pretty(&file).map_err(usage)?;
    text.push('\n');
    write_file(out, text.as_bytes())?;
    emit(&serde_json::json!({
        "address": file.address,
        "public_key": file.public_key,
        "path": out,
    }))
}

fn genesis(
    out: &Path,
    validators: &[String],
    accounts: &[String],
    chain_id: Option<Digest>,
    force: bool,
) -> CliResult {
    if out.exists() && !force {
        return Err(usage(format!(
            "{} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let validators = validators
        .iter()
        .map(|v| public_key_arg(v))
        .collect::<Result<Vec<_>, _>>()?;
    let accounts = accounts
        .iter()
        .map(|a| {
            let (key, balance) = a
                .rsplit_once('=')
                .ok_or_else(|| usage(format!("account {a:?} is not <key>=<balance>")))?;
            Ok(GenesisAccount {
                public_key: public_key_arg(key)?,
                balance: balance
                    .parse()
                    .map_err(|_| usage(format!("bad balance in {a:?}")))?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let chain_id = chain_id.unwrap_or_else(|| {
        let mut parts: Vec<&[u8]> = vec![b"tp/chain"];
        parts.extend(validators.iter().map(|v| &v.as_bytes()[..]));
        hash_concat(&parts)
    });
    let cfg = GenesisConfig {
        chain_id,
        validators,
        accounts,
        empty_block_interval: 50,
        timeout_ticks: 10,
    };
    cfg.validate().map_err(usage)?;
    let mut text = serde_json::to_string_pretty(&cfg).map_err(usage)?;
    text.push('\n');
    write_file(out, text.as_bytes())?;
    emit(&cfg)
}

fn init(store: &Path, genesis: &Path, key: &Path) -> CliResult {
    let cfg: GenesisConfig = read_json(genesis)?;
    let kp = load_key(key)?;
    let chain = LocalChain::init(store, cfg, &kp)?;
    let g = &chain.blocks()[0];
    emit(&serde_json::json!({
        "store": store,
        "chain_id": chain.genesis().chain_id,
        "genesis_hash": g.hash(),
        "state_root": g.header.state_root,
    }))
}

fn submit_direct(store: &Path, key: &Keypair, req: PayloadRequest) -> CliResult {
    let mut chain = LocalChain::open(store)?;
    let tx = chain.sign_request(key, req);
    let receipt = chain.submit(tx)?;
    emit(&receipt)
}

fn submit_queue(
    queue: &Path,
    genesis: Option<&Path>,
    tick: Option<u64>,
    key: &Keypair,
    req: PayloadRequest,
) -> CliResult {
    let (accounts, mut txs) = if queue.exists() {
        match read_json::<Workload>(queue)? {
            Workload::Explicit { accounts, txs } => (accounts, txs),
            Workload::Generated { .. } => {
                return Err(usage(format!(
                    "{} is a generated workload",
                    queue.display()
                )))
            }
        }
    } else {
        let g = genesis.ok_or_else(|| usage("a new queue needs --genesis for its accounts"))?;
        (read_json::<GenesisConfig>(g)?.accounts, Vec::new())
    };
    if !accounts.iter().any(|a| a.public_key == key.public_key()) {
        return Err(usage(format!("{} is not a queue account", key.address())));
    }
    let nonce = req
        .nonce
        .unwrap_or_else(|| txs.iter().filter(|t| t.tx.sender == key.address()).count() as u64);
    let tick = tick.unwrap_or_else(|| txs.last().map_or(1, |t| t.tick + 1));
    let tx = UnsignedTransaction::new(key.address(), nonce, req.payload, req.value)
        .sign(key)
        .map_err(usage)?;
    let hash = tx.hash();
    txs.push(TimedTx { tick, tx });
    let len = txs.len();
    let mut text =
        serde_json::to_string_pretty(&Workload::Explicit { accounts, txs }).map_err(usage)?;
    text.push('\n');
    write_file(queue, text.as_bytes())?;
    emit(&serde_json::json!({
        "queued": hash,
        "nonce": nonce,
        "tick": tick,
        "queue_len": len,
    }))
}

fn query(store: &Path, selector: Selector) -> CliResult {
    let chain = LocalChain::open(store)?;
    match selector {
        Selector::Head => {
            let head = chain.blocks().last().expect("genesis");
            emit(&serde_json::json!({
                "height": chain.height(),
                "hash": head.hash(),
                "state_root": head.header.state_root,
            }))
        }
        Selector::Block { height } => emit(chain.block(height)?),
        Selector::State => emit(chain.state()),
        Selector::Case { id } => emit(&chain.case(&id)?),
        Selector::Audit { case_id, csv } => {
            let trail = chain.audit(&case_id)?;
            if csv {
                print!("{}", audit_trail_csv(&trail).map_err(usage)?);
                Ok(())
            } else {
                emit(&trail)
            }
        }
        Selector::Compensation {
            tester,
            from,
            to,
            base,
            bonus,
            csv,
        } => {
            let st = chain.compensation(&CompensationQuery {
                tester,
                from_height: from,
                to_height: to,
                base_rate: base,
                bonus_rate: bonus,
            })?;
            if csv {
                print!("{}", compensation_csv(&[st]).map_err(usage)?);
                Ok(())
            } else {
                emit(&st)
            }
        }
        Selector::Proof { block, tx_index } => emit(&chain.proof(block, tx_index)?),
    }
}

fn artifact(store: &Path, action: ArtifactAction) -> CliResult {
    let chain = LocalChain::open(store)?;
    let arts = chain.artifacts()?;
    match action {
        ArtifactAction::Put { file } => {
            let bytes = fs::read(&file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
            let digest = arts.put(&bytes).map_err(usage)?;
            emit(&serde_json::json!({ "digest": digest, "bytes": bytes.len() }))
        }
        ArtifactAction::Get { digest } => {
            let bytes = arts.get(&digest).map_err(|e| match e {
                testingplus::workflow::ArtifactError::Corrupt { .. } => {
                    CliError::Corrupt(e.to_string())
                }
                other => usage(other),
            })?;
            io::stdout().lock().write_all(&bytes).map_err(usage)
        }
    }
}

fn scenario(path: &Path, out: &Path, workload: Option<&Path>) -> CliResult {
    let mut sc: SimScenario = read_json(path)?;
    if let Some(w) = workload {
        sc.workload = read_json(w)?;
    }
    let outcome = run_simulation(&sc).map_err(usage)?;
    write_file(out, outcome.trace.to_ndjson().as_bytes())?;
    let report = analyze(&outcome.trace).map_err(usage)?;
    if outcome.truncated {
        eprintln!("warning: run truncated at max_ticks {}", sc.max_ticks);
    }
    emit(&serde_json::json!({
        "trace": out,
        "truncated": outcome.truncated,
        "conflicts": outcome.conflicts.len(),
        "end_tick": report.end_tick,
        "submitted": report.submitted,
        "committed": report.committed,
    }))
}

fn bench(path: &Path, out: &Path) -> CliResult {
    let spec: SweepSpec = read_json(path)?;
    let rows = run_sweep(&spec).map_err(usage)?;
    write_file(out, sweep_csv(&rows).as_bytes())?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    emit(&serde_json::json!({ "csv": out, "rows": rows.len(), "not_ok": failed }))
}

fn analyze_cmd(path: &Path, out: Option<&Path>) -> CliResult {
    let trace = SimTrace::from_ndjson(&read_input(path)?)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let report = analyze(&trace).map_err(usage)?;
    match out {
        Some(o) => {
            let mut text = serde_json::to_string_pretty(&report).map_err(usage)?;
            text.push('\n');
            write_file(o, text.as_bytes())
        }
        None => emit(&report),
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Keygen { out, force, seed } => keygen(&out, force, seed),
        Command::Genesis {
            out,
            validators,
            accounts,
            chain_id,
            force,
        } => genesis(&out, &validators, &accounts, chain_id, force),
        Command::Init {
            store,
            genesis,
            key,
        } => init(&store, &genesis, &key),
        Command::Submit {
            request,
            key,
            store,
            queue,
            genesis,
            tick,
        } => {
            let req: PayloadRequest = read_json(&request)?;
            let kp = load_key(&key)?;
            match (store, queue) {
                (_, Some(q)) => submit_queue(&q, genesis.as_deref(), tick, &kp, req),
                (Some(s), None) => submit_direct(&s, &kp, req),
                (None, None) => Err(usage("need --store or --queue")),
            }
        }
        Command::Query { store, selector } => query(&store, selector),
        Command::Verify { store } => {
            let chain = LocalChain::open(&store)?;
            emit(&serde_json::json!({ "ok": true, "height": chain.height() }))
        }
        Command::Artifact { store, action } => artifact(&store, action),
        Command::Scenario {
            scenario: s,
            out,
            workload,
        } => scenario(&s, &out, workload.as_deref()),
        Command::Bench { sweep, out } => bench(&sweep, &out),
        Command::Analyze { trace, out } => analyze_cmd(&trace, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
