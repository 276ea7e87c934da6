//! Command surface. Each command is a thin composition of library calls and
//! returns its output and exit status instead of printing, so the binary and
//! the tests share one code path.
//!
//! Exit status: 0 success, 1 validation or verification failure, 2 usage
//! error.

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::blockpipe::{genesis, BlockMiner, BlockThreshold};
use crate::crypto::{decode_hex, generate_keypair, KeyPair, PrivateKey, PublicKey};
use crate::geoalert::{classify, AlertLevel, GeoPoint, DEFAULT_NEAR_MARGIN_M};
use crate::ledger::NodeLedger;
use crate::roles::{Role, RoleRegistry};
use crate::simnet::{Scenario, Simulation};
use crate::txmodel::{make_individual_tx, make_location_tx, CovidStatus, EpidRecord, RecordTime, Transaction, ZoneType};
use crate::verifypass::{run_exchange, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "covidchain", version, about = "Permissioned health-status ledger")]
pub struct Cli {
    /// Ledger file.
    #[arg(long, global = true, default_value = "covidchain.ledger")]
    pub ledger: PathBuf,
    /// Role registry file (`role|hex(pub)|keyfile` lines).
    #[arg(long, global = true, default_value = "covidchain.roles")]
    pub roles: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OutputMode::Plain)]
    pub output: OutputMode,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputMode {
    Plain,
    Machine,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive a key pair from a 32-byte hex seed; prints the key file.
    Keygen {
        #[arg(long)]
        seed: String,
        /// Also write the key file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Manage the role registry.
    #[command(subcommand)]
    Roles(RolesCmd),
    /// Record an individual's test result.
    SubmitTest(SubmitTestArgs),
    /// Declare a red/orange/green zone.
    SubmitZone(SubmitZoneArgs),
    /// Seal all pending transactions into a block.
    Mine {
        /// Seed for validator selection; fresh entropy if omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the pass exchange: the verifier checks the subject's status.
    VerifyPass {
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        verifier: PathBuf,
    },
    /// Effective status for a public key.
    QueryStatus {
        #[arg(long = "pub")]
        public: String,
    },
    /// Zone alerts for a position.
    Alert {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        #[arg(long, default_value_t = DEFAULT_NEAR_MARGIN_M)]
        margin: f64,
    },
    /// Deterministic multi-node simulation.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Create or check the ledger file.
    #[command(subcommand)]
    Chain(ChainCmd),
}

#[derive(Debug, Subcommand)]
pub enum RolesCmd {
    /// Register a key file under a role.
    Add {
        #[arg(long)]
        role: String,
        #[arg(long)]
        key: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCmd {
    /// Run a scenario script and print its report.
    Run {
        script: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ChainCmd {
    /// Create the genesis ledger from the role registry.
    Init,
    /// Check every link, Merkle root and signature.
    Validate,
}

#[derive(Debug, Args)]
pub struct SubmitTestArgs {
    #[arg(long)]
    pub subject_pub: String,
    #[arg(long, allow_hyphen_values = true)]
    pub status: String,
    /// `age=<n>;gender=<t>;blood=<t>;state=<t>;cond=<t1,...>`
    #[arg(long)]
    pub epid: String,
    #[arg(long)]
    pub signer: PathBuf,
    #[arg(long)]
    pub date: Option<String>,
    #[arg(long)]
    pub time: Option<String>,
}

#[derive(Debug, Args)]
pub struct SubmitZoneArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lon: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub radius: i64,
    #[arg(long = "type")]
    pub zone_type: String,
    #[arg(long)]
    pub signer: PathBuf,
    #[arg(long)]
    pub date: Option<String>,
    #[arg(long)]
    pub time: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmdOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CmdOutput {
    fn ok(stdout: String) -> Self {
        CmdOutput { code: EXIT_OK, stdout, stderr: String::new() }
    }

    fn fail(stdout: String) -> Self {
        CmdOutput { code: EXIT_FAIL, stdout, stderr: String::new() }
    }
}

enum CliError {
    Usage(String),
    Failure(String),
}

type CmdResult = Result<CmdOutput, CliError>;

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

fn failure(e: impl ToString) -> CliError {
    CliError::Failure(e.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> CmdOutput
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                CmdOutput::ok(text)
            } else {
                CmdOutput { code, stdout: String::new(), stderr: text }
            }
        }
    }
}

pub fn run(cli: &Cli) -> CmdOutput {
    let result = match &cli.command {
        Command::Keygen { seed, out } => keygen(seed, out.as_deref()),
        Command::Roles(RolesCmd::Add { role, key }) => roles_add(cli, role, key),
        Command::SubmitTest(a) => submit_test(cli, a),
        Command::SubmitZone(a) => submit_zone(cli, a),
        Command::Mine { seed } => mine(cli, *seed),
        Command::VerifyPass { subject, verifier } => verify_pass(cli, subject, verifier),
        Command::QueryStatus { public } => query_status(cli, public),
        Command::Alert { lat, lon, margin } => alert(cli, *lat, *lon, *margin),
        Command::Scenario(ScenarioCmd::Run { script, seed, report }) => {
            scenario_run(script, *seed, report.as_deref())
        }
        Command::Chain(ChainCmd::Init) => chain_init(cli),
        Command::Chain(ChainCmd::Validate) => chain_validate(cli),
    };
    match result {
        Ok(out) => out,
        Err(CliError::Usage(msg)) => {
            CmdOutput { code: EXIT_USAGE, stdout: String::new(), stderr: format!("error: {msg}\n") }
        }
        Err(CliError::Failure(msg)) => {
            CmdOutput { code: EXIT_FAIL, stdout: String::new(), stderr: format!("error: {msg}\n") }
        }
    }
}

/// Key file: public key hex on the first line, private key hex on the second.
pub fn keyfile_text(kp: &KeyPair) -> String {
    format!("{}\n{}\n", kp.public().to_hex(), kp.private().to_hex())
}

pub fn read_keyfile(path: &Path) -> Result<KeyPair, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let (Some(public), Some(private)) = (lines.next(), lines.next()) else {
        return Err(format!("{}: key file needs two hex lines", path.display()));
    };
    let private = PrivateKey::from_hex(private.trim()).map_err(|e| e.to_string())?;
    let kp = KeyPair::from_private(private);
    if kp.public().to_hex() != public.trim() {
        return Err(format!("{}: public key does not match private key", path.display()));
    }
    Ok(kp)
}

/// Holds an exclusive lock on `<ledger>.lock` for the life of the guard.
struct LedgerLock(#[allow(dead_code)] File);

fn lock_ledger(ledger: &Path) -> Result<LedgerLock, CliError> {
    let path = sidecar(ledger, "lock");
    let f = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(|e| failure(format!("{}: {e}", path.display())))?;
    f.try_lock().map_err(|_| failure(format!("ledger {} is locked by another process", ledger.display())))?;
    Ok(LedgerLock(f))
}

fn sidecar(ledger: &Path, ext: &str) -> PathBuf {
    let mut s = ledger.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn load_ledger(cli: &Cli) -> Result<NodeLedger, CliError> {
    NodeLedger::load(&cli.ledger).map_err(|e| failure(format!("{}: {e}", cli.ledger.display())))
}

fn load_roles(cli: &Cli) -> Result<(RoleRegistry, Vec<(Role, PathBuf)>), CliError> {
    let text = fs::read_to_string(&cli.roles).map_err(|e| failure(format!("{}: {e}", cli.roles.display())))?;
    let reg = RoleRegistry::parse(&text).map_err(failure)?;
    let keyfiles = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .filter_map(|l| {
            let mut f = l.trim().split('|');
            let role = f.next()?.parse().ok()?;
            let _ = f.next()?;
            f.next().filter(|p| !p.is_empty()).map(|p| (role, PathBuf::from(p)))
        })
        .collect();
    Ok((reg, keyfiles))
}

fn keys_for(keyfiles: &[(Role, PathBuf)], role: Role) -> Result<Vec<KeyPair>, CliError> {
    keyfiles
        .iter()
        .filter(|(r, _)| *r == role)
        .map(|(_, p)| read_keyfile(p).map_err(failure))
        .collect()
}

fn keygen(seed: &str, out: Option<&Path>) -> CmdResult {
    let bytes = decode_hex(seed).map_err(usage)?;
    let kp = generate_keypair(&bytes).map_err(usage)?;
    let text = keyfile_text(&kp);
    if let Some(p) = out {
        fs::write(p, &text).map_err(|e| failure(format!("{}: {e}", p.display())))?;
    }
    Ok(CmdOutput::ok(text))
}

fn roles_add(cli: &Cli, role: &str, key: &Path) -> CmdResult {
    let role: Role = role.parse().map_err(usage)?;
    let kp = read_keyfile(key).map_err(failure)?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&cli.roles)
        .map_err(|e| failure(format!("{}: {e}", cli.roles.display())))?;
    let line = format!("{role}|{}|{}\n", kp.public().to_hex(), key.display());
    f.write_all(line.as_bytes()).map_err(failure)?;
    Ok(CmdOutput::ok(line))
}

fn chain_init(cli: &Cli) -> CmdResult {
    let _lock = lock_ledger(&cli.ledger)?;
    if cli.ledger.exists() {
        return Err(failure(format!("{} already exists", cli.ledger.display())));
    }
    let (_, keyfiles) = load_roles(cli)?;
    let miner = keys_for(&keyfiles, Role::Miner)?;
    let validators = keys_for(&keyfiles, Role::Validator)?;
    let (Some(miner), [v1, v2, ..]) = (miner.first(), validators.as_slice()) else {
        return Err(failure("registry needs a miner and two validators with key files"));
    };
    let now = Utc::now().naive_utc();
    let g = genesis(RecordTime::new(now.date(), now.time()), miner, v1, v2);
    let ledger = NodeLedger::new(g).map_err(failure)?;
    ledger.save(&cli.ledger).map_err(failure)?;
    Ok(CmdOutput::ok(format!("OK height={}\n", ledger.height())))
}

fn chain_validate(cli: &Cli) -> CmdResult {
    let ledger = load_ledger(cli)?;
    Ok(match ledger.validate_chain() {
        Ok(h) => CmdOutput::ok(format!("OK height={h}\n")),
        Err(f) => CmdOutput::fail(format!("FAIL height={} reason={}\n", f.height, f.reason)),
    })
}

fn record_time(date: &Option<String>, time: &Option<String>) -> Result<RecordTime, CliError> {
    match (date, time) {
        (Some(d), Some(t)) => RecordTime::parse(d, t).map_err(usage),
        (None, None) => {
            let now = Utc::now().naive_utc();
            Ok(RecordTime::new(now.date(), now.time()))
        }
        _ => Err(usage("--date and --time must be given together")),
    }
}

/// Admits `tx` to the pending pool stored next to the ledger.
fn enqueue(cli: &Cli, reg: RoleRegistry, signer: KeyPair, tx: Transaction) -> CmdResult {
    let _lock = lock_ledger(&cli.ledger)?;
    let pool_path = sidecar(&cli.ledger, "pool");
    let mut miner = BlockMiner::new(signer, reg, BlockThreshold::Count(usize::MAX));
    let existing = fs::read_to_string(&pool_path).unwrap_or_default();
    for (i, line) in existing.lines().enumerate() {
        let old = Transaction::parse_line(line)
            .map_err(|e| failure(format!("{}:{}: {e}", pool_path.display(), i + 1)))?;
        miner.submit(old).map_err(failure)?;
    }
    let line = tx.to_line();
    let tid = tx.tid().to_hex();
    if let Err(e) = miner.submit(tx) {
        return Ok(CmdOutput::fail(format!("REJECTED {e}\n")));
    }
    let mut f = OpenOptions::new().create(true).append(true).open(&pool_path).map_err(failure)?;
    writeln!(f, "{line}").map_err(failure)?;
    Ok(CmdOutput::ok(format!("ACCEPTED tid={tid}\n")))
}

fn submit_test(cli: &Cli, a: &SubmitTestArgs) -> CmdResult {
    let subject = PublicKey::from_hex(&a.subject_pub).map_err(usage)?;
    let status: CovidStatus = a.status.parse().map_err(usage)?;
    let epid = EpidRecord::parse(&a.epid).map_err(usage)?;
    let at = record_time(&a.date, &a.time)?;
    let signer = read_keyfile(&a.signer).map_err(failure)?;
    let (reg, _) = load_roles(cli)?;
    let ca = reg
        .keys_with(Role::CentralAuthority)
        .first()
        .copied()
        .ok_or_else(|| failure("registry has no central-authority key"))?;
    let tx = make_individual_tx(&subject, status, at, &epid, &ca, &signer, &mut rand::rngs::OsRng)
        .map_err(failure)?;
    enqueue(cli, reg, signer, tx.into())
}

fn submit_zone(cli: &Cli, a: &SubmitZoneArgs) -> CmdResult {
    let zone_type: ZoneType = a.zone_type.parse().map_err(usage)?;
    let at = record_time(&a.date, &a.time)?;
    let signer = read_keyfile(&a.signer).map_err(failure)?;
    let (reg, _) = load_roles(cli)?;
    let tx = make_location_tx(a.lat, a.lon, a.radius, at, zone_type, &signer).map_err(usage)?;
    enqueue(cli, reg, signer, tx.into())
}

fn mine(cli: &Cli, seed: Option<u64>) -> CmdResult {
    let _lock = lock_ledger(&cli.ledger)?;
    let mut ledger = load_ledger(cli)?;
    let (reg, keyfiles) = load_roles(cli)?;
    let miner_keys = keys_for(&keyfiles, Role::Miner)?
        .into_iter()
        .next()
        .ok_or_else(|| failure("registry has no miner key file"))?;
    let validators = keys_for(&keyfiles, Role::Validator)?;
    let pool_path = sidecar(&cli.ledger, "pool");
    let mut miner = BlockMiner::new(miner_keys, reg, BlockThreshold::Count(usize::MAX));
    let pool = fs::read_to_string(&pool_path).unwrap_or_default();
    for line in pool.lines() {
        let tx = Transaction::parse_line(line).map_err(failure)?;
        miner.submit(tx).map_err(failure)?;
    }
    let txs = miner.drain_all();
    if txs.is_empty() {
        return Ok(CmdOutput::fail("nothing to mine\n".into()));
    }
    let n = txs.len();
    let now = Utc::now().naive_utc();
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    };
    let block = miner
        .mine(txs, ledger.tip(), RecordTime::new(now.date(), now.time()))
        .and_then(|m| miner.seal_with(m, &validators, &mut rng))
        .map_err(failure)?;
    let mrh = block.header.merkle_root.to_hex();
    ledger.append_block(block).map_err(failure)?;
    ledger.save(&cli.ledger).map_err(failure)?;
    fs::write(&pool_path, "").map_err(failure)?;
    Ok(CmdOutput::ok(format!("SEALED height={} txs={n} mrh={mrh}\n", ledger.height())))
}

fn verify_pass(cli: &Cli, subject: &Path, verifier: &Path) -> CmdResult {
    let subject = read_keyfile(subject).map_err(failure)?;
    // the verifier only needs the ledger; its key file identifies who asked
    read_keyfile(verifier).map_err(failure)?;
    let ledger = load_ledger(cli)?;
    let ex = run_exchange(&ledger, &subject, &mut ChaCha20Rng::from_entropy(), Utc::now().naive_utc());
    let mut out = String::new();
    match cli.output {
        OutputMode::Machine => {
            for f in &ex.frames {
                out.push_str(&f.to_string());
                out.push('\n');
            }
        }
        OutputMode::Plain => {
            out = format!("{} {}\n", ex.decision.verdict, ex.decision.reason);
        }
    }
    Ok(if ex.decision.verdict == Verdict::Allow { CmdOutput::ok(out) } else { CmdOutput::fail(out) })
}

fn query_status(cli: &Cli, public: &str) -> CmdResult {
    let key = PublicKey::from_hex(public).map_err(usage)?;
    let ledger = load_ledger(cli)?;
    let r = ledger.query_status(&key);
    Ok(CmdOutput::ok(format!("{}\n", r.to_line(&key.fingerprint()))))
}

fn alert(cli: &Cli, lat: f64, lon: f64, margin: f64) -> CmdResult {
    let pos = GeoPoint::new(lat, lon).ok_or_else(|| usage("position out of range"))?;
    if margin.is_nan() || margin < 0.0 {
        return Err(usage("--margin must be non-negative"));
    }
    let ledger = load_ledger(cli)?;
    let out: String = classify(pos, &ledger.active_zones(), margin)
        .into_iter()
        .filter(|a| a.level != AlertLevel::Clear)
        .map(|a| format!("{}\n", a.to_line()))
        .collect();
    Ok(CmdOutput::ok(out))
}

fn scenario_run(script: &Path, seed: u64, report: Option<&Path>) -> CmdResult {
    let text = fs::read_to_string(script).map_err(|e| failure(format!("{}: {e}", script.display())))?;
    let sc = Scenario::parse(&text).map_err(usage)?;
    let mut sim = Simulation::new(sc.config(seed)).map_err(usage)?;
    let r = sim.run(&sc.events).map_err(usage)?;
    let text = r.to_text();
    if let Some(p) = report {
        fs::write(p, &text).map_err(failure)?;
    }
    Ok(if r.divergence { CmdOutput::fail(text) } else { CmdOutput::ok(text) })
}
