//! `bepac` command dispatch.
//!
//! Every subcommand parses its flags, loads the scheme and key files, calls
//! into `bepac-core` and prints `key=value` lines. Exit status is 0 on
//! success, 1 on domain failures (invalid code, exhausted ledger, failed
//! check) and 2 on usage errors.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use bepac_core::randcheck::{code_stream, monobit, serial_pairs};
use bepac_core::{
    plan_scheme, run_demo, Alphabet, Codebook, KeySet, Ledger, MasterKey, RedeemOutcome,
    SchemeConfig, VerifyOutcome,
};
use clap::{ArgGroup, Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bepac",
    version,
    about = "Plan, issue, verify and redeem activation codes"
)]
pub struct Cli {
    /// Scheme file written by `plan --out`.
    #[arg(long, global = true, env = "BEPAC_SCHEME")]
    scheme: Option<PathBuf>,

    /// Master key file written by `keygen`.
    #[arg(long, global = true, env = "BEPAC_KEY")]
    key: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Choose valid scheme parameters.
    Plan(PlanArgs),
    /// Write a fresh random master key.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Create an empty redemption ledger for the scheme.
    InitLedger {
        #[arg(long, env = "BEPAC_LEDGER")]
        ledger: PathBuf,
    },
    /// Generate codes by index, or issue the next ones from a ledger.
    Gen(GenArgs),
    /// Check a code without touching any ledger.
    Verify { code: String },
    /// Verify a code and mark it redeemed.
    Redeem {
        code: String,
        #[arg(long, env = "BEPAC_LEDGER")]
        ledger: PathBuf,
        /// Reject codes whose index has not been issued yet.
        #[arg(long)]
        strict: bool,
    },
    /// Recover a random 3-round network by chosen plaintexts.
    AttackDemo {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        seed: u64,
        /// Monte-Carlo trials for the ambiguity estimate.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
    },
    /// Randomness smoke tests over the first `count` codes.
    Stats {
        #[arg(long)]
        count: u64,
        /// Hex master key to use instead of the key file.
        #[arg(long)]
        seed_key: Option<String>,
    },
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    alphabet_size: u32,
    #[arg(long)]
    codes: u64,
    #[arg(long)]
    guess: u64,
    /// Alphabet characters; defaults exist for sizes 10 and 31.
    #[arg(long)]
    alphabet: Option<String>,
    #[arg(long, default_value_t = SchemeConfig::MIN_ROUNDS)]
    rounds: u8,
    /// Write the scheme file here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("which").required(true).args(["index", "count"])))]
struct GenArgs {
    #[arg(long, conflicts_with = "ledger")]
    index: Option<u64>,
    #[arg(long)]
    count: Option<u64>,
    /// Issue through this ledger instead of starting at index 0.
    #[arg(long, env = "BEPAC_LEDGER")]
    ledger: Option<PathBuf>,
    /// Insert a hyphen every `group` characters.
    #[arg(long)]
    group: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl Failure {
    fn domain(e: impl std::fmt::Display) -> Self {
        Failure::Domain(e.to_string())
    }
}

type CmdResult = Result<i32, Failure>;

/// Runs one invocation; `args` includes the program name.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Domain(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_DOMAIN
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Plan(args) => plan(args, out),
        Command::Keygen { out: path } => keygen(path, out),
        Command::InitLedger { ledger } => {
            let (config, keys) = load(cli)?;
            Ledger::create(ledger, &config, &keys).map_err(Failure::domain)?;
            emit(
                out,
                format_args!(
                    "ledger={} codes={}",
                    ledger.display(),
                    config.params.num_codes
                ),
            )
        }
        Command::Gen(args) => gen(cli, args, out),
        Command::Verify { code } => {
            let (config, keys) = load(cli)?;
            let book = Codebook::from_config(&config, &keys).map_err(Failure::domain)?;
            match book.verify_str(code).map_err(Failure::domain)? {
                VerifyOutcome::Valid(i) => emit(out, format_args!("VALID index={i}")),
                VerifyOutcome::Invalid => emit(out, format_args!("INVALID")).map(|_| EXIT_DOMAIN),
            }
        }
        Command::Redeem {
            code,
            ledger,
            strict,
        } => {
            let (config, keys) = load(cli)?;
            let book = Codebook::from_config(&config, &keys).map_err(Failure::domain)?;
            let mut ledger = Ledger::open(ledger, &config, &keys).map_err(Failure::domain)?;
            ledger.set_strict(*strict);
            let (line, status) = match ledger.redeem(&book, code).map_err(Failure::domain)? {
                RedeemOutcome::Redeemed(i) => (format!("REDEEMED index={i}"), EXIT_OK),
                RedeemOutcome::AlreadyUsed(i) => (format!("ALREADY_USED index={i}"), EXIT_DOMAIN),
                RedeemOutcome::NotYetIssued(i) => {
                    (format!("NOT_YET_ISSUED index={i}"), EXIT_DOMAIN)
                }
                RedeemOutcome::Invalid => ("INVALID".to_string(), EXIT_DOMAIN),
            };
            emit(out, format_args!("{line}")).map(|_| status)
        }
        Command::AttackDemo { k, seed, trials } => attack_demo(*k, *seed, *trials, out),
        Command::Stats { count, seed_key } => stats(cli, *count, seed_key.as_deref(), out),
    }
}

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> CmdResult {
    writeln!(out, "{line}").map_err(Failure::domain)?;
    Ok(EXIT_OK)
}

fn plan(args: &PlanArgs, out: &mut dyn Write) -> CmdResult {
    let params =
        plan_scheme(args.alphabet_size, args.codes, args.guess).map_err(Failure::domain)?;
    if let Some(path) = &args.out {
        let alphabet = match &args.alphabet {
            Some(chars) => Alphabet::new(chars).map_err(Failure::domain)?,
            None => Alphabet::default_for(args.alphabet_size).ok_or_else(|| {
                Failure::Usage(format!(
                    "no default alphabet of size {}; pass --alphabet",
                    args.alphabet_size
                ))
            })?,
        };
        let config = SchemeConfig::new(params, alphabet, args.rounds).map_err(Failure::domain)?;
        write_new(path, config.to_config_string().as_bytes())?;
    }
    emit(
        out,
        format_args!("{params} length={}", params.code_length()),
    )
}

fn keygen(path: &Path, out: &mut dyn Write) -> CmdResult {
    let key = MasterKey::generate();
    write_new(path, format!("{}\n", key.to_hex()).as_bytes())?;
    emit(out, format_args!("key={}", path.display()))
}

/// Creates `path`, refusing to overwrite; key files get mode 0600 on Unix.
fn write_new(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut options = OpenOptions::new();
    options.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options
        .open(path)
        .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    file.write_all(bytes)
        .and_then(|_| file.sync_all())
        .map_err(Failure::domain)
}

fn load_config(cli: &Cli) -> Result<SchemeConfig, Failure> {
    let path = cli
        .scheme
        .as_ref()
        .ok_or_else(|| Failure::Usage("--scheme (or BEPAC_SCHEME) is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    text.parse()
        .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn load_master(cli: &Cli) -> Result<MasterKey, Failure> {
    let path = cli
        .key
        .as_ref()
        .ok_or_else(|| Failure::Usage("--key (or BEPAC_KEY) is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    MasterKey::from_hex(&text).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn load(cli: &Cli) -> Result<(SchemeConfig, KeySet), Failure> {
    let config = load_config(cli)?;
    let keys = KeySet::derive(&load_master(cli)?, config.rounds.into()).map_err(Failure::domain)?;
    Ok((config, keys))
}

fn gen(cli: &Cli, args: &GenArgs, out: &mut dyn Write) -> CmdResult {
    let (config, keys) = load(cli)?;
    let book = Codebook::from_config(&config, &keys).map_err(Failure::domain)?;
    let show = |code: &bepac_core::ActivationCode| match args.group {
        Some(n) if n > 0 => code.grouped(n),
        _ => code.text().to_string(),
    };
    if let Some(i) = args.index {
        let code = book.generate(i).map_err(Failure::domain)?;
        return emit(out, format_args!("index={i} code={}", show(&code)));
    }
    let count = args.count.unwrap_or(0);
    match &args.ledger {
        Some(path) => {
            let mut ledger = Ledger::open(path, &config, &keys).map_err(Failure::domain)?;
            for _ in 0..count {
                let (i, code) = ledger.issue_next(&book).map_err(Failure::domain)?;
                emit(out, format_args!("index={i} code={}", show(&code)))?;
            }
        }
        None => {
            for i in 0..count {
                let code = book.generate(i).map_err(Failure::domain)?;
                emit(out, format_args!("index={i} code={}", show(&code)))?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn attack_demo(k: u64, seed: u64, trials: u64, out: &mut dyn Write) -> CmdResult {
    let report = run_demo(k, seed, trials).map_err(Failure::domain)?;
    let verdict = if report.equivalent { "OK" } else { "FAIL" };
    emit(
        out,
        format_args!(
            "k={} queries={} bound={} equivalence={verdict}",
            report.k, report.queries_used, report.bound
        ),
    )?;
    let histogram: Vec<String> = report
        .retry_histogram
        .iter()
        .enumerate()
        .filter(|(_, n)| **n > 0)
        .map(|(extra, n)| format!("{extra}:{n}"))
        .collect();
    emit(out, format_args!("retry_histogram={}", histogram.join(",")))?;
    emit(
        out,
        format_args!(
            "ambiguity m=1 predicted={:.6} observed={:.6} trials={}",
            report.predicted_ambiguity, report.observed_ambiguity, report.trials
        ),
    )?;
    Ok(
        if report.equivalent && report.queries_used <= report.bound {
            EXIT_OK
        } else {
            EXIT_DOMAIN
        },
    )
}

fn stats(cli: &Cli, count: u64, seed_key: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let config = load_config(cli)?;
    let master = match seed_key {
        Some(hex) => MasterKey::from_hex(hex).map_err(Failure::domain)?,
        None => load_master(cli)?,
    };
    let keys = KeySet::derive(&master, config.rounds.into()).map_err(Failure::domain)?;
    let book = Codebook::from_config(&config, &keys).map_err(Failure::domain)?;
    let stream = code_stream(&book, count).map_err(Failure::domain)?;
    let mut status = EXIT_OK;
    for (name, outcome) in [
        ("monobit", monobit(&stream)),
        ("serial", serial_pairs(&stream)),
    ] {
        let outcome = outcome.map_err(Failure::domain)?;
        if !outcome.pass {
            status = EXIT_DOMAIN;
        }
        emit(
            out,
            format_args!(
                "test={name} bits={} statistic={:.6} p_value={:.6} pass={}",
                stream.len(),
                outcome.statistic,
                outcome.p_value,
                outcome.pass
            ),
        )?;
    }
    Ok(status)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("bepac").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn plan_line() {
        let (code, out, _) = call(&[
            "plan",
            "--alphabet-size",
            "8",
            "--codes",
            "10",
            "--guess",
            "1000",
        ]);
        assert_eq!(
            (code, out.as_str()),
            (EXIT_OK, "A=8 N=10 P=3272 lambda=4 omega=1 length=5\n")
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(call(&[]).0, EXIT_USAGE);
        assert_eq!(call(&["gen", "--count", "1"]).0, EXIT_USAGE);
        assert_eq!(
            call(&[
                "plan",
                "--alphabet-size",
                "1",
                "--codes",
                "10",
                "--guess",
                "10"
            ])
            .0,
            EXIT_DOMAIN
        );
        assert_eq!(
            call(&["attack-demo", "--k", "1", "--seed", "0"]).0,
            EXIT_DOMAIN
        );
        let (code, out, _) = call(&["--version"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.starts_with("bepac "));
    }

    #[test]
    fn attack_demo_line() {
        let (code, out, _) = call(&["attack-demo", "--k", "16", "--seed", "3", "--trials", "10"]);
        assert_eq!(code, EXIT_OK);
        assert!(out
            .lines()
            .next()
            .unwrap()
            .contains("bound=64 equivalence=OK"));
        assert_eq!(out.lines().count(), 3);
    }
}
