use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pqballot::bench::{run_load, BenchReport, LoadOptions, RawLog, ReportFormat};
use pqballot::ledger::{verify_records, BlockStore, FileBlockStore};
use pqballot::service::config::GasOverrides;
use pqballot::service::{launch, ConfigLayer, NodeConfig};
use pqballot::sigscheme::keyfile::{read_public, FileKeyStore, DEFAULT_KDF_ROUNDS};
use pqballot::sigscheme::Profile;

#[derive(Parser)]
#[command(name = "pqballot", version, about = "Post-quantum signed biometric voting node")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the node. Settings come from --config, then PQBALLOT_* variables,
    /// then flags.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigLayer,
    },
    /// Drive a running node at several concurrency levels and report.
    Bench(BenchArgs),
    /// Create a passphrase-protected authority key (passphrase from
    /// PQBALLOT_KEY_PASSPHRASE).
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "F512")]
        profile: Profile,
    },
    /// Verify a ledger file against the authority public key. A torn tail
    /// is truncated exactly as on node startup.
    VerifyChain {
        #[arg(long)]
        ledger: PathBuf,
        /// Authority key file; only its public half is read.
        #[arg(long)]
        key: PathBuf,
        #[command(flatten)]
        gas: GasOverrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    target: String,
    #[arg(long, value_delimiter = ',', default_values_t = pqballot::bench::DEFAULT_LEVELS)]
    levels: Vec<usize>,
    /// Enroll+authenticate cycles per level.
    #[arg(long, default_value_t = 50)]
    ops: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the raw latency log (JSON) here.
    #[arg(long)]
    raw_out: Option<PathBuf>,
    /// Rebuild the report from a raw log instead of running load.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Block gas limit of the target.
    #[arg(long, default_value_t = 30_000_000)]
    gas_limit: u64,
}

fn passphrase() -> Result<String, String> {
    std::env::var("PQBALLOT_KEY_PASSPHRASE").map_err(|_| "PQBALLOT_KEY_PASSPHRASE is not set".to_string())
}

async fn serve(config: Option<PathBuf>, flags: ConfigLayer) -> Result<(), String> {
    let config = NodeConfig::load(config.as_deref(), std::env::vars(), flags).map_err(|e| e.to_string())?;
    let handle = launch(config).await.map_err(|e| e.to_string())?;
    eprintln!("pqballot listening on http://{}", handle.addr);
    handle
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}

async fn bench(args: BenchArgs) -> Result<bool, String> {
    let raw = match &args.replay {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            RawLog::from_json(&text).map_err(|e| e.to_string())?
        }
        None => {
            let mut options = LoadOptions::new(&args.target);
            options.levels = args.levels.clone();
            options.ops_per_level = args.ops;
            options.block_gas_limit = args.gas_limit;
            if let Some(seed) = args.seed {
                options.seed = seed;
            }
            run_load(&options).await.map_err(|e| e.to_string())?
        }
    };
    if let Some(path) = &args.raw_out {
        std::fs::write(path, raw.to_json()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let report = BenchReport::from_raw(&raw);
    let format = match args.format {
        Format::Table => ReportFormat::Table,
        Format::Csv => ReportFormat::Csv,
    };
    let text = report.render(format);
    match &args.out {
        Some(path) => std::fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{text}"),
    }
    let checks = report.check_properties();
    for c in &checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn keygen(out: PathBuf, profile: Profile) -> Result<(), String> {
    let store = FileKeyStore::new(&out, passphrase()?);
    let keys = store.create(profile, None, DEFAULT_KDF_ROUNDS).map_err(|e| e.to_string())?;
    println!("{}", hex::encode(keys.public().fingerprint()));
    Ok(())
}

fn verify_chain(ledger: PathBuf, key: PathBuf, gas: GasOverrides) -> Result<bool, String> {
    let gas = ConfigLayer { gas, ..Default::default() }.resolve().map_err(|e| e.to_string())?.gas;
    let key_bytes = std::fs::read(&key).map_err(|e| format!("{}: {e}", key.display()))?;
    let public = read_public(&key_bytes).map_err(|e| e.to_string())?;
    let records = FileBlockStore::open(&ledger).and_then(|mut s| s.load()).map_err(|e| e.to_string())?;
    let report = verify_records(&records, &public, &gas);
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(report.valid)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Serve { config, flags } => serve(config, flags).await.map(|_| true),
        Command::Bench(args) => bench(args).await,
        Command::Keygen { out, profile } => keygen(out, profile).map(|_| true),
        Command::VerifyChain { ledger, key, gas } => verify_chain(ledger, key, gas),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
