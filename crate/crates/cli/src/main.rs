use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leo_consensus_cli::audit::{audit_export, Query};
use leo_consensus_cli::config::{AdversarySection, ProtocolKind, ScenarioConfig};
use leo_consensus_cli::{default_consensus_config, run_scenario, CliError, ScenarioKind};

#[derive(Parser)]
#[command(
    name = "leo-consensus",
    version,
    about = "Spectrum-usage consensus and constellation experiments"
)]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV, ledger and summary files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Monte-Carlo trials per density point.
    #[arg(long, global = true)]
    trials: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Agree on usage tensors, commit them and retrieve them.
    Consensus {
        #[arg(long, value_parser = ["binary", "exact", "approx"])]
        protocol: Option<String>,
        /// Adversary behavior, e.g. bad-proposer.
        #[arg(long)]
        behavior: Option<String>,
        /// Corrupt a different set of operators every round.
        #[arg(long)]
        rotating: bool,
    },
    /// Interference incidents versus satellite density.
    Constellation {
        /// Satellite density per million km²; repeatable.
        #[arg(long)]
        density: Vec<f64>,
        #[arg(long)]
        subbands: Option<u32>,
        #[arg(long)]
        repetitions: Option<u32>,
    },
    /// Detection probability versus sensor density.
    Detection {
        /// Sensor density per 10,000 km²; repeatable.
        #[arg(long)]
        density: Vec<f64>,
    },
    /// Verify an exported ledger and look up committed values.
    LedgerAudit {
        /// Exported ledger file.
        #[arg(long)]
        ledger: PathBuf,
        /// `period:region:subband:operator`; repeatable.
        #[arg(long)]
        query: Vec<Query>,
    },
}

fn load(cli: &Cli, fallback: impl FnOnce() -> ScenarioConfig) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => fallback(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.geometry.trials = trials;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let (cfg, kind) = match &cli.command {
        Command::LedgerAudit { ledger, query } => {
            let text = std::fs::read_to_string(ledger).map_err(|source| CliError::Io {
                path: ledger.clone(),
                source,
            })?;
            let (_, report) = audit_export(&text, query)?;
            print!("{report}");
            return Ok(0);
        }
        Command::Consensus {
            protocol,
            behavior,
            rotating,
        } => {
            let mut cfg = load(&cli, default_consensus_config)?;
            if let Some(p) = protocol {
                let kind = match p.as_str() {
                    "binary" => ProtocolKind::Binary,
                    "exact" => ProtocolKind::Exact,
                    _ => ProtocolKind::Approx,
                };
                let proto = cfg
                    .protocol
                    .get_or_insert_with(|| default_consensus_config().protocol.expect("set"));
                proto.kind = kind;
            }
            if let Some(b) = behavior {
                let adv = cfg.adversary.get_or_insert(AdversarySection {
                    behavior: b.clone(),
                    controlled: None,
                    rotating: false,
                    lie_offset: 1.0e6,
                    boundary_width: 1.0,
                });
                adv.behavior = b.clone();
            }
            if *rotating {
                if let Some(adv) = cfg.adversary.as_mut() {
                    adv.rotating = true;
                }
            }
            (cfg, ScenarioKind::Consensus)
        }
        Command::Constellation {
            density,
            subbands,
            repetitions,
        } => {
            let mut cfg = load(&cli, ScenarioConfig::default_geometry)?;
            if !density.is_empty() {
                cfg.geometry.satellite_densities = Some(density.clone());
            }
            if let Some(s) = subbands {
                cfg.geometry.subbands = *s;
            }
            if let Some(r) = repetitions {
                cfg.geometry.repetitions = *r;
            }
            (cfg, ScenarioKind::Constellation)
        }
        Command::Detection { density } => {
            let mut cfg = load(&cli, ScenarioConfig::default_geometry)?;
            if !density.is_empty() {
                cfg.geometry.sensor_densities = Some(density.clone());
            }
            (cfg, ScenarioKind::Detection)
        }
    };
    let result = run_scenario(&cfg, kind)?;
    print!("{}", result.summary_text());
    if let Some(dir) = cli.out_dir.as_deref().or(cfg.output_dir()) {
        result.artifacts.write_to(dir)?;
    }
    if let Some(e) = &result.error {
        eprintln!("error: {e}");
        if result.artifacts.get("violation_transcript.csv").is_some() {
            eprintln!("transcript of the first failing instance: violation_transcript.csv");
        }
    }
    Ok(result.exit_code())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
