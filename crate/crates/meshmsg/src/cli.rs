//! Operator surface: key management, simulation runs, log analysis, capacity
//! search, and security-game execution as subcommands of the `meshmsg` binary.
//!
//! Exit codes: 0 success, 2 usage error, 3 property violation or no data,
//! 4 I/O failure. All stdout output is line-oriented JSON.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::Backend;
use crate::node::BroadcastMode;
use crate::secgames::{
    self, AdversaryKind, GameParams, KeyPrivacyConfig, MconfScript, ShippedAdversary,
};
use crate::simnet::{self, Movement, Placement, SimConfig};
use crate::{analysis, crypto};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Everything needed to reproduce a run byte for byte.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub sim_id: String,
    pub config: SimConfig,
    pub events_path: String,
    pub version: String,
}

#[derive(Parser)]
#[command(name = "meshmsg", version, about = "Anonymous mesh messaging: simulate, analyze, and play security games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an identity keypair and write it as JSON.
    Keygen {
        /// Derive deterministically from this seed instead of OS entropy.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Run a simulation and write manifest + JSONL event log.
    Simulate(SimulateArgs),
    /// Analyze a JSONL event log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_parser = ["bandwidth", "delivery", "cdf"])]
        metric: String,
        #[arg(long, default_value_t = 95.0)]
        percentile: f64,
        /// Output directory for CSV/SVG artifacts (cdf metric).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search the maximum device count under a bandwidth threshold.
    Capacity {
        #[command(flatten)]
        template: TemplateArgs,
        #[arg(long, default_value_t = 95.0)]
        percentile: f64,
        #[arg(long, default_value_t = simnet::BLUETOOTH_CAPACITY_BPS)]
        threshold_bps: u64,
        #[arg(long, default_value_t = 256)]
        max_devices: u32,
    },
    /// Run a security game.
    Secgame(SecgameArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 5)]
    minutes: u32,
    #[arg(long, default_value_t = 25)]
    devices: u32,
    #[arg(long, default_value = "grid", value_parser = ["grid", "normal"])]
    placement: String,
    #[arg(long, default_value_t = 15.0)]
    spacing_ft: f64,
    /// Scatter parameter for normal placement; derived from spacing if unset.
    #[arg(long)]
    sigma_ft: Option<f64>,
    #[arg(long, default_value = "static", value_parser = ["static", "walk"])]
    movement: String,
    #[arg(long, default_value_t = 1.5)]
    step_ft: f64,
    #[arg(long, default_value = "smart", value_parser = ["simple", "smart"])]
    broadcast: String,
    #[arg(long, default_value_t = 5_000)]
    ds_interval_ms: u64,
    #[arg(long, default_value_t = 30_000)]
    rate_ms: u64,
    #[arg(long, default_value_t = 300_000)]
    time_to_keep_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Queue a real message: "at_ms:from:to:text" (repeatable).
    #[arg(long = "message")]
    messages: Vec<String>,
    #[arg(long, default_value = "sim_out")]
    out: PathBuf,
    /// Re-run the exact configuration recorded in a manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Fan out one run per device count, comma-separated.
    #[arg(long)]
    sweep_devices: Option<String>,
}

#[derive(Args)]
struct TemplateArgs {
    #[arg(long, default_value_t = 2)]
    minutes: u32,
    #[arg(long, default_value_t = 15.0)]
    spacing_ft: f64,
    #[arg(long, default_value = "smart", value_parser = ["simple", "smart"])]
    broadcast: String,
    #[arg(long, default_value_t = 5_000)]
    ds_interval_ms: u64,
    #[arg(long, default_value_t = 30_000)]
    rate_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SecgameArgs {
    #[arg(long, value_parser = ["mint", "mconf", "keypriv"])]
    game: String,
    /// MINT adversary strategy.
    #[arg(long, default_value = "passive")]
    adversary: String,
    #[arg(long, default_value_t = 200)]
    rounds: u64,
    #[arg(long, default_value_t = 8)]
    users: u32,
    /// How many of the users are malicious.
    #[arg(long, default_value_t = 2)]
    malicious: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// MCONF: a JSON script file; otherwise random scripts are generated.
    #[arg(long)]
    script: Option<PathBuf>,
    /// MCONF: how many random paired scripts to run.
    #[arg(long, default_value_t = 10)]
    random_scripts: u32,
    /// Key privacy: trials and queries per trial.
    #[arg(long, default_value_t = 400)]
    trials: u32,
    #[arg(long, default_value_t = 25)]
    queries: u32,
    /// Run the integrity game against the deliberately broken backend
    /// (control arm; the verdict must flip to 1).
    #[arg(long)]
    sabotage: bool,
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] simnet::SimError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Game(#[from] secgames::GameError),
    #[error("{0}")]
    Serde(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Sim(_) | CliError::Game(_) => EXIT_USAGE,
            CliError::Io(_) | CliError::Serde(_) => EXIT_IO,
            CliError::Analysis(analysis::AnalysisError::Io(_)) => EXIT_IO,
            CliError::Analysis(_) => EXIT_VIOLATION,
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Keygen { seed, out, force } => cmd_keygen(seed, &out, force),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Analyze {
            log,
            metric,
            percentile,
            out,
        } => cmd_analyze(&log, &metric, percentile, out.as_deref()),
        Command::Capacity {
            template,
            percentile,
            threshold_bps,
            max_devices,
        } => cmd_capacity(&template, percentile, threshold_bps, max_devices),
        Command::Secgame(args) => cmd_secgame(&args),
    }
}

fn cmd_keygen(seed: Option<u64>, out: &Path, force: bool) -> Result<i32, CliError> {
    if out.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let keys = match seed {
        Some(s) => crypto::keygen(&mut ChaCha12Rng::seed_from_u64(s)),
        None => {
            let mut seed_bytes = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut seed_bytes);
            crypto::keygen(&mut ChaCha12Rng::from_seed(seed_bytes))
        }
    };
    let json = serde_json::json!({
        "public_key": keys.public().to_hex(),
        "secret_key": keys.secret_hex(),
    });
    fs::write(out, format!("{json}\n"))?;
    println!("{}", serde_json::json!({ "keyfile": out, "public_key": keys.public().to_hex() }));
    Ok(EXIT_OK)
}

fn parse_scripted_messages(specs: &[String]) -> Result<Vec<simnet::ScriptedMessage>, CliError> {
    specs
        .iter()
        .map(|spec| {
            let parts: Vec<&str> = spec.splitn(4, ':').collect();
            if parts.len() != 4 {
                return Err(CliError::Usage(format!(
                    "bad --message {spec:?}; expected at_ms:from:to:text"
                )));
            }
            Ok(simnet::ScriptedMessage {
                at_ms: parts[0].parse().map_err(|_| CliError::Usage("bad at_ms".into()))?,
                from: parts[1].parse().map_err(|_| CliError::Usage("bad from".into()))?,
                to: parts[2].parse().map_err(|_| CliError::Usage("bad to".into()))?,
                text: parts[3].to_string(),
            })
        })
        .collect()
}

fn config_from_args(args: &SimulateArgs) -> Result<SimConfig, CliError> {
    let mut cfg = SimConfig::new(args.devices);
    cfg.minutes = args.minutes;
    cfg.placement = match args.placement.as_str() {
        "grid" => Placement::Grid {
            spacing_ft: args.spacing_ft,
        },
        _ => match args.sigma_ft {
            Some(sigma_ft) => Placement::Normal {
                center: (0.0, 0.0),
                sigma_ft,
            },
            None => Placement::normal_with_spacing(args.devices, args.spacing_ft),
        },
    };
    cfg.movement = match args.movement.as_str() {
        "static" => Movement::Static,
        _ => Movement::RandomWalk {
            step_ft: args.step_ft,
        },
    };
    cfg.broadcast_type = if args.broadcast == "simple" {
        BroadcastMode::Simple
    } else {
        BroadcastMode::Smart
    };
    cfg.ds_interval_ms = args.ds_interval_ms;
    cfg.rate_ms = args.rate_ms;
    cfg.time_to_keep_ms = args.time_to_keep_ms;
    cfg.seed = args.seed;
    cfg.messages = parse_scripted_messages(&args.messages)?;
    Ok(cfg)
}

/// Runs one config into `dir` (manifest first, then the log).
pub fn run_into_dir(cfg: &SimConfig, dir: &Path) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir)?;
    let manifest = RunManifest {
        sim_id: cfg.sim_id(),
        config: cfg.clone(),
        events_path: "events.jsonl".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    let out = simnet::run(cfg)?;
    let mut file = std::io::BufWriter::new(fs::File::create(dir.join(&manifest.events_path))?);
    out.write_jsonl(&mut file)?;
    file.flush()?;
    Ok(manifest)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32, CliError> {
    let base_cfg = match &args.from_manifest {
        Some(path) => {
            let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
            manifest.config
        }
        None => config_from_args(&args)?,
    };

    let sweep: Vec<u32> = match &args.sweep_devices {
        Some(spec) => spec
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| CliError::Usage("bad sweep list".into())))
            .collect::<Result<_, _>>()?,
        None => vec![base_cfg.devices],
    };

    for devices in sweep {
        let mut cfg = base_cfg.clone();
        cfg.devices = devices;
        let dir = if args.sweep_devices.is_some() {
            args.out.join(format!("sim_{devices}"))
        } else {
            args.out.clone()
        };
        let manifest = run_into_dir(&cfg, &dir)?;
        println!(
            "{}",
            serde_json::json!({
                "sim_id": manifest.sim_id,
                "devices": devices,
                "out": dir,
            })
        );
    }
    Ok(EXIT_OK)
}

fn cmd_analyze(
    log: &Path,
    metric: &str,
    pct: f64,
    out: Option<&Path>,
) -> Result<i32, CliError> {
    let text = fs::read_to_string(log)?;
    let (header, records, bad) = simnet::parse_jsonl(&text);
    for b in &bad {
        eprintln!("skipping line {}: {}", b.line, b.reason);
    }
    if records.is_empty() {
        println!("{}", serde_json::json!({ "error": "no data", "log": log }));
        return Ok(EXIT_VIOLATION);
    }
    let parsed_config: Option<SimConfig> = header
        .as_ref()
        .and_then(|(_, cfg)| serde_json::from_value(cfg.clone()).ok());
    let total_ms = parsed_config
        .as_ref()
        .map(|c| c.minutes as u64 * 60_000)
        .unwrap_or_else(|| records.iter().map(|r| r.timestamp_ms).max().unwrap_or(0) + 1000);
    let tick_ms = simnet::TICK_MS;
    let ttk = parsed_config.as_ref().map(|c| c.time_to_keep_ms).unwrap_or(300_000);
    // Join times re-derived from the logged config; the log alone cannot
    // show a start nobody was in range to hear.
    let starts = parsed_config.as_ref().map(|c| {
        simnet::assign_start_times(c)
            .iter()
            .enumerate()
            .map(|(i, &t)| (i as u32, t * c.tick_ms))
            .collect::<std::collections::BTreeMap<u32, u64>>()
    });

    match metric {
        "bandwidth" => {
            let series = analysis::bandwidth(&records, total_ms);
            let pooled = series.pooled_combined_bps();
            println!(
                "{}",
                serde_json::json!({
                    "metric": "bandwidth",
                    "samples": pooled.len(),
                    "p50_bps": analysis::percentile(&pooled, 50.0)?,
                    "requested_percentile": pct,
                    "requested_bps": analysis::percentile(&pooled, pct)?,
                    "max_bps": analysis::percentile(&pooled, 100.0)?,
                })
            );
        }
        "delivery" => {
            let stats = analysis::delivery_times(&records, tick_ms, ttk, starts.as_ref());
            println!(
                "{}",
                serde_json::json!({
                    "metric": "delivery",
                    "messages": stats.per_message.len(),
                    "delivered": stats.delivered,
                    "undelivered": stats.undelivered,
                    "median_ms": stats.median_ms,
                    "max_ms": stats.max_ms,
                })
            );
        }
        _ => {
            let dir = out.ok_or_else(|| CliError::Usage("--out required for cdf".into()))?;
            fs::create_dir_all(dir)?;
            let series = analysis::bandwidth(&records, total_ms);
            let pooled = series.pooled_combined_bps();
            let points = analysis::cdf_points(&pooled);
            analysis::write_cdf_csv(fs::File::create(dir.join("bandwidth_cdf.csv"))?, "bps", &points)?;
            analysis::render_line_svg(
                fs::File::create(dir.join("bandwidth_cdf.svg"))?,
                "per-device combined bandwidth CDF",
                &points.iter().map(|&(x, y)| (x as f64, y)).collect::<Vec<_>>(),
            )?;
            let stats = analysis::delivery_times(&records, tick_ms, ttk, starts.as_ref());
            let dpoints = analysis::cdf_points(&stats.delivered_times());
            analysis::write_cdf_csv(
                fs::File::create(dir.join("delivery_cdf.csv"))?,
                "delivery_ms",
                &dpoints,
            )?;
            analysis::render_line_svg(
                fs::File::create(dir.join("delivery_cdf.svg"))?,
                "message delivery time CDF",
                &dpoints.iter().map(|&(x, y)| (x as f64, y)).collect::<Vec<_>>(),
            )?;
            println!(
                "{}",
                serde_json::json!({ "metric": "cdf", "out": dir, "bandwidth_points": points.len(), "delivery_points": dpoints.len() })
            );
        }
    }
    Ok(EXIT_OK)
}

fn cmd_capacity(
    t: &TemplateArgs,
    pct: f64,
    threshold_bps: u64,
    max_devices: u32,
) -> Result<i32, CliError> {
    let mut template = SimConfig::new(1);
    template.minutes = t.minutes;
    template.placement = Placement::Grid {
        spacing_ft: t.spacing_ft,
    };
    template.broadcast_type = if t.broadcast == "simple" {
        BroadcastMode::Simple
    } else {
        BroadcastMode::Smart
    };
    template.ds_interval_ms = t.ds_interval_ms;
    template.rate_ms = t.rate_ms;
    template.seed = t.seed;
    let result = analysis::capacity_search(&template, pct, threshold_bps, max_devices)?;
    println!(
        "{}",
        serde_json::json!({
            "percentile": result.percentile,
            "threshold_bps": result.threshold_bps,
            "max_devices": result.max_devices,
            "probes": result.probes,
            "linear_fallback": result.linear_fallback,
        })
    );
    Ok(EXIT_OK)
}

fn cmd_secgame(args: &SecgameArgs) -> Result<i32, CliError> {
    match args.game.as_str() {
        "mint" => {
            let kind: AdversaryKind = args
                .adversary
                .parse()
                .map_err(CliError::Usage)?;
            if args.malicious == 0 || args.malicious >= args.users {
                return Err(CliError::Usage("need 1..users malicious".into()));
            }
            let malicious = (args.users - args.malicious)..args.users;
            let params = GameParams::new(args.users, args.rounds, malicious, args.seed);
            let backend = if args.sabotage { Backend::Unchecked } else { Backend::Checked };
            let mut adversary = ShippedAdversary::new(kind, args.seed);
            let outcome = secgames::run_mint(&params, &mut adversary, backend)?;
            println!(
                "{}",
                serde_json::json!({
                    "game": "mint",
                    "adversary": args.adversary,
                    "sabotage": args.sabotage,
                    "rounds": outcome.rounds_run,
                    "verdict": outcome.verdict,
                    "aborted": outcome.aborted,
                    "accepted_forgeries": outcome.accepted_forgeries,
                })
            );
            // A forgery is a violation, unless we sabotaged the crypto on
            // purpose, in which case the game must catch it.
            let ok = if args.sabotage { outcome.verdict == 1 } else { outcome.verdict == 0 };
            Ok(if ok { EXIT_OK } else { EXIT_VIOLATION })
        }
        "mconf" => {
            let scripts: Vec<MconfScript> = match &args.script {
                Some(path) => vec![serde_json::from_str(&fs::read_to_string(path)?)?],
                None => (0..args.random_scripts)
                    .map(|i| secgames::random_honest_script(args.seed.wrapping_add(i as u64), 12, 20))
                    .collect(),
            };
            let mut all_ok = true;
            for (i, script) in scripts.iter().enumerate() {
                let outcome = secgames::run_mconf_trace_pair(script)?;
                let equal = outcome.projections_equal();
                all_ok &= equal || outcome.aborted;
                println!(
                    "{}",
                    serde_json::json!({
                        "game": "mconf",
                        "script": i,
                        "aborted": outcome.aborted,
                        "observations": outcome.trace0.len(),
                        "projections_equal": equal,
                    })
                );
            }
            Ok(if all_ok { EXIT_OK } else { EXIT_VIOLATION })
        }
        _ => {
            let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
            let pk0 = crypto::keygen(&mut rng).public();
            let pk1 = crypto::keygen(&mut rng).public();
            let cfg = KeyPrivacyConfig {
                trials: args.trials,
                queries_per_trial: args.queries,
                reference_size: 2_000,
                seed: args.seed,
            };
            let report = secgames::run_key_privacy(&pk0, &pk1, &cfg);
            for d in &report.per_distinguisher {
                println!(
                    "{}",
                    serde_json::json!({
                        "game": "keypriv",
                        "distinguisher": d.name,
                        "advantage": d.advantage,
                        "sigma": d.sigma,
                    })
                );
            }
            let bound = (3.3 * report.max_sigma).max(0.01);
            println!(
                "{}",
                serde_json::json!({
                    "game": "keypriv",
                    "max_advantage": report.max_advantage,
                    "bound": bound,
                    "pass": report.max_advantage <= bound,
                })
            );
            Ok(if report.max_advantage <= bound { EXIT_OK } else { EXIT_VIOLATION })
        }
    }
}
