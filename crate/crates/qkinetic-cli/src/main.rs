//! Batch runner: one subcommand per toolkit module, flat config files in,
//! CSVs and a replayable manifest out.

mod commands;
mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use commands::{Outcome, Run, RunError};
use config::{describe, ConfigError, Key, Params};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_GUARD: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;

const EXIT_CODES: &str = "Exit codes: 0 success, 1 a check failed or i/o error, 2 config error,
3 numerical guard tripped (blow-up or under-resolution), 4 inconclusive (Monte Carlo variance).
Every run writes manifest.txt into --out-dir; pass it back with --config to replay the run.";

#[derive(Parser)]
#[command(name = "qkinetic", version, about = "Batch experiments for the quantum Boltzmann toolkit", after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads; falls back to QKINETIC_THREADS, then to the core count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat config file: one `key = value` per line, `#` comments.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving every output of the run.
    #[arg(long, default_value = "qkinetic-out")]
    out_dir: PathBuf,
    /// Monte Carlo seed (same as `seed = ...` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, e.g. --set n_v=12. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Conservation defects and Maxwellian annihilation of the collision operator.
    #[command(after_help = collide_help())]
    CollideCheck {
        #[command(flatten)]
        common: Common,
        /// Use the unit Maxwellian (density = maxwellian).
        #[arg(long)]
        maxwellian: bool,
    },
    /// Spatially homogeneous splitting solver with diagnostics.
    #[command(after_help = solve_help())]
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Epsilon-scaling ladders for the A, B and Q^eps operators.
    #[command(after_help = bbgky_help())]
    BbgkyLadder {
        #[command(flatten)]
        common: Common,
    },
    /// Quasi-free wave-packet checks.
    #[command(after_help = quasifree_help())]
    Quasifree {
        #[command(flatten)]
        common: Common,
    },
    /// Board-game class tables and region checks.
    #[command(after_help = boardgame_help())]
    Boardgame {
        #[command(flatten)]
        common: Common,
        /// Number of collapsing steps (same as `k = ...`).
        #[arg(long)]
        k: Option<usize>,
        /// Tabulate classes (mode = tabulate).
        #[arg(long)]
        tabulate: bool,
    },
    /// Norm-deflation curve and loss-term probe.
    #[command(after_help = illposed_help())]
    Illposed {
        #[command(flatten)]
        common: Common,
    },
}

fn help(keys: Vec<Key>, csv: &str) -> String {
    format!("Config keys (name, default, meaning):\n{}\nCSV outputs:\n{csv}\n\n{EXIT_CODES}", describe(&keys))
}

fn collide_help() -> String {
    help(commands::collide_keys(), commands::COLLIDE_CSV)
}
fn solve_help() -> String {
    help(commands::solve_keys(), commands::SOLVE_CSV)
}
fn bbgky_help() -> String {
    help(commands::bbgky_keys(), commands::BBGKY_CSV)
}
fn quasifree_help() -> String {
    help(commands::quasifree_keys(), commands::QUASIFREE_CSV)
}
fn boardgame_help() -> String {
    help(commands::boardgame_keys(), commands::BOARDGAME_CSV)
}
fn illposed_help() -> String {
    help(commands::illposed_keys(), commands::ILLPOSED_CSV)
}

type Runner = fn(&Params, &Path) -> Result<Run, RunError>;

fn split_set(raw: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    raw.iter()
        .map(|s| match s.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => {
                Ok((k.trim().to_string(), v.trim().to_string()))
            }
            _ => Err(ConfigError::Plain(format!("--set expects KEY=VALUE, got `{s}`"))),
        })
        .collect()
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, ConfigError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("QKINETIC_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ConfigError::Plain(format!("QKINETIC_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn exit_for(e: &RunError) -> u8 {
    use qkinetic::Error as E;
    match e {
        RunError::Config(_) => EXIT_CONFIG,
        RunError::Numerics(E::Guard(_) | E::UnderResolved { .. } | E::Overflow(_)) => EXIT_GUARD,
        // the remaining library errors all trace back to parameter values
        RunError::Numerics(_) => EXIT_CONFIG,
        RunError::Io(_) | RunError::Csv(_) => EXIT_CHECK_FAILED,
    }
}

fn manifest(params: &Params, threads: usize, wall: f64, status: &str, files: &[PathBuf]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# qkinetic {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# threads = {threads}");
    let _ = writeln!(s, "# wall_time_s = {wall:.3}");
    let _ = writeln!(s, "# status = {}", status.replace('\n', " "));
    for f in files {
        if let Some(name) = f.file_name() {
            let _ = writeln!(s, "# output = {}", name.to_string_lossy());
        }
    }
    s + &params.echo()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, keys, runner, common, mut flags): (&str, Vec<Key>, Runner, Common, Vec<(String, String)>) =
        match cli.command {
            Command::CollideCheck { common, maxwellian } => {
                let f = if maxwellian { vec![("density".into(), "maxwellian".into())] } else { vec![] };
                ("collide-check", commands::collide_keys(), commands::collide_check, common, f)
            }
            Command::Solve { common } => ("solve", commands::solve_keys(), commands::run_solve, common, vec![]),
            Command::BbgkyLadder { common } => {
                ("bbgky-ladder", commands::bbgky_keys(), commands::bbgky_ladder, common, vec![])
            }
            Command::Quasifree { common } => {
                ("quasifree", commands::quasifree_keys(), commands::quasifree, common, vec![])
            }
            Command::Boardgame { common, k, tabulate } => {
                let mut f = vec![];
                if let Some(k) = k {
                    f.push(("k".into(), k.to_string()));
                }
                if tabulate {
                    f.push(("mode".into(), "tabulate".into()));
                }
                ("boardgame", commands::boardgame_keys(), commands::boardgame, common, f)
            }
            Command::Illposed { common } => ("illposed", commands::illposed_keys(), commands::illposed, common, vec![]),
        };

    let mut setup = || -> Result<(Params, usize), ConfigError> {
        flags.extend(split_set(&common.set)?);
        if let Some(seed) = common.seed {
            flags.push(("seed".into(), seed.to_string()));
        }
        let params = Params::resolve(name, &keys, common.config.as_deref(), &flags)?;
        let threads = match thread_count(cli.threads)? {
            Some(0) => return Err(ConfigError::Plain("thread count must be at least 1".into())),
            Some(n) => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| ConfigError::Plain(format!("cannot size the thread pool: {e}")))?;
                n
            }
            None => rayon::current_num_threads(),
        };
        std::fs::create_dir_all(&common.out_dir)
            .map_err(|e| ConfigError::Plain(format!("cannot create {}: {e}", common.out_dir.display())))?;
        Ok((params, threads))
    };
    let (params, threads) = match setup() {
        Ok(x) => x,
        Err(e) => {
            eprintln!("qkinetic {name}: config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let start = Instant::now();
    let result = runner(&params, &common.out_dir);
    let wall = start.elapsed().as_secs_f64();
    let (code, status, files) = match &result {
        Ok(Run { outcome, files }) => match outcome {
            Outcome::Ok(m) => (0, format!("ok: {m}"), files.clone()),
            Outcome::CheckFailed(m) => (EXIT_CHECK_FAILED, format!("check failed: {m}"), files.clone()),
            Outcome::Inconclusive(m) => (EXIT_INCONCLUSIVE, format!("inconclusive: {m}"), files.clone()),
        },
        Err(e) => (exit_for(e), format!("error: {e}"), vec![]),
    };
    let text = manifest(&params, threads, wall, &status, &files);
    if let Err(e) = std::fs::write(common.out_dir.join("manifest.txt"), text) {
        eprintln!("qkinetic {name}: cannot write manifest: {e}");
        return ExitCode::from(EXIT_CHECK_FAILED);
    }
    if code == 0 {
        println!("{name}: {status}");
    } else {
        eprintln!("{name}: {status}");
    }
    ExitCode::from(code)
}
