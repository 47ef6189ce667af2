use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use batchbound::harness::{
    cmd_simulate, cmd_sweep, cmd_verify, solve_instance, write_game, write_sweep_csv, ExperimentConfig, GameMode,
    SweepGrid, VerifyParams, VerifyTarget, EXACT_SOLVER,
};
use batchbound::adversary::geometric_schedule;
use batchbound::mdp::{verify_realizability, Family, HardInstance, Sign};
use batchbound::packing::{budget_report, search_packing, verify_packing, Packing, SearchBudget};
use batchbound::Error;

const EXIT_BREACH: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "batchbound", version, about = "Multi-batch RL lower-bound simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one game from a JSON config and write report, transcript and certificate.
    Simulate(GameArgs),
    /// Run a grid of games and emit one CSV row per cell.
    Sweep(SweepArgs),
    /// Run a module's property checks.
    Verify(VerifyArgs),
    /// Budget and schedule arithmetic for (d, K, gamma).
    Bounds(BoundsArgs),
    /// Play against the lazily committing adversary.
    #[command(subcommand)]
    Adversary(AdversaryCmd),
    /// Run learners against fixed instances.
    #[command(subcommand)]
    Learner(LearnerCmd),
    /// Check or search subspace packings.
    #[command(subcommand)]
    Packing(PackingCmd),
    /// Sample hard instances and check realizability.
    #[command(subcommand)]
    Mdp(MdpCmd),
    /// Run the query protocol and print the transcript.
    #[command(subcommand)]
    Protocol(ProtocolCmd),
}

#[derive(Args)]
struct GameArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and BATCHBOUND_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON grid file; the list flags below are ignored when given.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16])]
    d: Vec<usize>,
    #[arg(long = "K", alias = "k", value_delimiter = ',', default_values_t = [1usize, 2, 3])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "coordinate")]
    learners: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "multi_batch")]
    modes: Vec<String>,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value = "PE")]
    problem: String,
    #[arg(long, env = "BATCHBOUND_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    search_budget: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_parser = parse_target)]
    target: VerifyTarget,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize])]
    d: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, env = "BATCHBOUND_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    d: usize,
    #[arg(long = "K", alias = "k")]
    k: usize,
    #[arg(long)]
    gamma: f64,
    /// Total queries, for the round threshold below which the budget is exceeded.
    #[arg(long)]
    n_total: Option<f64>,
}

#[derive(Subcommand)]
enum AdversaryCmd {
    /// Play the lazy adversary against the configured learner.
    Play(GameArgs),
}

#[derive(Subcommand)]
enum LearnerCmd {
    /// Run the d-query exact solver on a committed PE instance.
    Solve {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
    },
}

#[derive(Subcommand)]
enum PackingCmd {
    /// Check a packing file's minimum chordal distance.
    Verify {
        file: PathBuf,
        #[arg(long)]
        dmin: f64,
    },
    /// Greedy random search for a packing; prints the packing JSON.
    Search {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long)]
        dmin: f64,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum MdpCmd {
    /// Sample state-actions and check the Bellman residual of the linear Q.
    VerifyRealizability {
        file: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw a random hard instance; prints the instance JSON.
    Sample {
        #[arg(long, default_value = "PE")]
        family: String,
        #[arg(long)]
        d: usize,
        /// Chain dimensions, strictly decreasing; defaults to the geometric schedule with K = 2.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 1)]
        sign: i8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ProtocolCmd {
    /// Run the batch protocol and print the transcript as JSON lines.
    Run(GameArgs),
}

fn parse_target(s: &str) -> Result<VerifyTarget, String> {
    match s {
        "realizability" => Ok(VerifyTarget::Realizability),
        "geometry" => Ok(VerifyTarget::Geometry),
        "packing" => Ok(VerifyTarget::Packing),
        _ => Err(format!("expected realizability, geometry or packing, got {s:?}")),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::config(field, format!("{}: {e}", path.display())).into())
}

fn load_config(args: &GameArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply_env_overrides()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn game(args: &GameArgs, require_adversary: bool) -> anyhow::Result<u8> {
    let cfg = load_config(args)?;
    if require_adversary && cfg.adversary_mode == GameMode::FixedInstance {
        return Err(Error::config("adversary_mode", "adversary play needs multi_batch or fully_adaptive").into());
    }
    let result = cmd_simulate(&cfg)?;
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("batchbound-out"));
    let files = write_game(&dir, &result)?;
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    if require_adversary {
        match &result.certificate {
            Some(cert) => print_json(cert)?,
            None => print_json(&result.report)?,
        }
    } else {
        print_json(&result.report)?;
    }
    Ok(0)
}

fn sweep(args: &SweepArgs) -> anyhow::Result<u8> {
    let grid = match &args.grid {
        Some(path) => read_json::<SweepGrid>(path, "grid")?,
        None => {
            let problem: Family = args.problem.parse().map_err(|_| Error::config("problem", "expected PE or BPI"))?;
            let modes = args
                .modes
                .iter()
                .map(|m| m.parse::<GameMode>())
                .collect::<Result<Vec<_>, _>>()?;
            SweepGrid {
                d: args.d.clone(),
                k: args.k.clone(),
                n_per_round: args.n,
                learners: args.learners.clone(),
                adversary_modes: modes,
                gamma: args.gamma,
                problem,
                seed: args.seed,
                search_budget: args.search_budget,
            }
        }
    };
    if grid.learners.iter().any(|l| l == EXACT_SOLVER) && grid.problem != Family::Pe {
        return Err(Error::config("learners", "exact_solver solves PE problems only").into());
    }
    let rows = cmd_sweep(&grid, args.jobs)?;
    match &args.out {
        Some(path) => {
            write_sweep_csv(&rows, fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => write_sweep_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(0)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Simulate(args) => game(&args, false),
        Command::Adversary(AdversaryCmd::Play(args)) => game(&args, true),
        Command::Protocol(ProtocolCmd::Run(args)) => {
            let cfg = load_config(&args)?;
            let result = cmd_simulate(&cfg)?;
            match &cfg.output_dir {
                Some(dir) => {
                    for f in write_game(dir, &result)? {
                        eprintln!("wrote {}", f.display());
                    }
                }
                None => result.transcript.write_jsonl(std::io::stdout().lock())?,
            }
            Ok(0)
        }
        Command::Sweep(args) => sweep(&args),
        Command::Verify(args) => {
            let params = VerifyParams {
                d: args.d,
                samples: args.samples,
                trials: args.trials,
                gamma: args.gamma,
                seed: args.seed,
            };
            let summary = cmd_verify(args.target, &params)?;
            print_json(&summary)?;
            Ok(if summary.pass { 0 } else { EXIT_BREACH })
        }
        Command::Bounds(args) => {
            let report = budget_report(args.d, args.k, args.gamma, args.n_total)
                .map_err(|e| Error::config("bounds", e.to_string()))?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Learner(LearnerCmd::Solve { env, gamma }) => {
            let inst: HardInstance = read_json(&env, "env")?;
            let report = solve_instance(&inst, gamma)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Packing(PackingCmd::Verify { file, dmin }) => {
            let packing: Packing = read_json(&file, "packing")?;
            let verdict = verify_packing(&packing, dmin)?;
            print_json(&verdict)?;
            Ok(if verdict.ok { 0 } else { EXIT_BREACH })
        }
        Command::Packing(PackingCmd::Search { d, m, gamma, dmin, size, budget, seed }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let packing = search_packing(d, m, gamma, dmin, size, SearchBudget(budget), &mut rng)?;
            if packing.len() < size {
                eprintln!("found only {} of {size} members", packing.len());
            }
            print_json(&packing)?;
            Ok(0)
        }
        Command::Mdp(MdpCmd::Sample { family, d, dims, gamma, sign, seed }) => {
            let family: Family = family.parse().map_err(|_| Error::config("family", "expected PE or BPI"))?;
            let sign = match sign {
                1 => Sign::Plus,
                -1 => Sign::Minus,
                _ => return Err(Error::config("sign", "expected 1 or -1").into()),
            };
            let dims = match dims {
                Some(dims) => dims,
                None => geometric_schedule(d, 2)?.dims,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            print_json(&HardInstance::random(family, d, &dims, sign, gamma, &mut rng)?)?;
            Ok(0)
        }
        Command::Mdp(MdpCmd::VerifyRealizability { file, samples, seed }) => {
            let inst: HardInstance = read_json(&file, "instance")?;
            let report = verify_realizability(&inst, samples, seed)?;
            print_json(&report)?;
            Ok(if report.pass { 0 } else { EXIT_BREACH })
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_invariant_breach() => EXIT_BREACH,
        Some(Error::Config { .. } | Error::InvalidArgument(_)) => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
