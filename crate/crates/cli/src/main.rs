//! `spcf`: command-line front end.
//!
//! Exit codes: 0 success, 2 the run failed or the check did not pass,
//! 3 step budget exceeded, 64 usage error, 65 bad program or data,
//! 1 anything else.

use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use spcf::diff::{check_differentiability, DiffConfig};
use spcf::inference::{importance_sample, trace_mh, MhConfig, PosteriorSample};
use spcf::interp::{estimate_termination, replay, run_sampling, Outcome, RunOutcome, DEFAULT_STEP_BUDGET};
use spcf::lang::{parse, print, TypedProgram};
use spcf::symbolic::{explore, ExploreConfig, InputBox};

const EXIT_FAIL: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

#[derive(Parser)]
#[command(name = "spcf", version, about = "Interpreter, symbolic executor and density checker for SPCF programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Is,
    Mh,
}

#[derive(clap::Args)]
struct Common {
    /// Program file, or `-` for stdin.
    file: PathBuf,
    /// Values for the program's free variables, in order of appearance.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    inputs: Vec<f64>,
    /// Write the result here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run once on fresh uniforms.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
        max_steps: u64,
    },
    /// Run deterministically on a given trace.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Comma-separated samples in (0, 1).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        trace: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
        max_steps: u64,
    },
    /// Symbolic execution into a branch map.
    Explore {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        max_depth: u64,
        #[arg(long, default_value_t = 20_000)]
        max_leaves: usize,
        /// Enables the Monte Carlo emptiness probes and volume estimates.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 4000)]
        measure_points: usize,
    },
    /// Branch-wise differentiability check of the weight and value functions.
    Diffcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Interior points per terminal leaf.
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        fd_h: f64,
        #[arg(long, default_value_t = 100)]
        max_depth: u64,
        #[arg(long)]
        assume_ast: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Posterior histogram by importance sampling or trace MH.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Method::Mh)]
        method: Method,
        /// Samples (is) or steps (mh).
        #[arg(short)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Histogram range `lo,hi`; defaults to the sample span.
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
        range: Option<(f64, f64)>,
        /// MH proposal standard deviation.
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        #[arg(long, default_value_t = 1)]
        chains: usize,
        #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
        max_steps: u64,
        /// Also write every sample as JSON lines.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Write the JSON summary here; it goes to stderr otherwise.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Estimate the probability of termination within the step budget.
    Terminate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(short, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
        max_steps: u64,
    },
}

enum CliError {
    Usage(String),
    Data(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Other(e.into())
    }
}

type CmdResult = Result<u8, CliError>;

fn load(path: &PathBuf) -> Result<TypedProgram, CliError> {
    let src = if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::Other)?
    };
    parse(&src).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json(output: &Option<PathBuf>, doc: &Json) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| CliError::Other(e.into()))?;
    text.push('\n');
    emit(output, &text)
}

fn run_record(prog: &TypedProgram, out: &RunOutcome) -> Json {
    let terminated = out.terminated();
    let value = match (&out.value, terminated) {
        (Some(v), true) => v.as_const().map_or_else(|| json!(print(v)), |c| json!(c)),
        _ => Json::Null,
    };
    let mut doc = json!({
        "schema": spcf::SCHEMA,
        "program_hash": spcf::program_hash(prog),
        "outcome": out.outcome.label(),
        "value": value,
        "weight": if terminated { out.weight } else { 0.0 },
        "trace": out.trace,
        "steps": out.steps,
    });
    match &out.outcome {
        Outcome::Failed(reason) => doc["reason"] = json!(reason),
        Outcome::Overrun { consumed } => doc["consumed"] = json!(consumed),
        _ => {}
    }
    doc
}

fn outcome_code(o: &Outcome) -> u8 {
    match o {
        Outcome::Failed(_) => EXIT_FAIL,
        Outcome::BudgetExceeded => EXIT_BUDGET,
        _ => 0,
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn execute(cmd: Command) -> CmdResult {
    match cmd {
        Command::Run { common, seed, max_steps } => {
            let prog = load(&common.file)?;
            let out = run_sampling(&prog, &common.inputs, seed, max_steps).map_err(data)?;
            emit_json(&common.output, &run_record(&prog, &out))?;
            Ok(outcome_code(&out.outcome))
        }
        Command::Replay { common, trace, max_steps } => {
            let prog = load(&common.file)?;
            let out = replay(&prog, &common.inputs, &trace, max_steps).map_err(data)?;
            emit_json(&common.output, &run_record(&prog, &out))?;
            Ok(outcome_code(&out.outcome))
        }
        Command::Explore {
            common,
            max_depth,
            max_leaves,
            seed,
            measure_points,
        } => {
            let prog = load(&common.file)?;
            let cfg = ExploreConfig {
                max_depth,
                max_leaves,
                prune_samples: if seed.is_some() { 256 } else { 0 },
                measure_points: if seed.is_some() { measure_points } else { 0 },
                seed: seed.unwrap_or(0),
                input_box: InputBox::default(),
            };
            let map = explore(&prog, &cfg);
            emit_json(&common.output, &map.to_json())?;
            eprintln!(
                "{} terminal, {} budget, {} pruned, exhausted: {}",
                map.terminal().count(),
                map.budget().count(),
                map.pruned,
                map.exhausted
            );
            Ok(0)
        }
        Command::Diffcheck {
            common,
            seed,
            points,
            tol,
            fd_h,
            max_depth,
            assume_ast,
            format,
        } => {
            if points == 0 || !(tol > 0.0) || !(fd_h > 0.0) {
                return Err(CliError::Usage("--points, --tol and --fd-h must be positive".into()));
            }
            let prog = load(&common.file)?;
            let mut cfg = DiffConfig {
                points_per_leaf: points,
                tol,
                fd_h,
                assume_ast,
                seed,
                ..DiffConfig::default()
            };
            cfg.explore.max_depth = max_depth;
            cfg.explore.seed = seed;
            let report = check_differentiability(&prog, &cfg);
            match format {
                Format::Json => emit_json(&common.output, &report.to_json())?,
                Format::Text => emit(&common.output, &report.summary())?,
            }
            Ok(if report.pass { 0 } else { EXIT_FAIL })
        }
        Command::Infer {
            common,
            seed,
            method,
            n,
            bins,
            range,
            sigma,
            burn_in,
            chains,
            max_steps,
            samples,
            summary,
        } => {
            if n == 0 || bins == 0 {
                return Err(CliError::Usage("-n and --bins must be at least 1".into()));
            }
            if burn_in >= n && matches!(method, Method::Mh) {
                return Err(CliError::Usage("--burn-in must be smaller than -n".into()));
            }
            let prog = load(&common.file)?;
            let (hist, draws, mut doc) = match method {
                Method::Is => {
                    let res = importance_sample(&prog, &common.inputs, n, seed, max_steps).map_err(data)?;
                    let hist = res.histogram(bins, range).map_err(data)?;
                    let mean = res.mean();
                    let doc = json!({
                        "method": "is",
                        "n": n,
                        "ess": res.ess,
                        "failed": res.failed,
                        "mean": mean.map(|m| m.0),
                        "se": mean.map(|m| m.1),
                    });
                    if res.ess < 0.01 * n as f64 {
                        eprintln!("warning: effective sample size {:.1} of {n}", res.ess);
                    }
                    (hist, res.samples, doc)
                }
                Method::Mh => {
                    let cfg = MhConfig {
                        steps: n,
                        sigma,
                        burn_in,
                        chains,
                        budget: max_steps,
                        ..MhConfig::default()
                    };
                    let chain = trace_mh(&prog, &common.inputs, &cfg, seed).map_err(data)?;
                    let hist = chain.histogram(bins, range).map_err(data)?;
                    let mean = chain.mean();
                    let doc = json!({
                        "method": "mh",
                        "steps": n,
                        "chains": chains,
                        "acceptance_rate": chain.acceptance_rate(),
                        "mean": mean.map(|m| m.0),
                        "se": mean.map(|m| m.1),
                    });
                    (hist, chain.samples, doc)
                }
            };
            doc["schema"] = json!(spcf::SCHEMA);
            doc["program_hash"] = json!(spcf::program_hash(&prog));
            doc["mode_center"] = json!(hist.bin_center(hist.mode()));
            doc["total_mass"] = json!(hist.total);
            doc["outside_mass"] = json!(hist.outside);
            emit(&common.output, &hist.to_csv())?;
            if let Some(path) = samples {
                write_samples(&path, &draws)?;
            }
            let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Other(e.into()))?;
            match summary {
                Some(p) => fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => eprintln!("{text}"),
            }
            Ok(0)
        }
        Command::Terminate {
            common,
            seed,
            n,
            max_steps,
        } => {
            if n == 0 {
                return Err(CliError::Usage("-n must be at least 1".into()));
            }
            let prog = load(&common.file)?;
            let est = estimate_termination(&prog, &common.inputs, n, max_steps, seed).map_err(data)?;
            let mut doc = serde_json::to_value(&est).map_err(|e| CliError::Other(e.into()))?;
            doc["schema"] = json!(spcf::SCHEMA);
            doc["program_hash"] = json!(spcf::program_hash(&prog));
            emit_json(&common.output, &doc)?;
            Ok(0)
        }
    }
}

fn write_samples(path: &PathBuf, draws: &[PosteriorSample]) -> Result<(), CliError> {
    let mut out = io::BufWriter::new(fs::File::create(path).with_context(|| format!("writing {}", path.display()))?);
    for d in draws {
        writeln!(out, "{}", d.jsonl())?;
    }
    out.flush()?;
    Ok(())
}

/// Worker count from `SPCF_THREADS`, capped by the available cores.
fn configure_threads() {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threads = std::env::var("SPCF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .map_or(cores, |n| n.min(cores));
    // Only fails if a pool already exists.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err("lo must be below hi".into())
    }
}
