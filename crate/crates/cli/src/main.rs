//! `aflsim`: run scenarios, verify staleness on event logs, evaluate the
//! convergence bound and export data partitions.

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aflsim_core::analysis::format_significant;
use aflsim_core::engine::scenario_partition;
use aflsim_core::events::{read_log, write_log};
use aflsim_core::tasks::write_partition_csv;
use aflsim_core::{
    convergence_bound, metrics_summary, parse_scenario, run_scenario, verify, BoundParams, Error, ScenarioConfig,
};
use clap::{Args, Parser, Subcommand};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "aflsim", version, about = "Asynchronous federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events.jsonl, metrics.json and resolved.toml.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's root seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an event log for the pace-interval and staleness-bound properties.
    Verify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        bound: u32,
    },
    /// Evaluate the ergodic convergence bound.
    Bound(BoundArgs),
    /// Write the `sample_id,client_id,label` partition of a scenario.
    Partition {
        #[arg(long)]
        scenario: PathBuf,
        /// Print a per-client summary instead of the full CSV on stdout.
        #[arg(long)]
        preview: bool,
        /// Write the CSV here (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BoundArgs {
    /// f(w⁰) − f*.
    #[arg(long)]
    f0: f64,
    /// Smoothness constant.
    #[arg(long = "L")]
    l: f64,
    #[arg(long = "sigma-l2")]
    sigma_l2: f64,
    #[arg(long = "sigma-g2")]
    sigma_g2: f64,
    #[arg(long = "G")]
    g: f64,
    /// Local steps per round.
    #[arg(long = "Q")]
    q: usize,
    /// One learning rate for every step, or a comma-separated schedule of Q rates.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    eta: Vec<f64>,
    #[arg(long)]
    b: u32,
    /// Server steps.
    #[arg(long = "T")]
    t: u64,
}

/// A failure with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::config(e.to_string())
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::config(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, out } => cmd_run(&scenario, seed, &out),
        Command::Verify { log, bound } => cmd_verify(&log, bound),
        Command::Bound(args) => cmd_bound(args),
        Command::Partition { scenario, preview, out } => cmd_partition(&scenario, preview, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    parse_scenario(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<u8, Failure> {
    let mut config = load_scenario(scenario)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let output = run_scenario(&config)?;

    fs::create_dir_all(out).map_err(io_failure(out))?;
    let resolved = out.join("resolved.toml");
    fs::write(&resolved, config.to_toml()).map_err(io_failure(&resolved))?;

    let events = out.join("events.jsonl");
    let file = fs::File::create(&events).map_err(io_failure(&events))?;
    let mut w = BufWriter::new(file);
    write_log(&mut w, &output.log)
        .and_then(|_| w.flush())
        .map_err(io_failure(&events))?;

    let summary = metrics_summary(&output.log, config.target_loss);
    let metrics = out.join("metrics.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::config(e.to_string()))?;
    fs::write(&metrics, json + "\n").map_err(io_failure(&metrics))?;

    println!(
        "{} aggregations, final loss {}, end time {}",
        summary.total_aggregations,
        summary
            .final_loss
            .map_or("n/a".to_string(), |l| format_significant(l, 6)),
        format_significant(summary.end_time, 6),
    );
    if output.diverged {
        eprintln!("run diverged; partial log written to {}", events.display());
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

fn cmd_verify(log_path: &Path, b: u32) -> Result<u8, Failure> {
    let file = fs::File::open(log_path).map_err(io_failure(log_path))?;
    let log = read_log(BufReader::new(file))?;
    let report = match verify(&log, b) {
        Ok(r) => r,
        Err(e @ (Error::MissingIntervalField { .. } | Error::UnmatchedSpan { .. } | Error::InvalidBound)) => {
            println!("FAIL: {e}");
            return Ok(EXIT_VERIFY_FAILED);
        }
        Err(e) => return Err(e.into()),
    };

    if report.violating_spans.is_empty() {
        println!("m={} ≤ b={}", report.max_count, report.b);
    } else {
        println!("m={} > b={}", report.max_count, report.b);
    }
    for span in &report.violating_spans {
        let end = span.end.map_or("open".to_string(), |t| t.to_string());
        let times: Vec<String> = span.aggregation_times.iter().map(|t| t.to_string()).collect();
        println!(
            "  span client={} [{}, {}] holds {} aggregations at {}",
            span.client,
            span.start,
            end,
            times.len(),
            times.join(", ")
        );
    }
    if report.lemma1_violations.is_empty() {
        println!("pace interval: no violations");
    } else {
        println!("pace interval: {} violations", report.lemma1_violations.len());
        for v in &report.lemma1_violations {
            println!(
                "  aggregation at {} follows {} within interval {}",
                v.aggregation_time, v.offending_time, v.interval
            );
        }
    }
    if report.pass {
        println!("PASS");
        Ok(0)
    } else {
        println!("FAIL");
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn cmd_bound(args: BoundArgs) -> Result<u8, Failure> {
    let eta_schedule = match args.eta.as_slice() {
        [single] => vec![*single; args.q],
        many => many.to_vec(),
    };
    let params = BoundParams {
        f0_minus_fstar: args.f0,
        l_smooth: args.l,
        sigma_l_sq: args.sigma_l2,
        sigma_g_sq: args.sigma_g2,
        g: args.g,
        q: args.q,
        eta_schedule,
        b: args.b,
        t: args.t,
    };
    let value = convergence_bound(&params)?;
    println!("{}", format_significant(value, 9));
    Ok(0)
}

fn cmd_partition(scenario: &Path, preview: bool, out: Option<&Path>) -> Result<u8, Failure> {
    let config = load_scenario(scenario)?;
    let (parts, labels) = scenario_partition(&config)?;

    if let Some(path) = out {
        let file = fs::File::create(path).map_err(io_failure(path))?;
        let mut w = BufWriter::new(file);
        write_partition_csv(&mut w, &parts, &labels)
            .and_then(|_| w.flush())
            .map_err(io_failure(path))?;
    }
    if preview {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        println!("client,samples,class_counts");
        for (client, members) in parts.iter().enumerate() {
            let mut counts = vec![0usize; classes];
            for &i in members {
                counts[labels[i]] += 1;
            }
            let counts: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
            println!("{client},{},{}", members.len(), counts.join(" "));
        }
    } else if out.is_none() {
        let stdout = io::stdout();
        let mut w = BufWriter::new(stdout.lock());
        write_partition_csv(&mut w, &parts, &labels)
            .and_then(|_| w.flush())
            .map_err(|e| Failure::config(e.to_string()))?;
    }
    Ok(0)
}
