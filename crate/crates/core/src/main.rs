use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtvbo::harness::{
    aggregate, final_round_summary, normalize_by_problem, run_bench, write_report_csv, write_results_csv, MethodPlan,
    RunTrace, Task,
};
use mtvbo::session::{parse_values, Session, SessionError};
use mtvbo::testbed::TestFunction;
use mtvbo::Error;

#[derive(Parser)]
#[command(name = "mtvbo", version, about = "Batch Bayesian optimization for few-round experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a session file from a bounds spec such as `0:1,-5:5`.
    New {
        session: PathBuf,
        #[arg(long)]
        bounds: String,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Design the next batch and store it as pending.
    Suggest {
        session: PathBuf,
        /// Replace a pending batch.
        #[arg(long)]
        force: bool,
    },
    /// Record measurements for the pending batch, in printed arm order.
    Tell {
        session: PathBuf,
        #[arg(required = true, allow_hyphen_values = true, num_args = 1..)]
        values: Vec<String>,
    },
    /// Run a benchmark and write results and report CSVs.
    Bench {
        /// Test function ids (comma separated), `all`, or `mountain_car`.
        #[arg(long, default_value = "ackley")]
        function: String,
        /// Dimensions (comma separated); ignored for mountain_car.
        #[arg(long, default_value = "3")]
        dim: String,
        /// Method ids (comma separated); `a:b:c` runs a per-round ensemble.
        #[arg(long, default_value = "mtv,sobol,random,ts")]
        methods: String,
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Measurement noise standard deviation for test functions.
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        /// Use the classical functions without a random distortion.
        #[arg(long)]
        no_distort: bool,
        /// Episodes averaged per mountain-car evaluation.
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, default_value = "results.csv")]
        results: PathBuf,
        #[arg(long, default_value = "report.csv")]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::New {
            session,
            bounds,
            batch,
            seed,
            force,
        } => cmd_new(session, &bounds, batch, seed, force),
        Command::Suggest { session, force } => cmd_suggest(session, force),
        Command::Tell { session, values } => cmd_tell(session, &values),
        Command::Bench {
            function,
            dim,
            methods,
            rounds,
            batch,
            reps,
            seed,
            noise_sd,
            no_distort,
            episodes,
            results,
            report,
        } => {
            let tasks = parse_tasks(&function, &dim, noise_sd, !no_distort, episodes);
            tasks
                .and_then(|tasks| cmd_bench(&tasks, &methods, rounds, batch, reps, seed, &results, &report))
                .map_err(SessionError::from)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn exit_code(e: &SessionError) -> i32 {
    match e {
        SessionError::Core(Error::UnknownId { .. }) => 2,
        other => other.exit_code(),
    }
}

fn cmd_new(path: PathBuf, bounds: &str, batch: usize, seed: u64, force: bool) -> Result<(), SessionError> {
    if path.exists() && !force {
        return Err(Error::InvalidConfig(format!("{} exists; pass --force to overwrite", path.display())).into());
    }
    let s = Session::new(Session::parse_bounds(bounds)?, batch, seed)?;
    s.save(&path)?;
    println!("created {} (d = {}, B = {batch})", path.display(), s.dimension());
    Ok(())
}

fn cmd_suggest(path: PathBuf, force: bool) -> Result<(), SessionError> {
    let mut s = Session::load(&path)?;
    let arms = s.suggest(force)?;
    s.save(&path)?;
    let header: Vec<String> = (1..=s.dimension()).map(|i| format!("{:>14}", format!("x{i}"))).collect();
    println!("{:>4}{}", "arm", header.join(""));
    for (i, arm) in arms.iter().enumerate() {
        let cols: Vec<String> = arm.iter().map(|v| format!("{v:>14.6}")).collect();
        println!("{:>4}{}", i + 1, cols.join(""));
    }
    Ok(())
}

fn cmd_tell(path: PathBuf, tokens: &[String]) -> Result<(), SessionError> {
    let mut s = Session::load(&path)?;
    let values = parse_values(tokens)?;
    s.tell(&values)?;
    s.save(&path)?;
    println!("recorded {} measurements ({} total)", values.len(), s.observations.len());
    Ok(())
}

fn parse_tasks(functions: &str, dims: &str, noise_sd: f64, distort: bool, episodes: usize) -> mtvbo::Result<Vec<Task>> {
    let dims: Vec<usize> = dims
        .split(',')
        .map(|d| {
            d.trim()
                .parse()
                .ok()
                .filter(|d| *d >= 1)
                .ok_or_else(|| Error::InvalidConfig(format!("bad dimension '{d}'")))
        })
        .collect::<mtvbo::Result<_>>()?;
    let mut tasks = Vec::new();
    for id in functions.split(',').map(str::trim) {
        if id.eq_ignore_ascii_case("mountain_car") || id.eq_ignore_ascii_case("mountain-car") {
            tasks.push(Task::MountainCar { episodes });
            continue;
        }
        let fns: Vec<TestFunction> = if id.eq_ignore_ascii_case("all") {
            TestFunction::ALL.to_vec()
        } else {
            vec![id.parse()?]
        };
        for &d in &dims {
            for &f in &fns {
                if d < f.min_dimension() && id.eq_ignore_ascii_case("all") {
                    continue;
                }
                tasks.push(Task::Function {
                    function: f,
                    dimension: d,
                    noise_sd,
                    distort,
                });
            }
        }
    }
    Ok(tasks)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    tasks: &[Task],
    methods: &str,
    rounds: usize,
    batch: usize,
    reps: usize,
    seed: u64,
    results: &PathBuf,
    report: &PathBuf,
) -> mtvbo::Result<()> {
    let plans: Vec<MethodPlan> = methods
        .split(',')
        .map(|m| MethodPlan::parse(m.trim(), rounds))
        .collect::<mtvbo::Result<_>>()?;
    let traces = run_bench(tasks, &plans, rounds, batch, reps, seed)?;
    for t in traces.iter().filter(|t| t.error.is_some()) {
        eprintln!(
            "warning: {} on {} (d = {}, rep {}) failed: {}",
            t.method,
            t.problem,
            t.dimension,
            t.replication,
            t.error.as_deref().unwrap_or_default()
        );
    }
    let refs: Vec<&RunTrace> = traces.iter().collect();
    let normalized = normalize_by_problem(&refs);
    write_results_csv(BufWriter::new(File::create(results)?), &refs, &normalized)?;
    let rows = aggregate(&refs, &normalized);
    write_report_csv(BufWriter::new(File::create(report)?), &rows)?;
    println!("{:<24}{:>12}", "method", "final mean");
    for (method, mean) in final_round_summary(&rows) {
        println!("{method:<24}{mean:>12.4}");
    }
    Ok(())
}
