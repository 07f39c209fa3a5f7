//! `ofdm-dual`: run the distributed allocation, the centralized baselines,
//! generate scenarios, and compare them.
//!
//! Exit codes: 0 converged (or success), 2 unconverged, 1 usage or
//! validation error, 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use ofdm_dual::bs_agent::{DEFAULT_ALPHA0, DEFAULT_EPSILON, DEFAULT_TAU, DEFAULT_WINDOW};
use ofdm_dual::compare::{compare, format_table};
use ofdm_dual::oracle::{dual_oracle_solve, exhaustive_grid_solve, DEFAULT_ORACLE_ITERS, DEFAULT_ORACLE_TOL};
use ofdm_dual::protocol::{DEFAULT_MAX_ROUNDS, DEFAULT_TIE_MARGIN, RNG_NAME};
use ofdm_dual::scenario_io::{
    benchmark_suite, generate_random_scenario, generate_symmetric_scenario, load_scenario, save_scenario,
    scenario_to_json, ScenarioRanges,
};
use ofdm_dual::trace::{write_trace_file, TraceMeta};
use ofdm_dual::{run_until_converged, Error, NetworkModel, RunConfig, Scenario, StepSchedule};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_UNCONVERGED: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "ofdm-dual", version, about = "Distributed tone and power allocation for uplink OFDM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the distributed price iteration and recover an allocation.
    Run(RunArgs),
    /// Solve centrally: relaxed dual subgradient, optionally brute force.
    Oracle(OracleArgs),
    /// Generate a random scenario document.
    Gen(GenArgs),
    /// Reduced vs full distributed runs vs the central baseline, as CSV.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct IterationArgs {
    /// Update only tones violating feasibility or slackness (default).
    #[arg(long, overrides_with = "full")]
    reduced: bool,
    /// Update every tone price each round.
    #[arg(long, overrides_with = "reduced")]
    full: bool,
    #[arg(long, default_value_t = DEFAULT_ALPHA0)]
    alpha0: f64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Constant step size instead of alpha0 / (1 + t / tau).
    #[arg(long, value_name = "ALPHA", conflicts_with_all = ["alpha0", "tau"])]
    constant_step: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Consecutive rounds the residual must stay below epsilon.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
    max_rounds: usize,
    /// Per-user priority margin on tone prices.
    #[arg(long, default_value_t = DEFAULT_TIE_MARGIN)]
    tie_margin: f64,
    /// Simulate delayed and lossy links.
    #[arg(long = "async")]
    asynchronous: bool,
    /// Link delay in rounds.
    #[arg(long, value_name = "R", default_value_t = 0, requires = "asynchronous")]
    delay: u32,
    /// Per-message drop probability in [0, 1).
    #[arg(long, value_name = "P", default_value_t = 0.0, requires = "asynchronous")]
    drop: f64,
    /// Seed of the link drop generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl IterationArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let schedule = match self.constant_step {
            Some(alpha) => StepSchedule::Constant { alpha },
            None => StepSchedule::Diminishing {
                alpha0: self.alpha0,
                tau: self.tau,
            },
        };
        let config = RunConfig {
            max_rounds: self.max_rounds,
            epsilon: self.epsilon,
            window: self.window,
            reduced: !self.full,
            schedule,
            synchronous: !self.asynchronous,
            network: NetworkModel::new(self.delay, self.drop, self.seed)?,
            tie_margin: self.tie_margin,
            ..RunConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    iteration: IterationArgs,
    /// Write the per-round CSV trace here (plus `<OUT>.meta.json`).
    #[arg(long, value_name = "OUT")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ORACLE_ITERS)]
    iters: usize,
    /// Stop once dual - primal <= tol * max(1, |dual|).
    #[arg(long, default_value_t = DEFAULT_ORACLE_TOL)]
    tol: f64,
    /// Also run the exhaustive search with this many points per budget.
    #[arg(long, value_name = "POINTS")]
    grid: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    users: usize,
    #[arg(long, default_value_t = 8)]
    tones: usize,
    /// Identical users and identical links.
    #[arg(long)]
    symmetric: bool,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Scenario documents to compare (repeatable).
    #[arg(long, required_unless_present = "suite")]
    scenario: Vec<PathBuf>,
    /// Instead of files, use this many mixed-size random instances.
    #[arg(long, value_name = "COUNT", conflicts_with = "scenario")]
    suite: Option<usize>,
    /// First seed of the random suite.
    #[arg(long, default_value_t = 1000)]
    suite_seed: u64,
    #[command(flatten)]
    iteration: IterationArgs,
    #[arg(long, default_value_t = DEFAULT_ORACLE_ITERS)]
    oracle_iters: usize,
    #[arg(long, default_value_t = DEFAULT_ORACLE_TOL)]
    oracle_tol: f64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_for(err: &Error) -> u8 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn emit(path: Option<&Path>, out: &mut dyn Write, text: &str) -> Result<(), Error> {
    match path {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<u8, Error> {
    let scenario = load_scenario(&args.scenario)?;
    let config = args.iteration.config()?;
    let outcome = run_until_converged(&scenario, &config)?;

    if let Some(path) = &args.trace {
        let meta = TraceMeta {
            seed: config.network.rng_seed,
            rng: RNG_NAME.to_string(),
            version: ofdm_dual::VERSION.to_string(),
            config: json!({
                "scenario": args.scenario.display().to_string(),
                "run": config,
            }),
        };
        write_trace_file(path, scenario.num_tones(), &outcome.trace, &meta)?;
    }

    let report = json!({
        "converged": outcome.converged,
        "rounds": outcome.rounds_used,
        "objective": outcome.objective,
        "final_residual": outcome.trace.last().map(|r| r.residual),
        "final_dual_value": outcome.trace.last().map(|r| r.dual_value),
        "total_updates": outcome.total_updates(),
        "final_prices": outcome.final_prices,
        "owner": outcome.allocation.owner,
        "power": outcome.allocation.power,
        "messages": {
            "sent": outcome.messages_sent,
            "delivered": outcome.messages_delivered,
            "dropped": outcome.messages_dropped,
        },
    });
    emit(None, out, &pretty(&report))?;
    Ok(if outcome.converged { EXIT_OK } else { EXIT_UNCONVERGED })
}

fn cmd_oracle(args: &OracleArgs, out: &mut dyn Write) -> Result<u8, Error> {
    let scenario = load_scenario(&args.scenario)?;
    let sol = dual_oracle_solve(&scenario, args.iters, args.tol)?;
    let mut report = json!({
        "dual_value": sol.dual_value,
        "primal_value": sol.primal_value,
        "gap": sol.gap(),
        "relative_gap": sol.relative_gap(),
        "iterations": sol.iterations,
        "iterations_to_tol": sol.iterations_to_tol,
        "prices": sol.prices,
        "owner": sol.allocation.owner,
        "power": sol.allocation.power,
    });
    if let Some(points) = args.grid {
        let grid = exhaustive_grid_solve(&scenario, points)?;
        report["grid"] = json!({
            "grid_points": points,
            "best_value": grid.best_value,
            "error_bound": grid.error_bound,
            "owner": grid.allocation.owner,
            "power": grid.allocation.power,
        });
    }
    emit(None, out, &pretty(&report))?;
    Ok(EXIT_OK)
}

fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<u8, Error> {
    let ranges = ScenarioRanges::default();
    let scenario = if args.symmetric {
        generate_symmetric_scenario(args.seed, args.users, args.tones, &ranges)?
    } else {
        generate_random_scenario(args.seed, args.users, args.tones, &ranges)?
    };
    match &args.out {
        Some(path) => save_scenario(&scenario, path)?,
        None => emit(None, out, &(scenario_to_json(&scenario) + "\n"))?,
    }
    Ok(EXIT_OK)
}

fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<u8, Error> {
    let config = args.iteration.config()?;
    let named: Vec<(String, Scenario)> = match args.suite {
        Some(count) => benchmark_suite(args.suite_seed, count, &ScenarioRanges::default())?
            .into_iter()
            .enumerate()
            .map(|(i, sc)| (format!("seed{}", args.suite_seed + i as u64), sc))
            .collect(),
        None => args
            .scenario
            .iter()
            .map(|p| Ok((p.display().to_string(), load_scenario(p)?)))
            .collect::<Result<_, Error>>()?,
    };
    let mut rows = Vec::with_capacity(named.len());
    for (label, scenario) in &named {
        rows.push(compare(label.clone(), scenario, &config, args.oracle_iters, args.oracle_tol)?);
    }
    emit(args.out.as_deref(), out, &format_table(&rows))?;
    let all_converged = rows.iter().all(|r| r.reduced.converged && r.full.converged);
    Ok(if all_converged { EXIT_OK } else { EXIT_UNCONVERGED })
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Reports go to `out`, diagnostics to `err`.
fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                EXIT_USAGE
            } else {
                let _ = out.write_all(text.as_bytes());
                EXIT_OK
            };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Oracle(a) => cmd_oracle(a, out),
        Command::Gen(a) => cmd_gen(a, out),
        Command::Compare(a) => cmd_compare(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_for(&e)
        }
    }
}

fn main() -> ExitCode {
    let code = run_cli(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    ExitCode::from(code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    struct Outcome {
        code: u8,
        stdout: String,
        stderr: String,
    }

    impl Outcome {
        fn json(&self) -> Value {
            serde_json::from_str(&self.stdout).expect("stdout is JSON")
        }
    }

    fn cli(args: &[&str]) -> Outcome {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_cli(std::iter::once("ofdm-dual").chain(args.iter().copied()), &mut out, &mut err);
        Outcome {
            code,
            stdout: String::from_utf8(out).unwrap(),
            stderr: String::from_utf8(err).unwrap(),
        }
    }

    fn gen(dir: &Path, name: &str, extra: &[&str]) -> String {
        let path = dir.join(name).display().to_string();
        let mut args = vec!["gen", "--out", &path];
        args.extend_from_slice(extra);
        assert_eq!(cli(&args).code, EXIT_OK);
        path
    }

    #[test]
    fn gen_to_stdout_is_a_scenario_document() {
        let a = cli(&["gen", "--seed", "5", "--users", "2", "--tones", "3"]);
        assert_eq!(a.code, EXIT_OK);
        let doc = a.json();
        assert_eq!(doc["num_users"], 2);
        assert_eq!(doc["gain"].as_array().unwrap().len(), 6);
        assert_eq!(a.stdout, cli(&["gen", "--seed", "5", "--users", "2", "--tones", "3"]).stdout);
    }

    #[test]
    fn help_and_version_exit_zero() {
        let help = cli(&["--help"]);
        assert_eq!(help.code, EXIT_OK);
        assert!(help.stdout.contains("compare"));
        assert_eq!(cli(&["--version"]).code, EXIT_OK);
    }

    #[test]
    fn run_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let sc = gen(dir.path(), "s.json", &["--seed", "2", "--users", "2", "--tones", "4"]);

        let ok = cli(&["run", "--scenario", &sc]);
        assert_eq!(ok.code, EXIT_OK);
        assert_eq!(ok.json()["converged"], true);
        assert!(ok.json()["objective"].as_f64().unwrap() > 0.0);

        let short = cli(&["run", "--scenario", &sc, "--max-rounds", "2"]);
        assert_eq!(short.code, EXIT_UNCONVERGED);
        assert_eq!(short.json()["converged"], false);

        for bad in [
            vec!["run"],
            vec!["run", "--scenario", &sc, "--epsilon", "-1"],
            vec!["run", "--scenario", &sc, "--async", "--drop", "1"],
            vec!["run", "--scenario", &sc, "--delay", "2"],
            vec!["run", "--scenario", &sc, "--alpha0", "0"],
            vec!["run", "--scenario", &sc, "--constant-step", "0.1", "--tau", "3"],
            vec!["run", "--scenario", "/definitely/missing.json"],
            vec!["frobnicate"],
        ] {
            let o = cli(&bad);
            assert_eq!(o.code, EXIT_USAGE, "{bad:?}");
            assert!(!o.stderr.is_empty());
        }
    }

    #[test]
    fn numerical_errors_map_to_three() {
        assert_eq!(exit_for(&Error::Numerical("nan".into())), EXIT_NUMERICAL);
        let stuck = Error::NoConvergence {
            iterations: 200,
            lo: 0.0,
            hi: 1.0,
        };
        assert_eq!(exit_for(&stuck), EXIT_NUMERICAL);
        assert_eq!(exit_for(&Error::Config("x".into())), EXIT_USAGE);
    }

    #[test]
    fn invalid_documents_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"num_users": 1, "num_tones": 1, "gain": [1.0], "noise": [1.0], "self_noise": [0.0],
                "snr_cap": ["inf"], "power_budget": [-1], "weight": [1.0]}"#,
        )
        .unwrap();
        let o = cli(&["run", "--scenario", path.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_USAGE);
        assert!(o.stderr.contains("power_budget[0] must be > 0"));
    }

    #[test]
    fn trace_and_sidecar_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let sc = gen(dir.path(), "s.json", &["--seed", "9", "--users", "3", "--tones", "4"]);
        let trace = dir.path().join("t.csv");
        let o = cli(&[
            "run", "--scenario", &sc, "--async", "--delay", "1", "--drop", "0.1", "--seed", "4",
            "--trace", trace.to_str().unwrap(),
        ]);
        assert!(o.code == EXIT_OK || o.code == EXIT_UNCONVERGED);
        let rounds = o.json()["rounds"].as_u64().unwrap();
        let records = ofdm_dual::trace::read_trace_file(&trace).unwrap();
        assert_eq!(records.len() as u64, rounds);

        let meta: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.csv.meta.json")).unwrap()).unwrap();
        assert_eq!(meta["seed"], 4);
        assert_eq!(meta["rng"], RNG_NAME);
        assert_eq!(meta["config"]["run"]["network"]["delay_rounds"], 1);
        assert_eq!(meta["config"]["run"]["synchronous"], false);
    }

    #[test]
    fn full_flag_overrides_reduced() {
        let dir = tempfile::tempdir().unwrap();
        let sc = gen(dir.path(), "s.json", &["--seed", "4", "--users", "2", "--tones", "4"]);
        let full = cli(&["run", "--scenario", &sc, "--full"]).json();
        let both = cli(&["run", "--scenario", &sc, "--reduced", "--full"]).json();
        let reduced = cli(&["run", "--scenario", &sc]).json();
        assert_eq!(full["total_updates"], both["total_updates"]);
        assert!(reduced["total_updates"].as_u64() < full["total_updates"].as_u64());
    }

    #[test]
    fn oracle_reports_both_baselines() {
        let dir = tempfile::tempdir().unwrap();
        let sc = gen(dir.path(), "s.json", &["--seed", "3", "--users", "2", "--tones", "2"]);
        let o = cli(&["oracle", "--scenario", &sc, "--iters", "2000", "--grid", "51"]);
        assert_eq!(o.code, EXIT_OK);
        let r = o.json();
        let dual = r["dual_value"].as_f64().unwrap();
        assert!(dual + 1e-9 >= r["primal_value"].as_f64().unwrap());
        assert!(r["grid"]["best_value"].as_f64().unwrap() <= dual + 1e-9);

        let too_big = gen(dir.path(), "big.json", &["--users", "4", "--tones", "4"]);
        assert_eq!(cli(&["oracle", "--scenario", &too_big, "--iters", "10", "--grid", "11"]).code, EXIT_USAGE);
    }

    #[test]
    fn compare_table_for_files_and_suite() {
        let dir = tempfile::tempdir().unwrap();
        let a = gen(dir.path(), "a.json", &["--seed", "1", "--users", "2", "--tones", "4"]);
        let b = gen(dir.path(), "b.json", &["--seed", "2", "--users", "3", "--tones", "4", "--symmetric"]);
        let o = cli(&["compare", "--scenario", &a, "--scenario", &b, "--oracle-iters", "2000"]);
        assert_eq!(o.code, EXIT_OK);
        let lines: Vec<&str> = o.stdout.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], ofdm_dual::compare::TABLE_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with(&a));

        let path = dir.path().join("table.csv");
        let o = cli(&["compare", "--suite", "2", "--oracle-iters", "500", "--out", path.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_OK);
        assert!(o.stdout.is_empty());
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.lines().nth(2).unwrap().starts_with("seed1000,2,4,"));

        assert_eq!(cli(&["compare"]).code, EXIT_USAGE);
    }
}
