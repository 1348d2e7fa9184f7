//! `mapos`: optimize, evaluate, sweep and validate from the command line.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or configuration
//! error, 3 numeric failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mapos::engine::EngineKind;
use mapos::laga;
use mapos::scenario;
use mapos::validate::{self, Level, Subjects};
use mapos::Error;
use serde_json::json;

use config::{ConfigError, InitialLayout, Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "mapos", version, about = "Movable-antenna position optimization from statistical CSI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for parallel realizations (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    /// Print progress and the config hash to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "DIR", default_value = ".")]
    output: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_parser = ["mc", "de"])]
    engine: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the layout for one user draw; writes layout.json and trace.csv.
    Optimize(RunArgs),
    /// Compare placement schemes; writes report.csv and summary.json.
    Evaluate(RunArgs),
    /// Run one experiment per sweep value; writes sweep.csv and summary.json.
    Sweep(RunArgs),
    /// Run the self-check suites and print a pass/fail table.
    Validate {
        #[arg(long, default_value = "quick")]
        level: Level,
        /// Negative control: water-filling with the water level off by 1%.
        #[arg(long, hide = true)]
        tamper_water_fill: bool,
    },
}

enum Failure {
    Config(String),
    Numeric(String),
    Validation,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation => 1,
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

/// Attributes a library error to the operation that raised it.
fn in_op(op: &'static str) -> impl Fn(Error) -> Failure {
    move |e| match e {
        Error::InvalidInput(_) | Error::Unsupported(_) | Error::Json(_) => Failure::Config(format!("{op}: {e}")),
        _ => Failure::Numeric(format!("{op}: {e}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.into()).build_global() {
            eprintln!("mapos: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Optimize(args) => with_config(&args, cli.verbose, optimize),
        Command::Evaluate(args) => with_config(&args, cli.verbose, evaluate),
        Command::Sweep(args) => with_config(&args, cli.verbose, sweep),
        Command::Validate { level, tamper_water_fill } => run_validate(level, tamper_water_fill),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) | Failure::Numeric(m) => eprintln!("mapos: {m}"),
                Failure::Validation => eprintln!("mapos: validation failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn with_config(
    args: &RunArgs,
    verbose: bool,
    run: fn(&RunConfig, &Path, &str, bool) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let overrides = Overrides {
        seed: args.seed,
        engine: args.engine.as_deref().map(|e| e.parse::<EngineKind>().expect("checked by clap")),
    };
    let cfg = RunConfig::load(&args.config, overrides)?;
    fs::create_dir_all(&args.output)
        .map_err(|e| Failure::Config(format!("cannot create output directory `{}`: {e}", args.output.display())))?;
    let hash = cfg.hash();
    if verbose {
        eprintln!("config hash {hash}");
    }
    run(&cfg, &args.output, &hash, verbose)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Config(format!("cannot write `{}`: {e}", path.display())))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    write(dir, name, &text)
}

fn optimize(cfg: &RunConfig, out: &Path, hash: &str, verbose: bool) -> Result<(), Failure> {
    let spec = &cfg.scenario;
    let r = cfg.optimize.realization;
    let (csi, seed) = scenario::realization_setup(spec, r).map_err(in_op("realization_setup"))?;
    let init = match cfg.optimize.initial {
        InitialLayout::UpaSparse => scenario::sparse_initial_layout(spec, cfg.experiment.sparse_shrink),
        InitialLayout::UpaDense => laga::upa_dense_init(spec.n_antennas, spec.wavelength),
    }
    .map_err(in_op("initial layout"))?;
    let mut lcfg = cfg.laga.clone();
    lcfg.seed = seed;
    if verbose {
        eprintln!("optimizing realization {r} with the {:?} engine", lcfg.engine);
    }
    let (layout, trace) =
        laga::laga_optimize(&init, &spec.region, &csi, spec.pt, spec.sigma2, &lcfg).map_err(in_op("laga_optimize"))?;
    let eval_seed = scenario::realization_eval_seed(spec, &cfg.experiment_options(), r);
    let ergodic = |l| {
        scenario::evaluate_ergodic_rate(l, &csi, spec.pt, spec.sigma2, cfg.experiment.eval_samples, &eval_seed)
            .map_err(in_op("evaluate_ergodic_rate"))
    };
    let (before, after) = (ergodic(&init)?, ergodic(&layout)?);
    write_json(
        out,
        "layout.json",
        &json!({
            "x": layout.x(),
            "y": layout.y(),
            "config_hash": hash,
            "engine": lcfg.engine,
            "realization": r,
            "surrogate_rate_initial": trace.initial_rate,
            "surrogate_rate_final": trace.final_rate,
            "ergodic_rate_initial": before.mean,
            "ergodic_rate_final": after.mean,
        }),
    )?;
    write(out, "trace.csv", &trace.to_csv(Some(&format!("config-hash: {hash}"))))?;
    println!(
        "ergodic sum rate {:.4} -> {:.4} bit/s/Hz ({} stages, {} iterations)",
        before.mean,
        after.mean,
        trace.stages.len(),
        trace.rows.len()
    );
    Ok(())
}

fn print_reports(reports: &[scenario::EvalReport]) {
    for r in reports {
        println!(
            "{:<18} {:>9.4} ± {:.4}  ({} failed)",
            r.scheme.label(),
            r.mean_rate,
            r.std_error,
            r.failures()
        );
    }
}

fn evaluate(cfg: &RunConfig, out: &Path, hash: &str, _verbose: bool) -> Result<(), Failure> {
    let reports = scenario::run_experiment(
        &cfg.scenario,
        &cfg.schemes(),
        cfg.experiment.realizations,
        &cfg.experiment_options(),
    )
    .map_err(in_op("run_experiment"))?;
    write(out, "report.csv", &scenario::reports_to_csv(&reports, Some(&format!("config-hash: {hash}")), None))?;
    write_json(
        out,
        "summary.json",
        &json!({"config_hash": hash, "schemes": scenario::reports_summary_json(&reports)}),
    )?;
    print_reports(&reports);
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &Path, hash: &str, verbose: bool) -> Result<(), Failure> {
    let Some(sw) = &cfg.sweep else {
        return Err(Failure::Config("sweep: the config has no `sweep` section".into()));
    };
    let opts = cfg.experiment_options();
    let mut results = Vec::with_capacity(sw.values.len());
    for &v in &sw.values {
        let (axis, value) = sw.axis.to_library(v);
        if verbose {
            eprintln!("{} = {v}", sw.axis.name());
        }
        let spec = cfg.scenario.with_axis(axis, value).map_err(in_op("sweep"))?;
        let reports = scenario::run_experiment(&spec, &cfg.schemes(), cfg.experiment.realizations, &opts)
            .map_err(in_op("run_experiment"))?;
        results.push((v, reports));
    }
    write(
        out,
        "sweep.csv",
        &scenario::sweep_to_csv(sw.axis.name(), &results, Some(&format!("config-hash: {hash}"))),
    )?;
    let summary: Vec<_> = results
        .iter()
        .map(|(v, reports)| json!({"value": v, "schemes": scenario::reports_summary_json(reports)}))
        .collect();
    write_json(out, "summary.json", &json!({"config_hash": hash, "axis": sw.axis.name(), "points": summary}))?;
    for (v, reports) in &results {
        println!("{} = {v}", sw.axis.name());
        print_reports(reports);
    }
    Ok(())
}

fn run_validate(level: Level, tamper: bool) -> Result<(), Failure> {
    let tampered = validate::tampered_water_fill(0.01);
    let report = if tamper {
        validate::run_with(level, &Subjects { water_fill: &tampered })
    } else {
        validate::run(level)
    };
    print!("{}", report.to_table());
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Validation)
    }
}
