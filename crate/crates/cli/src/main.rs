//! `drg`: synthesize admissible sets, run and compare governed scenarios,
//! and check invariants.
//!
//! Exit codes: 0 success, 1 a run violated constraints or left an
//! infeasible problem unrecovered, or a verification check failed,
//! 2 bad arguments or configuration, 3 synthesis failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use drg_core::config::{self, RunConfig, Tolerances};
use drg_core::model::CascadeModel;
use drg_core::sets::{self, SetSuite, SetsError, SynthesisOptions, ENLARGE_HINT};
use drg_core::sim::{self, GovernorChoice, RunOutput, Scenario, SubsystemMetrics};
use drg_core::verify::{self, SET_TOL};
use drg_core::ClosedLoopCascade64;

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SYNTH: u8 = 3;

#[derive(Parser)]
#[command(
    name = "drg",
    version,
    about = "Decentralized reference governor for cascade systems"
)]
struct Cli {
    /// Output directory
    #[arg(long, global = true, env = "DRG_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Log level (error, warn, info, debug)
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the admissible sets of a model and write them with a manifest
    Synth(SynthArgs),
    /// Run one scenario and write its trace, events and metrics
    Run(RunArgs),
    /// Run a scenario under both governors and compare them
    Compare(CompareArgs),
    /// Check the invariants of an exported set suite
    Verify(RunArgs),
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps_rpi: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Dct,
    Sct,
    None,
}

impl From<VariantArg> for GovernorChoice {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Dct => GovernorChoice::Dct,
            VariantArg::Sct => GovernorChoice::Sct,
            VariantArg::None => GovernorChoice::None,
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run file naming the model and scenario
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    governor: Option<VariantArg>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps_rpi: Option<f64>,
    /// Set-suite directory (default: <out-dir>/sets)
    #[arg(long)]
    sets: Option<PathBuf>,
    /// Synthesize and export the sets when the directory has none
    #[arg(long)]
    auto_synth: bool,
    /// Write one text dump per solve under <out-dir>/dumps
    #[arg(long)]
    debug_dumps: bool,
}

#[derive(Args, Clone)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Separate run file for the static variant (default: same as --config)
    #[arg(long)]
    sct_config: Option<PathBuf>,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: EXIT_CONFIG,
            err: e.into(),
        }
    }
}

fn fail(code: u8, err: anyhow::Error) -> Failure {
    Failure { code, err }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(&cli.out_dir, a),
        Command::Run(a) => cmd_run(&cli.out_dir, a),
        Command::Compare(a) => cmd_compare(&cli.out_dir, a),
        Command::Verify(a) => cmd_verify(&cli.out_dir, a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn resolve_run(
    args: &RunArgs,
    config_path: Option<&Path>,
) -> Result<(CascadeModel<f64>, Scenario, Option<PathBuf>), Failure> {
    let mut cfg = match config_path.or(args.config.as_deref()) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            schema_version: config::SCHEMA_VERSION,
            model: args
                .model
                .clone()
                .ok_or_else(|| anyhow!("either --config or --model is required"))?,
            scenario: args.scenario.clone().unwrap_or_default(),
            governor: None,
            horizon: None,
            seed: None,
            tolerances: Tolerances::default(),
            out_dir: None,
        },
    };
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    if let Some(s) = &args.scenario {
        cfg.scenario = s.clone();
    }
    if cfg.scenario.as_os_str().is_empty() {
        return Err(anyhow!("a scenario is required (--scenario or the run file)").into());
    }
    cfg.governor = args.governor.map(Into::into).or(cfg.governor);
    cfg.horizon = args.horizon.or(cfg.horizon);
    if cfg.horizon == Some(0) {
        return Err(anyhow!("--horizon must be at least 1").into());
    }
    cfg.seed = args.seed.or(cfg.seed);
    cfg.tolerances.eps = args.eps.or(cfg.tolerances.eps);
    cfg.tolerances.eps_rpi = args.eps_rpi.or(cfg.tolerances.eps_rpi);
    let (model, scenario) = cfg.resolve()?;
    Ok((model, scenario, cfg.out_dir))
}

fn synthesize(model: &CascadeModel<f64>) -> Result<(ClosedLoopCascade64, SetSuite<f64>), Failure> {
    let cascade = model
        .close_loops()
        .map_err(|e| fail(EXIT_SYNTH, anyhow!("closing the loops: {e}")))?;
    let suite = sets::synthesize(&cascade, &SynthesisOptions::from_design(&cascade.design)).map_err(|e| {
        let hint = match &e {
            SetsError::EmptyTightened { .. } | SetsError::EmptySteady { .. } | SetsError::EmptyMoas { .. } => {
                format!("; {ENLARGE_HINT}")
            }
            _ => String::new(),
        };
        fail(EXIT_SYNTH, anyhow!("synthesis failed at {}: {e}{hint}", stage_name(&e)))
    })?;
    Ok((cascade, suite))
}

fn stage_name(e: &SetsError) -> &'static str {
    match e {
        SetsError::EmptyTightened { .. } => "transient tightening",
        SetsError::EmptySteady { .. } | SetsError::MrpiIterationCap { .. } => "steady tightening",
        SetsError::NotObservable { .. } | SetsError::MoasNotDetermined { .. } | SetsError::EmptyMoas { .. } => {
            "admissible set"
        }
        _ => "set algebra",
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_synth(out: &Path, a: &SynthArgs) -> Result<u8, Failure> {
    let mut model = config::load_model(&a.model)?;
    if let Some(n) = a.horizon {
        model.design.horizon = n;
    }
    if let Some(e) = a.eps {
        model.design.eps = e;
    }
    if let Some(e) = a.eps_rpi {
        model.design.eps_rpi = e;
    }
    let (_, suite) = synthesize(&model)?;
    let dir = out.join("sets");
    let manifest = sets::export_suite(&suite, &dir).map_err(|e| fail(EXIT_SYNTH, e.into()))?;
    println!(
        "wrote {} sets for {} subsystems to {}",
        manifest.entries.len(),
        suite.subsystems.len(),
        dir.display()
    );
    for d in &manifest.diagnostics {
        let facets = |name: &str| {
            manifest
                .entries
                .iter()
                .find(|e| e.subsystem == d.subsystem && e.name == name)
                .map_or(0, |e| e.facets)
        };
        println!(
            "subsystem {}: o_eps {} facets, xu_inf {} facets, mrpi power {} (alpha {:.2e}), moas determined at {}",
            d.subsystem,
            facets("o_eps"),
            facets("xu_inf"),
            d.mrpi_power,
            d.mrpi_alpha,
            d.moas_determined_at
        );
    }
    Ok(0)
}

/// Loads the suite directory and checks it matches the model; exports a
/// fresh one first when asked to.
fn ensure_sets(dir: &Path, suite: &SetSuite<f64>, auto: bool) -> Result<(), Failure> {
    let fresh = tempfile::tempdir().context("creating a scratch directory")?;
    sets::export_suite(suite, fresh.path()).map_err(|e| fail(EXIT_SYNTH, e.into()))?;
    let expected = fs::read_to_string(fresh.path().join(sets::MANIFEST_FILE)).context("reading fresh manifest")?;
    if !dir.join(sets::MANIFEST_FILE).exists() {
        if !auto {
            return Err(anyhow!(
                "no set suite in {} (run `drg synth` first or pass --auto-synth)",
                dir.display()
            )
            .into());
        }
        sets::export_suite(suite, dir).map_err(|e| fail(EXIT_SYNTH, e.into()))?;
        return Ok(());
    }
    sets::load_suite::<f64>(dir).map_err(|e| fail(EXIT_FAILED, anyhow!("set suite in {}: {e}", dir.display())))?;
    let found = fs::read_to_string(dir.join(sets::MANIFEST_FILE)).context("reading manifest")?;
    if found != expected {
        return Err(fail(
            EXIT_FAILED,
            anyhow!(
                "set suite in {} does not match the model; synthesize again",
                dir.display()
            ),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    scenario: &'a str,
    governor: GovernorChoice,
    steps: usize,
    seed: u64,
    subsystems: &'a [SubsystemMetrics],
    alpha_ad: &'a Option<Vec<Vec<f64>>>,
    unrecovered_infeasible: usize,
    causality_violations: usize,
}

struct Executed {
    scenario: Scenario,
    output: RunOutput,
    metrics: Vec<SubsystemMetrics>,
    unrecovered: usize,
}

fn execute(
    out: &Path,
    args: &RunArgs,
    config_path: Option<&Path>,
    governor: Option<GovernorChoice>,
    tag: &str,
) -> Result<Executed, Failure> {
    let (model, mut scenario, cfg_out) = resolve_run(args, config_path)?;
    if let Some(g) = governor {
        scenario.governor = g;
    }
    let out = cfg_out
        .as_deref()
        .filter(|_| std::env::var_os("DRG_OUT_DIR").is_none())
        .unwrap_or(out);
    let (cascade, suite) = synthesize(&model)?;
    if scenario.governor != GovernorChoice::None {
        let dir = args.sets.clone().unwrap_or_else(|| out.join("sets"));
        ensure_sets(&dir, &suite, args.auto_synth)?;
    }
    let output = if args.debug_dumps && scenario.governor != GovernorChoice::None {
        run_with_dumps(&cascade, &suite, &scenario, &out.join("dumps").join(tag))?
    } else {
        sim::simulate(&cascade, &suite, &scenario, None).map_err(|e| fail(EXIT_FAILED, e.into()))?
    };
    let xu: Vec<_> = cascade.subsystems.iter().map(|c| c.xu.clone()).collect();
    let nx: Vec<_> = cascade.subsystems.iter().map(|c| c.nx).collect();
    let metrics = sim::metrics(&output.trace, &xu, &nx, output.alpha_ad.as_deref());
    let unrecovered = output
        .events
        .iter()
        .filter(|e| !e.feasible && e.margin < -SET_TOL)
        .count();
    let prefix = if tag.is_empty() {
        String::new()
    } else {
        format!("{tag}_")
    };
    write(&out.join(format!("{prefix}trace.csv")), &output.trace.to_csv_string())?;
    let mut events = csv::Writer::from_writer(Vec::new());
    for e in &output.events {
        events.serialize(e)?;
    }
    write(
        &out.join(format!("{prefix}events.csv")),
        &String::from_utf8(events.into_inner()?)?,
    )?;
    let file = MetricsFile {
        scenario: &scenario.name,
        governor: scenario.governor,
        steps: scenario.steps,
        seed: scenario.seed,
        subsystems: &metrics,
        alpha_ad: &output.alpha_ad,
        unrecovered_infeasible: unrecovered,
        causality_violations: output.causality_violations.len(),
    };
    write(
        &out.join(format!("{prefix}metrics.json")),
        &(serde_json::to_string_pretty(&file)? + "\n"),
    )?;
    Ok(Executed {
        scenario,
        output,
        metrics,
        unrecovered,
    })
}

fn run_with_dumps(
    cascade: &ClosedLoopCascade64,
    suite: &SetSuite<f64>,
    scenario: &Scenario,
    dir: &Path,
) -> Result<RunOutput, Failure> {
    let out = sim::simulate_with(cascade, suite, scenario, None, |k, i, dump| {
        let path = dir.join(format!("k{k:04}_s{}.txt", i + 1));
        if let Some(p) = path.parent() {
            let _ = fs::create_dir_all(p);
        }
        if let Err(e) = fs::write(&path, dump) {
            log::warn!("writing {}: {e}", path.display());
        }
    })
    .map_err(|e| fail(EXIT_FAILED, e.into()))?;
    Ok(out)
}

fn summary(e: &Executed) -> bool {
    let violated = e.metrics.iter().any(|m| m.max_violation > SET_TOL);
    println!(
        "{} ({}, {} steps, seed {})",
        e.scenario.name,
        e.scenario.governor.as_str(),
        e.scenario.steps,
        e.scenario.seed
    );
    for m in &e.metrics {
        println!(
            "  subsystem {}: violation {:.3e}, tracking {:.4}, fallbacks {}, infeasible {}{}",
            m.subsystem,
            m.max_violation,
            m.tracking_error,
            m.fallbacks,
            m.infeasible,
            m.alpha_gap
                .map(|g| format!(", |alpha - alpha_ad| {g:.2e}"))
                .unwrap_or_default()
        );
    }
    !violated && e.unrecovered == 0 && e.output.causality_violations.is_empty()
}

fn cmd_run(out: &Path, a: &RunArgs) -> Result<u8, Failure> {
    let e = execute(out, a, None, None, "")?;
    Ok(if summary(&e) { 0 } else { EXIT_FAILED })
}

#[derive(Serialize)]
struct Comparison {
    scenario: String,
    subsystems: Vec<ComparedSubsystem>,
    dct_total_tracking: f64,
    sct_total_tracking: f64,
    dct_not_worse: bool,
}

#[derive(Serialize)]
struct ComparedSubsystem {
    subsystem: usize,
    dct_tracking: f64,
    sct_tracking: f64,
    dct_final_gap: f64,
    sct_final_gap: f64,
    dct_not_worse: bool,
}

fn final_gap(run: &RunOutput, i: usize) -> f64 {
    run.trace
        .of(i)
        .last()
        .map_or(0.0, |r| r.y.iter().zip(&r.y_r).map(|(y, t)| (y - t).abs()).sum())
}

fn cmd_compare(out: &Path, a: &CompareArgs) -> Result<u8, Failure> {
    let dct = execute(out, &a.run, None, Some(GovernorChoice::Dct), "dct")?;
    let sct = execute(out, &a.run, a.sct_config.as_deref(), Some(GovernorChoice::Sct), "sct")?;
    summary(&dct);
    summary(&sct);
    let subsystems: Vec<ComparedSubsystem> = dct
        .metrics
        .iter()
        .zip(&sct.metrics)
        .map(|(d, s)| ComparedSubsystem {
            subsystem: d.subsystem,
            dct_tracking: d.tracking_error,
            sct_tracking: s.tracking_error,
            dct_final_gap: final_gap(&dct.output, d.subsystem),
            sct_final_gap: final_gap(&sct.output, s.subsystem),
            dct_not_worse: d.tracking_error <= s.tracking_error,
        })
        .collect();
    let dt: f64 = dct.metrics.iter().map(|m| m.tracking_error).sum();
    let st: f64 = sct.metrics.iter().map(|m| m.tracking_error).sum();
    let report = Comparison {
        scenario: dct.scenario.name.clone(),
        subsystems,
        dct_total_tracking: dt,
        sct_total_tracking: st,
        dct_not_worse: dt <= st,
    };
    println!(
        "cumulative tracking error: dct {dt:.4}, sct {st:.4} ({})",
        if report.dct_not_worse {
            "dct not worse"
        } else {
            "dct worse"
        }
    );
    write(
        &out.join("comparison.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    Ok(0)
}

fn cmd_verify(out: &Path, a: &RunArgs) -> Result<u8, Failure> {
    let (model, _, cfg_out) = match (&a.config, &a.scenario) {
        (None, None) => {
            let m = a
                .model
                .clone()
                .ok_or_else(|| anyhow!("either --config or --model is required"))?;
            (
                config::load_model(&m)?,
                Scenario::nominal(vec![], 0, GovernorChoice::None),
                None,
            )
        }
        _ => resolve_run(a, None)?,
    };
    let out = cfg_out
        .as_deref()
        .filter(|_| std::env::var_os("DRG_OUT_DIR").is_none())
        .unwrap_or(out);
    let (cascade, suite) = synthesize(&model)?;
    let dir = a.sets.clone().unwrap_or_else(|| out.join("sets"));
    if !dir.join(sets::MANIFEST_FILE).exists() {
        if !a.auto_synth {
            return Err(anyhow!(
                "no set suite in {} (run `drg synth` first or pass --auto-synth)",
                dir.display()
            )
            .into());
        }
        sets::export_suite(&suite, &dir).map_err(|e| fail(EXIT_SYNTH, e.into()))?;
    }
    let files = sets::load_suite_lenient::<f64>(&dir)
        .map_err(|e| fail(EXIT_FAILED, anyhow!("set suite in {}: {e}", dir.display())))?;
    let report = verify::verify(&cascade, &suite, &files);
    println!("{}", report.to_json());
    write(&out.join("verify.json"), &(report.to_json() + "\n"))?;
    for c in report.failures() {
        eprintln!(
            "FAILED {}: residual {:.3e} > {:.1e} {}",
            c.name, c.residual, c.tolerance, c.detail
        );
    }
    Ok(if report.passed { 0 } else { EXIT_FAILED })
}
