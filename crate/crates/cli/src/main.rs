use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ilc_core::config::{check_config, load_config, parse_config, preset, render_config};
use ilc_core::diagnostics::{analyze, compare_estimate_snapshot, read_trials, replay_history, AnalysisOptions};
use ilc_core::engine::{run, RunConfig, SnapshotSchedule, ORACLE_TRIALS_FILE};
use ilc_core::estimator::EstimateTable;
use ilc_core::output::{fmt_num, write_atomic};
use ilc_core::plant::PlantRegistry;
use ilc_core::IlcError;

const CONFIG_FILE: &str = "config.txt";
const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
const SWEEP_FILE: &str = "sweep.csv";

#[derive(Parser)]
#[command(name = "ilc", version, about = "Optimization-based adaptive ILC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV artifacts.
    Run(RunArgs),
    /// Check the convergence analysis against a recorded run.
    Diagnose(DiagnoseArgs),
    /// Run several configurations and collect their final metrics.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Overrides {
    /// Seed for the disturbance and initial-shift draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of learning iterations K.
    #[arg(long)]
    iterations: Option<usize>,
    /// Skip the oracle metrics and the trial log needed by `diagnose`.
    #[arg(long)]
    no_diagnostics: bool,
    /// Snapshot iterations, e.g. `0,400,1000`, or `default` / `none`.
    #[arg(long)]
    snapshots: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file or preset name.
    #[arg(long, short)]
    config: String,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Directory written by `ilc run`.
    run_dir: PathBuf,
    /// Where to write the per-(k, t) table; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative tolerance of the recursion identities.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Configuration globs or preset names.
    #[arg(required = true)]
    configs: Vec<String>,
    /// Directory for sweep.csv.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, short)]
    jobs: Option<usize>,
}

/// Missing or inconsistent run artifacts.
#[derive(Debug)]
struct Artifacts(String);

impl fmt::Display for Artifacts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Artifacts {}

/// Some check or sweep entry failed; details were already printed.
#[derive(Debug)]
struct ChecksFailed;

impl fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("one or more checks failed")
    }
}

impl std::error::Error for ChecksFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Artifacts>().is_some() {
        return 2;
    }
    match err.downcast_ref::<IlcError>() {
        Some(IlcError::NonFiniteOutput { .. }) => 3,
        Some(
            IlcError::Config { .. }
            | IlcError::InvalidParams { .. }
            | IlcError::UnknownPlant(_)
            | IlcError::Parse { .. }
            | IlcError::Io { .. },
        ) => 2,
        _ => 1,
    }
}

fn parse_snapshots(text: &str) -> Result<SnapshotSchedule> {
    Ok(match text {
        "default" => SnapshotSchedule::Default,
        "none" => SnapshotSchedule::None,
        _ => SnapshotSchedule::List(
            text.split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| IlcError::Config {
                    key: "--snapshots".into(),
                    reason: e.to_string(),
                })?,
        ),
    })
}

fn apply(overrides: &Overrides, config: &mut RunConfig) -> Result<()> {
    if let Some(seed) = overrides.seed {
        config.uncertainty.seed = seed;
    }
    if let Some(k) = overrides.iterations {
        config.iterations = k;
    }
    if overrides.no_diagnostics {
        config.diagnostics = false;
    }
    if let Some(s) = &overrides.snapshots {
        config.snapshots = parse_snapshots(s)?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let registry = PlantRegistry::builtin();
    let mut config = load_config(&args.config)?;
    apply(&args.overrides, &mut config)?;
    check_config(&config, &registry)?;
    let record = run(&config, &registry)?;
    record.write_artifacts(&args.out)?;
    let rendered = render_config(&config);
    write_atomic(&args.out.join(CONFIG_FILE), |w| w.write_all(rendered.as_bytes()))?;
    let last = record.final_metrics();
    println!(
        "k = {}: final max |e| = {:.3e}, sup |u| = {:.4}, resets = {}",
        last.k,
        last.max_abs_e,
        record.sup_abs_input(),
        record.total_resets()
    );
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let dir = &args.run_dir;
    let config_path = dir.join(CONFIG_FILE);
    let trials_path = dir.join(ORACLE_TRIALS_FILE);
    if !config_path.exists() {
        return Err(Artifacts(format!("{}: run configuration missing", config_path.display())).into());
    }
    if !trials_path.exists() {
        return Err(Artifacts(format!(
            "oracle snapshots required: {} not found (rerun without --no-diagnostics)",
            trials_path.display()
        ))
        .into());
    }
    let text = std::fs::read_to_string(&config_path).with_context(|| config_path.display().to_string())?;
    let config = parse_config(&text)?;
    let plant = config.resolve_plant(&PlantRegistry::builtin())?;
    let reference = config.reference.trajectory(plant.horizon())?;
    let trials = read_trials(&trials_path, &reference)?;
    if trials.is_empty() {
        return Err(Artifacts(format!("{}: no trials recorded", trials_path.display())).into());
    }
    let initial = EstimateTable::filled(plant.horizon(), config.initial_estimate, config.params.epsilon)?;
    let history = replay_history(trials, initial, &config.params)?;

    // the replayed estimator has to reproduce every saved snapshot
    for k in 0..history.estimates.len() {
        let path = dir.join(format!("estimates_{k}.csv"));
        if path.exists() {
            let gap = compare_estimate_snapshot(&path, &history.estimates[k])?;
            if gap > 1e-12 {
                return Err(Artifacts(format!(
                    "{}: replayed estimates differ by {gap:e}",
                    path.display()
                ))
                .into());
            }
        }
    }

    let report = analyze(&plant, &config.params, &history, AnalysisOptions::default())?;
    let out = args.out.clone().unwrap_or_else(|| dir.join(DIAGNOSTICS_FILE));
    write_atomic(&out, |w| report.write_csv(w))?;

    let b = &report.bounds;
    let sel = b.selection_empirical;
    println!(
        "mode: {} ({} iterations)",
        if report.robust { "robust" } else { "nominal" },
        history.trials.len() - 1
    );
    println!(
        "selection condition (empirical bounds): {} (margin {:.4}); with a priori estimate bound: {} (margin {:.4e})",
        verdict(sel.holds()),
        sel.margin,
        verdict(b.selection_apriori.holds()),
        b.selection_apriori.margin
    );
    let gaps_ok = report.gap_bounds_hold();
    println!(
        "gap bounds: {}{} (max zeta {:.6} vs {:.6}, max phi {:.6} vs {:.6})",
        verdict(gaps_ok),
        if sel.holds() { "" } else { " [vacuous]" },
        report.max_zeta,
        b.zeta_bar,
        report.max_phi,
        b.phi_bar
    );
    let e_ok = report.max_consistency_err_e <= args.tol;
    let u_ok = report.max_consistency_err_u <= args.tol;
    println!(
        "error recursion consistency: {} (max relative error {:.3e})",
        verdict(e_ok),
        report.max_consistency_err_e
    );
    println!(
        "input recursion consistency: {} (max relative error {:.3e})",
        verdict(u_ok),
        report.max_consistency_err_u
    );
    println!("window product violations: {}", report.window_violations);
    if gaps_ok && e_ok && u_ok {
        Ok(())
    } else {
        Err(ChecksFailed.into())
    }
}

struct SweepEntry {
    name: String,
    source: String,
}

fn sweep_entries(patterns: &[String]) -> Result<Vec<SweepEntry>> {
    let mut entries = Vec::new();
    for pattern in patterns {
        if preset(pattern).is_some() {
            entries.push(SweepEntry {
                name: pattern.clone(),
                source: pattern.clone(),
            });
            continue;
        }
        let mut matched = false;
        for path in glob::glob(pattern).with_context(|| format!("bad pattern `{pattern}`"))? {
            let path = path?;
            matched = true;
            entries.push(SweepEntry {
                name: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                source: path.to_string_lossy().into_owned(),
            });
        }
        if !matched {
            return Err(Artifacts(format!("`{pattern}` matches no configuration")).into());
        }
    }
    Ok(entries)
}

struct SweepOutcome {
    final_max_error: f64,
    sup_abs_input: f64,
    selection_empirical: bool,
}

fn sweep_one(source: &str, registry: &PlantRegistry) -> Result<SweepOutcome> {
    let mut config = load_config(source)?;
    check_config(&config, registry)?;
    // the selection check needs the oracle history
    config.diagnostics = true;
    config.snapshots = SnapshotSchedule::None;
    let record = run(&config, registry)?;
    let plant = config.resolve_plant(registry)?;
    let history = record.history.as_ref().expect("diagnostics enabled");
    let report = analyze(&plant, &config.params, history, AnalysisOptions::default())?;
    Ok(SweepOutcome {
        final_max_error: record.final_metrics().max_abs_e,
        sup_abs_input: record.sup_abs_input(),
        selection_empirical: report.bounds.selection_empirical.holds(),
    })
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let entries = sweep_entries(&args.configs)?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, entries.len().max(1));
    let registry = PlantRegistry::builtin();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepOutcome>>>> = Mutex::new((0..entries.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(entry) = entries.get(i) else { break };
                let outcome = sweep_one(&entry.source, &registry);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().expect("workers finished");

    let mut failed = 0;
    let mut lines = vec!["config,final_max_error,sup_abs_input,selection_empirical,status".to_string()];
    for (entry, result) in entries.iter().zip(results) {
        let result = result.expect("every entry was processed");
        match result {
            Ok(o) => {
                println!(
                    "{}: final max |e| = {:.3e}, sup |u| = {:.4}, selection {}",
                    entry.name,
                    o.final_max_error,
                    o.sup_abs_input,
                    verdict(o.selection_empirical)
                );
                lines.push(format!(
                    "{},{},{},{},ok",
                    entry.name,
                    fmt_num(o.final_max_error),
                    fmt_num(o.sup_abs_input),
                    verdict(o.selection_empirical).to_lowercase()
                ));
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e:#}", entry.name);
                let msg = format!("{e:#}").replace([',', '\n'], ";");
                lines.push(format!("{},NaN,NaN,,error: {msg}", entry.name));
            }
        }
    }
    std::fs::create_dir_all(&args.out).with_context(|| args.out.display().to_string())?;
    let body = lines.join("\n") + "\n";
    write_atomic(&args.out.join(SWEEP_FILE), |w| w.write_all(body.as_bytes()))?;
    if failed > 0 {
        return Err(ChecksFailed.into());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if err.downcast_ref::<ChecksFailed>().is_none() {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_flag() {
        assert_eq!(parse_snapshots("none").unwrap(), SnapshotSchedule::None);
        assert_eq!(
            parse_snapshots("3, 1").unwrap(),
            SnapshotSchedule::List([1, 3].into_iter().collect())
        );
        assert!(parse_snapshots("x").is_err());
    }

    #[test]
    fn exit_codes() {
        let divergence = anyhow::Error::from(IlcError::NonFiniteOutput { iteration: Some(3), t: 1 });
        assert_eq!(exit_code(&divergence), 3);
        let config = anyhow::Error::from(IlcError::Config {
            key: "k".into(),
            reason: "r".into(),
        });
        assert_eq!(exit_code(&config), 2);
        assert_eq!(exit_code(&Artifacts("x".into()).into()), 2);
        assert_eq!(exit_code(&ChecksFailed.into()), 1);
    }
}
