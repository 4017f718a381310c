//! The iteration loop: trial, estimate update, input update, metrics.
//!
//! Trials are tagged by the index of the input that produced them, so trial
//! `k` applies `u_k` and yields `e_k`. After trial `k` completes the engine
//! updates the estimates to `θ̂_{k+1,k}` (when `k ≥ 1`), computes `u_{k+1}`,
//! and runs trial `k + 1`. A run with `K` iterations executes trials
//! `0..=K`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::controller::{update_input, ErrorHistory, LearningParams};
use crate::error::{check_len, IlcError, Result};
use crate::estimator::{update_estimates, EstimateTable};
use crate::linearization::{sequential_diagonal, Excitation};
use crate::output::{fmt_num, write_atomic};
use crate::plant::{max_abs, simulate_trial, PlantModel, PlantRegistry, TrialRecord, UncertaintyModel};

/// Horizon of the benchmark reference.
pub const BENCHMARK_HORIZON: usize = 50;

/// The benchmark reference `5·sin(2πt/50) + 0.8·t·(50−t)/300` on `0..=50`.
pub fn benchmark_reference(t: usize) -> Result<f64> {
    if t > BENCHMARK_HORIZON {
        return Err(IlcError::OutOfRange {
            what: "reference time",
            index: t,
            max: BENCHMARK_HORIZON,
        });
    }
    let x = t as f64;
    Ok(5.0 * (2.0 * PI * x / 50.0).sin() + 0.8 * x * (50.0 - x) / 300.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSpec {
    /// The benchmark reference; needs a horizon of at most 50.
    Benchmark,
    Constant(f64),
    /// Explicit `y_d(0..=T)`.
    Samples(Vec<f64>),
}

impl ReferenceSpec {
    pub fn trajectory(&self, horizon: usize) -> Result<Vec<f64>> {
        match self {
            ReferenceSpec::Benchmark => (0..=horizon).map(benchmark_reference).collect(),
            ReferenceSpec::Constant(v) => Ok(vec![*v; horizon + 1]),
            ReferenceSpec::Samples(s) => {
                check_len("reference samples", horizon + 1, s.len())?;
                Ok(s.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnapshotSchedule {
    /// `{0, 400, K}`.
    Default,
    List(BTreeSet<usize>),
    None,
}

impl SnapshotSchedule {
    pub fn resolve(&self, iterations: usize) -> BTreeSet<usize> {
        match self {
            SnapshotSchedule::Default => [0, 400, iterations]
                .into_iter()
                .filter(|&k| k <= iterations)
                .collect(),
            SnapshotSchedule::List(ks) => ks.iter().copied().filter(|&k| k <= iterations).collect(),
            SnapshotSchedule::None => BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub plant: String,
    /// Overrides the registered plant's horizon.
    pub horizon: Option<usize>,
    /// Overrides the registered plant's `y₀`.
    pub initial_output: Option<f64>,
    pub reference: ReferenceSpec,
    pub params: LearningParams,
    /// Holds the seed for every stochastic draw of the run.
    pub uncertainty: UncertaintyModel,
    /// `u₀`; zeros when absent.
    pub initial_input: Option<Vec<f64>>,
    pub initial_estimate: f64,
    /// `K`.
    pub iterations: usize,
    pub snapshots: SnapshotSchedule,
    /// Per-iteration contraction gaps from the secant oracle, and the full
    /// trial history needed for offline analysis.
    pub diagnostics: bool,
    /// Optional symmetric input saturation. Off unless set.
    pub input_clamp: Option<f64>,
}

impl RunConfig {
    /// The benchmark configuration with `K = 1000`.
    pub fn benchmark() -> Self {
        RunConfig {
            plant: crate::plant::BENCHMARK_PLANT.to_string(),
            horizon: None,
            initial_output: None,
            reference: ReferenceSpec::Benchmark,
            params: LearningParams::benchmark(),
            uncertainty: UncertaintyModel::none(),
            initial_input: None,
            initial_estimate: 0.9,
            iterations: 1000,
            snapshots: SnapshotSchedule::Default,
            diagnostics: true,
            input_clamp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.uncertainty.validate()?;
        if !(self.initial_estimate >= self.params.epsilon) {
            return Err(IlcError::invalid(
                "initial_estimate",
                format!(
                    "fill {} is below the reset floor {}",
                    self.initial_estimate, self.params.epsilon
                ),
            ));
        }
        if let Some(u0) = &self.initial_input {
            if u0.iter().any(|x| !x.is_finite()) {
                return Err(IlcError::invalid("initial_input", "must be finite"));
            }
        }
        if let Some(c) = self.input_clamp {
            if !(c > 0.0) {
                return Err(IlcError::invalid("input_clamp", "must be positive"));
            }
        }
        Ok(())
    }

    /// The plant with horizon and `y₀` overrides applied.
    pub fn resolve_plant(&self, registry: &PlantRegistry) -> Result<PlantModel> {
        let mut plant = registry.get(&self.plant)?.clone();
        if let Some(h) = self.horizon {
            plant = plant.with_horizon(h)?;
        }
        if let Some(y0) = self.initial_output {
            plant = plant.with_initial_output(y0)?;
        }
        Ok(plant)
    }
}

/// Per-trial metrics. Row `k` describes trial `k` and the estimate table
/// `θ̂_{k,k−1}` that produced `u_k` (the initial table for `k = 0, 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub k: usize,
    pub max_abs_u: f64,
    pub max_abs_e: f64,
    pub max_abs_y: f64,
    pub max_est_norm: f64,
    pub resets: usize,
    /// `max_t ζ_k(t)`; NaN at `k = 0` or without diagnostics.
    pub zeta_max: f64,
    /// `max_t φ_k(t)`; NaN at `k = 0` or without diagnostics.
    pub phi_max: f64,
}

/// Every trial of a run with the estimate table used for each input.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub trials: Vec<TrialRecord>,
    /// `estimates[k]` produced `u_k` for `k ≥ 1`; `estimates[0]` is the
    /// initial table.
    pub estimates: Vec<EstimateTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub metrics: Vec<IterationMetrics>,
    pub reference: Vec<f64>,
    pub trial_snapshots: BTreeMap<usize, TrialRecord>,
    pub estimate_snapshots: BTreeMap<usize, EstimateTable>,
    /// Present when diagnostics are enabled.
    pub history: Option<RunHistory>,
}

impl RunRecord {
    pub fn final_metrics(&self) -> &IterationMetrics {
        self.metrics.last().expect("a run always has the initial trial")
    }

    pub fn sup_abs_input(&self) -> f64 {
        self.metrics.iter().map(|m| m.max_abs_u).fold(0.0, f64::max)
    }

    pub fn sup_abs_output(&self) -> f64 {
        self.metrics.iter().map(|m| m.max_abs_y).fold(0.0, f64::max)
    }

    pub fn total_resets(&self) -> usize {
        self.metrics.iter().map(|m| m.resets).sum()
    }

    /// Largest `max_t |e_k|` over `k ∈ from..=to`.
    pub fn max_error_between(&self, from: usize, to: usize) -> f64 {
        self.metrics
            .iter()
            .filter(|m| (from..=to).contains(&m.k))
            .map(|m| m.max_abs_e)
            .fold(0.0, f64::max)
    }

    pub fn write_iterations_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,max_abs_u,max_abs_e,max_est_norm,resets,zeta_max,phi_max")?;
        for m in &self.metrics {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.k,
                fmt_num(m.max_abs_u),
                fmt_num(m.max_abs_e),
                fmt_num(m.max_est_norm),
                m.resets,
                fmt_num(m.zeta_max),
                fmt_num(m.phi_max)
            )?;
        }
        Ok(())
    }

    /// Writes `iterations.csv`, the scheduled `trajectory_<k>.csv` and
    /// `estimates_<k>.csv` files, and `oracle_trials.csv` when the full
    /// history was kept.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| IlcError::io(dir, e))?;
        write_atomic(&dir.join("iterations.csv"), |w| self.write_iterations_csv(w))?;
        for (k, trial) in &self.trial_snapshots {
            let path = dir.join(format!("trajectory_{k}.csv"));
            write_atomic(&path, |w| write_trajectory(w, trial, &self.reference))?;
        }
        for (k, table) in &self.estimate_snapshots {
            let path = dir.join(format!("estimates_{k}.csv"));
            write_atomic(&path, |w| table.write_csv(w))?;
        }
        if let Some(history) = &self.history {
            write_atomic(&dir.join(ORACLE_TRIALS_FILE), |w| write_trials(w, &history.trials))?;
        }
        Ok(())
    }
}

/// Full trial log written by runs with diagnostics enabled.
pub const ORACLE_TRIALS_FILE: &str = "oracle_trials.csv";

fn write_trajectory(out: &mut dyn Write, trial: &TrialRecord, reference: &[f64]) -> std::io::Result<()> {
    writeln!(out, "t,u,y,y_d,e")?;
    let horizon = trial.horizon();
    for t in 0..=horizon {
        // u and e are undefined past the last input / before the first output
        let u = trial.u.get(t).copied().unwrap_or(f64::NAN);
        let e = if t == 0 { f64::NAN } else { trial.e[t - 1] };
        writeln!(
            out,
            "{t},{},{},{},{}",
            fmt_num(u),
            fmt_num(trial.y[t]),
            fmt_num(reference[t]),
            fmt_num(e)
        )?;
    }
    Ok(())
}

fn write_trials(out: &mut dyn Write, trials: &[TrialRecord]) -> std::io::Result<()> {
    writeln!(out, "k,t,u,y,w,delta")?;
    for trial in trials {
        for t in 0..=trial.horizon() {
            let u = trial.u.get(t).copied().unwrap_or(0.0);
            let w = trial.w.get(t).copied().unwrap_or(0.0);
            writeln!(
                out,
                "{},{t},{},{},{},{}",
                trial.iteration,
                fmt_num(u),
                fmt_num(trial.y[t]),
                fmt_num(w),
                fmt_num(trial.delta)
            )?;
        }
    }
    Ok(())
}

/// Contraction gaps of trial `k` from the diagonal oracle.
///
/// `ζ_k(t)` uses the secant between trials `k` and `k−1`; `φ_k(t)` uses the
/// secant between trials `k−1` and `0`.
fn gap_maxima(
    plant: &PlantModel,
    params: &LearningParams,
    est: &EstimateTable,
    current: &TrialRecord,
    previous: &TrialRecord,
    first: &TrialRecord,
) -> Result<(f64, f64)> {
    let a = Excitation::of_trial(current);
    let b = Excitation::of_trial(previous);
    let theta = sequential_diagonal(plant, &a, &b)?;
    let theta_prev = sequential_diagonal(plant, &b, &Excitation::of_trial(first))?;
    let mut zeta_max = f64::NEG_INFINITY;
    let mut phi_max = f64::NEG_INFINITY;
    for t in 0..plant.horizon() {
        let (zeta, phi) =
            crate::diagnostics::contraction_gaps(theta[t], est.diagonal(t), theta_prev[t], params);
        zeta_max = zeta_max.max(zeta);
        phi_max = phi_max.max(phi);
    }
    Ok((zeta_max, phi_max))
}

fn tag_divergence(err: IlcError, k: usize) -> IlcError {
    match err {
        IlcError::NonFiniteOutput { t, .. } => IlcError::NonFiniteOutput {
            iteration: Some(k),
            t,
        },
        other => other,
    }
}

/// Executes a full run.
pub fn run(config: &RunConfig, registry: &PlantRegistry) -> Result<RunRecord> {
    config.validate()?;
    let plant = config.resolve_plant(registry)?;
    let horizon = plant.horizon();
    let params = &config.params;
    let reference = config.reference.trajectory(horizon)?;
    let mut u = match &config.initial_input {
        Some(u0) => {
            check_len("initial input", horizon, u0.len())?;
            u0.clone()
        }
        None => vec![0.0; horizon],
    };
    let snapshots = config.snapshots.resolve(config.iterations);

    let mut est = EstimateTable::filled(horizon, config.initial_estimate, params.epsilon)?;
    let mut errors = ErrorHistory::new(params.order(), horizon);
    let mut metrics = Vec::with_capacity(config.iterations + 1);
    let mut trial_snapshots = BTreeMap::new();
    let mut estimate_snapshots = BTreeMap::new();
    let mut history = config.diagnostics.then(|| RunHistory {
        trials: Vec::with_capacity(config.iterations + 1),
        estimates: Vec::with_capacity(config.iterations + 1),
    });
    let mut first: Option<TrialRecord> = None;
    let mut previous: Option<TrialRecord> = None;

    for k in 0..=config.iterations {
        if let Some(t) = u.iter().position(|x| !x.is_finite()) {
            return Err(IlcError::NonFiniteOutput { iteration: Some(k), t });
        }
        let sample = config.uncertainty.sample(k, horizon);
        let trial =
            simulate_trial(&plant, k, &u, &sample, &reference).map_err(|e| tag_divergence(e, k))?;

        let (zeta_max, phi_max) = match (&previous, &first, config.diagnostics) {
            (Some(prev), Some(first), true) => gap_maxima(&plant, params, &est, &trial, prev, first)
                .map_err(|e| tag_divergence(e, k))?,
            _ => (f64::NAN, f64::NAN),
        };
        metrics.push(IterationMetrics {
            k,
            max_abs_u: trial.max_abs_input(),
            max_abs_e: trial.max_abs_error(),
            max_abs_y: max_abs(&trial.y),
            max_est_norm: est.max_row_norm(),
            resets: est.resets(),
            zeta_max,
            phi_max,
        });
        if snapshots.contains(&k) {
            trial_snapshots.insert(k, trial.clone());
            estimate_snapshots.insert(k, est.clone());
        }
        if let Some(h) = history.as_mut() {
            h.trials.push(trial.clone());
            h.estimates.push(est.clone());
        }

        if k < config.iterations {
            if let Some(prev) = &previous {
                let du: Vec<f64> = trial.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
                let dy: Vec<f64> = (0..horizon).map(|t| trial.y[t + 1] - prev.y[t + 1]).collect();
                est = update_estimates(&est, &du, &dy, params.mu1, params.mu2)?;
            }
            errors.push(trial.e.clone())?;
            u = update_input(&trial.u, &est, &errors, params)?;
            if let Some(c) = config.input_clamp {
                u.iter_mut().for_each(|x| *x = x.clamp(-c, c));
            }
        }
        if first.is_none() {
            first = Some(trial.clone());
        }
        previous = Some(trial);
    }

    Ok(RunRecord {
        metrics,
        reference,
        trial_snapshots,
        estimate_snapshots,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config(iterations: usize) -> RunConfig {
        RunConfig {
            iterations,
            diagnostics: false,
            ..RunConfig::benchmark()
        }
    }

    #[test]
    fn reference_examples() {
        assert_eq!(benchmark_reference(0).unwrap(), 0.0);
        assert!(benchmark_reference(50).unwrap().abs() < 1e-12);
        assert!((benchmark_reference(25).unwrap() - 1.666_666_666_666_667).abs() < 1e-6);
        assert!(matches!(benchmark_reference(51), Err(IlcError::OutOfRange { index: 51, .. })));
    }

    #[test]
    fn zero_iterations_runs_only_the_initial_trial() {
        let record = run(&short_config(0), &PlantRegistry::builtin()).unwrap();
        assert_eq!(record.metrics.len(), 1);
        assert_eq!(record.metrics[0].max_abs_u, 0.0);
        assert_eq!(record.metrics[0].resets, 0);
        assert_eq!(record.trial_snapshots.keys().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn metrics_cover_every_trial_and_are_deterministic() {
        let registry = PlantRegistry::builtin();
        let mut config = short_config(100);
        config.uncertainty = UncertaintyModel::bounded(0.01, 0.01, 9).unwrap();
        let a = run(&config, &registry).unwrap();
        let b = run(&config, &registry).unwrap();
        assert_eq!(a.metrics.len(), 101);
        // NaN placeholders defeat PartialEq, so compare the rendered rows
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert!(a.final_metrics().max_abs_e < a.metrics[0].max_abs_e);
    }

    #[test]
    fn history_tracks_inputs_and_tables() {
        let registry = PlantRegistry::builtin();
        let config = RunConfig {
            iterations: 4,
            ..RunConfig::benchmark()
        };
        let record = run(&config, &registry).unwrap();
        let history = record.history.as_ref().unwrap();
        assert_eq!(history.trials.len(), 5);
        let tags: Vec<usize> = history.estimates.iter().map(|e| e.iteration()).collect();
        assert_eq!(tags, vec![1, 1, 2, 3, 4]);
        for (k, trial) in history.trials.iter().enumerate() {
            assert_eq!(trial.iteration, k);
        }
        assert!(record.metrics[0].zeta_max.is_nan());
        assert!(record.metrics[1..].iter().all(|m| m.zeta_max < 1.0 && m.phi_max < 1.0));
    }

    #[test]
    fn divergence_reports_the_iteration() {
        let dynamics = crate::plant::FnDynamics::new(0, 0, |ys, us, _| 3.0 * ys[0].exp() + us[0]);
        let plant = PlantModel::new("explosive", std::sync::Arc::new(dynamics), 50, 1.0).unwrap();
        let mut registry = PlantRegistry::empty();
        registry.register(plant);
        let config = RunConfig {
            plant: "explosive".into(),
            ..short_config(3)
        };
        match run(&config, &registry) {
            Err(IlcError::NonFiniteOutput { iteration: Some(0), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn initial_estimate_below_floor_is_rejected() {
        let config = RunConfig {
            initial_estimate: 0.001,
            ..short_config(1)
        };
        assert!(matches!(
            run(&config, &PlantRegistry::builtin()),
            Err(IlcError::InvalidParams { name: "initial_estimate", .. })
        ));
    }

    #[test]
    fn clamp_bounds_inputs() {
        let config = RunConfig {
            input_clamp: Some(0.5),
            ..short_config(10)
        };
        let record = run(&config, &PlantRegistry::builtin()).unwrap();
        assert!(record.sup_abs_input() <= 0.5);
    }

    #[test]
    fn artifacts_have_the_documented_layout() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            iterations: 3,
            snapshots: SnapshotSchedule::List([1, 3, 99].into_iter().collect()),
            ..RunConfig::benchmark()
        };
        let record = run(&config, &PlantRegistry::builtin()).unwrap();
        record.write_artifacts(dir.path()).unwrap();
        let iterations = std::fs::read_to_string(dir.path().join("iterations.csv")).unwrap();
        assert_eq!(iterations.lines().count(), 5);
        assert_eq!(
            iterations.lines().next().unwrap(),
            "k,max_abs_u,max_abs_e,max_est_norm,resets,zeta_max,phi_max"
        );
        let traj = std::fs::read_to_string(dir.path().join("trajectory_3.csv")).unwrap();
        assert_eq!(traj.lines().next().unwrap(), "t,u,y,y_d,e");
        assert_eq!(traj.lines().count(), 52);
        assert!(dir.path().join("estimates_1.csv").exists());
        assert!(!dir.path().join("trajectory_99.csv").exists());
        assert!(dir.path().join(ORACLE_TRIALS_FILE).exists());
    }
}
