//! Finite-horizon nonlinear time-varying plants.
//!
//! A plant maps an input trajectory `u(0..T-1)` to an output trajectory
//! `y(0..T)` through the recursion
//!
//! ```text
//! y(t+1) = f(y(t), …, y(t-l), u(t), …, u(t-n), t) + w(t),   y(0) = y0 + δ
//! ```
//!
//! with every index before `t = 0` read as zero. The additive disturbance `w`
//! and initial shift `δ` are the nonrepetitive uncertainties; both are zero in
//! nominal operation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{check_len, IlcError, Result};

/// Registry name of the built-in benchmark plant.
pub const BENCHMARK_PLANT: &str = "benchmark";

/// One-step dynamics `f` of a plant.
pub trait Dynamics: Send + Sync + fmt::Debug {
    /// Output order `l`: `f` reads `y(t), …, y(t-l)`.
    fn output_order(&self) -> usize;

    /// Input order `n`: `f` reads `u(t), …, u(t-n)`.
    fn input_order(&self) -> usize;

    /// Evaluate `f`. `ys[j]` holds `y(t-j)` for `j = 0..=l` and `us[j]` holds
    /// `u(t-j)` for `j = 0..=n`; off-horizon entries are already zero.
    fn eval(&self, ys: &[f64], us: &[f64], t: usize) -> f64;

    /// Local partial derivatives `∂f/∂y(t-j)` into `d_ys` and `∂f/∂u(t-j)`
    /// into `d_us`. Central differences unless overridden.
    fn partials(&self, ys: &[f64], us: &[f64], t: usize, d_ys: &mut [f64], d_us: &mut [f64]) {
        central_partials(self, ys, us, t, d_ys, d_us);
    }
}

/// Finite-difference step for an argument of size `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central-difference partials of `f` with step [`fd_step`].
pub fn central_partials<D: Dynamics + ?Sized>(
    dynamics: &D,
    ys: &[f64],
    us: &[f64],
    t: usize,
    d_ys: &mut [f64],
    d_us: &mut [f64],
) {
    let mut ys = ys.to_vec();
    let mut us = us.to_vec();
    for j in 0..ys.len() {
        let x = ys[j];
        let h = fd_step(x);
        ys[j] = x + h;
        let plus = dynamics.eval(&ys, &us, t);
        ys[j] = x - h;
        let minus = dynamics.eval(&ys, &us, t);
        ys[j] = x;
        d_ys[j] = (plus - minus) / (2.0 * h);
    }
    for j in 0..us.len() {
        let x = us[j];
        let h = fd_step(x);
        us[j] = x + h;
        let plus = dynamics.eval(&ys, &us, t);
        us[j] = x - h;
        let minus = dynamics.eval(&ys, &us, t);
        us[j] = x;
        d_us[j] = (plus - minus) / (2.0 * h);
    }
}

/// `y(t+1) = sin y(t) + cos y(t-1) + (t+1)/(t+2)·u(t) + cos y(t)·sin u(t-1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BenchmarkDynamics;

impl Dynamics for BenchmarkDynamics {
    fn output_order(&self) -> usize {
        1
    }

    fn input_order(&self) -> usize {
        1
    }

    fn eval(&self, ys: &[f64], us: &[f64], t: usize) -> f64 {
        benchmark_step(ys[0], ys[1], us[0], us[1], t)
    }

    fn partials(&self, ys: &[f64], us: &[f64], t: usize, d_ys: &mut [f64], d_us: &mut [f64]) {
        let (sin_y, cos_y) = ys[0].sin_cos();
        let (sin_u1, cos_u1) = us[1].sin_cos();
        d_ys[0] = cos_y - sin_y * sin_u1;
        d_ys[1] = -ys[1].sin();
        d_us[0] = (t as f64 + 1.0) / (t as f64 + 2.0);
        d_us[1] = cos_y * cos_u1;
    }
}

/// Single step of the benchmark plant.
pub fn benchmark_step(y_t: f64, y_tm1: f64, u_t: f64, u_tm1: f64, t: usize) -> f64 {
    let gain = (t as f64 + 1.0) / (t as f64 + 2.0);
    y_t.sin() + y_tm1.cos() + gain * u_t + y_t.cos() * u_tm1.sin()
}

type StepFn = dyn Fn(&[f64], &[f64], usize) -> f64 + Send + Sync;

/// Dynamics given by a closure, for plants registered through the library API.
#[derive(Clone)]
pub struct FnDynamics {
    output_order: usize,
    input_order: usize,
    step: Arc<StepFn>,
}

impl FnDynamics {
    pub fn new<F>(output_order: usize, input_order: usize, step: F) -> Self
    where
        F: Fn(&[f64], &[f64], usize) -> f64 + Send + Sync + 'static,
    {
        FnDynamics {
            output_order,
            input_order,
            step: Arc::new(step),
        }
    }
}

impl fmt::Debug for FnDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDynamics")
            .field("output_order", &self.output_order)
            .field("input_order", &self.input_order)
            .finish_non_exhaustive()
    }
}

impl Dynamics for FnDynamics {
    fn output_order(&self) -> usize {
        self.output_order
    }

    fn input_order(&self) -> usize {
        self.input_order
    }

    fn eval(&self, ys: &[f64], us: &[f64], t: usize) -> f64 {
        (self.step)(ys, us, t)
    }
}

/// A plant over a fixed horizon `T` with nominal initial output `y0`.
#[derive(Debug, Clone)]
pub struct PlantModel {
    name: String,
    dynamics: Arc<dyn Dynamics>,
    horizon: usize,
    initial_output: f64,
}

impl PlantModel {
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn Dynamics>,
        horizon: usize,
        initial_output: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(IlcError::invalid("horizon", "must be positive"));
        }
        if !initial_output.is_finite() {
            return Err(IlcError::invalid("initial_output", "must be finite"));
        }
        Ok(PlantModel {
            name: name.into(),
            dynamics,
            horizon,
            initial_output,
        })
    }

    /// The benchmark plant with `y0 = 1.5`.
    pub fn benchmark(horizon: usize) -> Result<Self> {
        PlantModel::new(BENCHMARK_PLANT, Arc::new(BenchmarkDynamics), horizon, 1.5)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_output(&self) -> f64 {
        self.initial_output
    }

    pub fn output_order(&self) -> usize {
        self.dynamics.output_order()
    }

    pub fn input_order(&self) -> usize {
        self.dynamics.input_order()
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        PlantModel::new(
            self.name.clone(),
            Arc::clone(&self.dynamics),
            horizon,
            self.initial_output,
        )
    }

    pub fn with_initial_output(&self, initial_output: f64) -> Result<Self> {
        PlantModel::new(
            self.name.clone(),
            Arc::clone(&self.dynamics),
            self.horizon,
            initial_output,
        )
    }

    /// Runs the recursion and returns `y(0..=T)`.
    pub fn outputs(&self, u: &[f64], w: Option<&[f64]>, delta: f64) -> Result<Vec<f64>> {
        check_len("input trajectory", self.horizon, u.len())?;
        if let Some(w) = w {
            check_len("disturbance trajectory", self.horizon, w.len())?;
        }
        let mut y = vec![0.0; self.horizon + 1];
        let mut scratch = Scratch::for_plant(self);
        y[0] = self.initial_output + delta;
        self.propagate(0, u, w, &mut y, &mut scratch)?;
        Ok(y)
    }

    /// Recomputes `y[from+1..=T]` assuming `y[0..=from]` is already correct.
    ///
    /// Because the recursion is causal, a perturbation of `u(i)` or `w(i)`
    /// only needs `propagate(i, …)`.
    pub(crate) fn propagate(
        &self,
        from: usize,
        u: &[f64],
        w: Option<&[f64]>,
        y: &mut [f64],
        scratch: &mut Scratch,
    ) -> Result<()> {
        let l = self.output_order();
        let n = self.input_order();
        for t in from..self.horizon {
            for j in 0..=l {
                scratch.ys[j] = if j <= t { y[t - j] } else { 0.0 };
            }
            for j in 0..=n {
                scratch.us[j] = if j <= t { u[t - j] } else { 0.0 };
            }
            let mut next = self.dynamics.eval(&scratch.ys, &scratch.us, t);
            if let Some(w) = w {
                next += w[t];
            }
            if !next.is_finite() {
                return Err(IlcError::NonFiniteOutput { iteration: None, t });
            }
            y[t + 1] = next;
        }
        Ok(())
    }

    /// Partials of `f` at step `t` of an existing trajectory. Entries for
    /// off-horizon arguments are zero since those arguments are constants.
    pub(crate) fn local_partials(
        &self,
        t: usize,
        u: &[f64],
        y: &[f64],
        scratch: &mut Scratch,
        d_ys: &mut [f64],
        d_us: &mut [f64],
    ) {
        let l = self.output_order();
        let n = self.input_order();
        for j in 0..=l {
            scratch.ys[j] = if j <= t { y[t - j] } else { 0.0 };
        }
        for j in 0..=n {
            scratch.us[j] = if j <= t { u[t - j] } else { 0.0 };
        }
        self.dynamics.partials(&scratch.ys, &scratch.us, t, d_ys, d_us);
        for d in d_ys.iter_mut().skip(t + 1) {
            *d = 0.0;
        }
        for d in d_us.iter_mut().skip(t + 1) {
            *d = 0.0;
        }
    }
}

/// Reusable argument buffers for [`Dynamics::eval`].
pub(crate) struct Scratch {
    ys: Vec<f64>,
    us: Vec<f64>,
}

impl Scratch {
    pub(crate) fn for_plant(plant: &PlantModel) -> Self {
        Scratch {
            ys: vec![0.0; plant.output_order() + 1],
            us: vec![0.0; plant.input_order() + 1],
        }
    }
}

/// One trial: the input applied, the output measured, and the tracking error.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub iteration: usize,
    /// `u(t)`, `t = 0..T-1`.
    pub u: Vec<f64>,
    /// `y(t)`, `t = 0..T`.
    pub y: Vec<f64>,
    /// `e[t] = y_d(t+1) - y(t+1)`, `t = 0..T-1`.
    pub e: Vec<f64>,
    /// Disturbance `w(t)` applied during this trial.
    pub w: Vec<f64>,
    /// Initial shift applied during this trial.
    pub delta: f64,
}

impl TrialRecord {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn max_abs_input(&self) -> f64 {
        max_abs(&self.u)
    }

    pub fn max_abs_error(&self) -> f64 {
        max_abs(&self.e)
    }

    pub fn max_abs_output(&self) -> f64 {
        max_abs(&self.y)
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

/// Applies `u` under the sampled uncertainty and scores the result against
/// `reference` (`y_d(0..=T)`).
pub fn simulate_trial(
    plant: &PlantModel,
    iteration: usize,
    u: &[f64],
    sample: &UncertaintySample,
    reference: &[f64],
) -> Result<TrialRecord> {
    let horizon = plant.horizon();
    check_len("reference trajectory", horizon + 1, reference.len())?;
    check_len("disturbance sample", horizon, sample.w.len())?;
    if u.iter().any(|x| !x.is_finite()) {
        return Err(IlcError::invalid("u", "input trajectory must be finite"));
    }
    let y = plant.outputs(u, Some(&sample.w), sample.delta)?;
    let e = (0..horizon).map(|t| reference[t + 1] - y[t + 1]).collect();
    Ok(TrialRecord {
        iteration,
        u: u.to_vec(),
        y,
        e,
        w: sample.w.clone(),
        delta: sample.delta,
    })
}

/// Realized uncertainty for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySample {
    pub delta: f64,
    pub w: Vec<f64>,
}

impl UncertaintySample {
    pub fn zero(horizon: usize) -> Self {
        UncertaintySample {
            delta: 0.0,
            w: vec![0.0; horizon],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UncertaintyMode {
    None,
    /// i.i.d. uniform on `[-β, β]`, redrawn every trial.
    BoundedRandom,
    /// Like `BoundedRandom` but scaled by `ratio^k`, so consecutive trials
    /// differ less and less.
    Decaying { ratio: f64 },
}

impl UncertaintyMode {
    pub fn label(&self) -> &'static str {
        match self {
            UncertaintyMode::None => "none",
            UncertaintyMode::BoundedRandom => "bounded-random",
            UncertaintyMode::Decaying { .. } => "decaying",
        }
    }
}

/// Generator of nonrepetitive disturbances and initial shifts.
///
/// Samples are a pure function of `(seed, k)`: trial `k` always sees the same
/// draw no matter how many other trials were sampled before it.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyModel {
    pub mode: UncertaintyMode,
    pub beta_w: f64,
    pub beta_delta: f64,
    pub seed: u64,
}

pub const DEFAULT_DECAY_RATIO: f64 = 0.99;

impl UncertaintyModel {
    pub fn none() -> Self {
        UncertaintyModel {
            mode: UncertaintyMode::None,
            beta_w: 0.0,
            beta_delta: 0.0,
            seed: 0,
        }
    }

    pub fn bounded(beta_w: f64, beta_delta: f64, seed: u64) -> Result<Self> {
        let model = UncertaintyModel {
            mode: UncertaintyMode::BoundedRandom,
            beta_w,
            beta_delta,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn decaying(beta_w: f64, beta_delta: f64, ratio: f64, seed: u64) -> Result<Self> {
        let model = UncertaintyModel {
            mode: UncertaintyMode::Decaying { ratio },
            beta_w,
            beta_delta,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_w >= 0.0 && self.beta_w.is_finite()) {
            return Err(IlcError::invalid("beta_w", "must be a finite nonnegative number"));
        }
        if !(self.beta_delta >= 0.0 && self.beta_delta.is_finite()) {
            return Err(IlcError::invalid(
                "beta_delta",
                "must be a finite nonnegative number",
            ));
        }
        if let UncertaintyMode::Decaying { ratio } = self.mode {
            if !(0.0..1.0).contains(&ratio) {
                return Err(IlcError::invalid("decay", "ratio must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn is_nominal(&self) -> bool {
        matches!(self.mode, UncertaintyMode::None)
            || (self.beta_w == 0.0 && self.beta_delta == 0.0)
    }

    /// Draws `(δ_k, w_k)` for trial `k`.
    pub fn sample(&self, k: usize, horizon: usize) -> UncertaintySample {
        let scale = match self.mode {
            UncertaintyMode::None => return UncertaintySample::zero(horizon),
            UncertaintyMode::BoundedRandom => 1.0,
            UncertaintyMode::Decaying { ratio } => ratio.powi(k.min(i32::MAX as usize) as i32),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        let delta = scale * symmetric(&mut rng, self.beta_delta);
        let w = (0..horizon)
            .map(|_| scale * symmetric(&mut rng, self.beta_w))
            .collect();
        UncertaintySample { delta, w }
    }
}

fn symmetric(rng: &mut ChaCha12Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        // keep the stream position independent of the bound
        let _: f64 = rng.gen();
        return 0.0;
    }
    rng.gen_range(-bound..=bound)
}

/// Sampled bounds on the partial derivatives of `f` (the data behind the
/// smoothness assumption on the plant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialBounds {
    /// Largest `|∂f/∂x_i|` over all arguments.
    pub max_abs: f64,
    /// Smallest and largest `∂f/∂u(t)` (the input coupling).
    pub coupling_min: f64,
    pub coupling_max: f64,
}

/// Central-difference partials of `f` over the full tensor grid `grid^(l+n+2)`
/// at each time step in `times`.
pub fn sample_partial_bounds(dynamics: &dyn Dynamics, grid: &[f64], times: &[usize]) -> PartialBounds {
    let l = dynamics.output_order();
    let n = dynamics.input_order();
    let dim = l + n + 2;
    let mut bounds = PartialBounds {
        max_abs: 0.0,
        coupling_min: f64::INFINITY,
        coupling_max: f64::NEG_INFINITY,
    };
    if grid.is_empty() {
        return bounds;
    }
    let mut index = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    let mut ys = vec![0.0; l + 1];
    let mut us = vec![0.0; n + 1];
    let mut eval = |point: &[f64], t: usize| {
        ys.copy_from_slice(&point[..=l]);
        us.copy_from_slice(&point[l + 1..]);
        dynamics.eval(&ys, &us, t)
    };
    loop {
        for (p, &i) in point.iter_mut().zip(&index) {
            *p = grid[i];
        }
        for &t in times {
            for arg in 0..dim {
                let x = point[arg];
                let h = fd_step(x);
                point[arg] = x + h;
                let plus = eval(&point, t);
                point[arg] = x - h;
                let minus = eval(&point, t);
                point[arg] = x;
                let d = (plus - minus) / (2.0 * h);
                bounds.max_abs = bounds.max_abs.max(d.abs());
                if arg == l + 1 {
                    bounds.coupling_min = bounds.coupling_min.min(d);
                    bounds.coupling_max = bounds.coupling_max.max(d);
                }
            }
        }
        // odometer increment over the grid
        let mut pos = 0;
        loop {
            if pos == dim {
                return bounds;
            }
            index[pos] += 1;
            if index[pos] < grid.len() {
                break;
            }
            index[pos] = 0;
            pos += 1;
        }
    }
}

/// Plants addressable by name from run configurations.
#[derive(Debug, Clone, Default)]
pub struct PlantRegistry {
    plants: BTreeMap<String, PlantModel>,
}

impl PlantRegistry {
    pub fn empty() -> Self {
        PlantRegistry::default()
    }

    /// Registry holding the built-in plants (`benchmark`, horizon 50).
    pub fn builtin() -> Self {
        let mut registry = PlantRegistry::empty();
        registry.register(PlantModel::benchmark(50).expect("benchmark horizon is positive"));
        registry
    }

    /// Adds or replaces a plant under its own name.
    pub fn register(&mut self, plant: PlantModel) {
        self.plants.insert(plant.name().to_string(), plant);
    }

    pub fn get(&self, name: &str) -> Result<&PlantModel> {
        self.plants
            .get(name)
            .ok_or_else(|| IlcError::UnknownPlant(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.plants.keys().map(String::as_str)
    }
}
