//! Secant (extended dynamical) linearization of a known plant between two
//! trials.
//!
//! For two excitations `a = (u_a, w_a, δ_a)` and `b = (u_b, w_b, δ_b)` the
//! output increment over the horizon satisfies
//!
//! ```text
//! y_a(1..T) - y_b(1..T) = Θ·(u_a - u_b) + Υ·(w_a - w_b) + ϑ·(δ_a - δ_b)
//! ```
//!
//! with `Θ`, `Υ` lower triangular. Here the matrices are the path integrals
//! `∫₀¹ J(b + s(a - b)) ds` of the input-to-output Jacobians along the straight
//! segment, which makes the identity exact up to quadrature error and the
//! error in the local partials of `f`. `J` is assembled by chaining those
//! local partials through the recursion. The controller never sees these values; they feed
//! tests and the diagnostics module.

use crate::error::{check_len, IlcError, Result};
use crate::plant::{PlantModel, Scratch, TrialRecord};
use crate::triangular::LowerTriangular;

/// Node count that meets the `1e-6·(1 + ‖Δu‖∞)` residual target on the
/// benchmark plant at horizon 10.
pub const DEFAULT_NODES: usize = 129;

/// Point in (input, disturbance, initial shift) space.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub delta: f64,
}

impl Excitation {
    pub fn nominal(u: Vec<f64>) -> Self {
        let w = vec![0.0; u.len()];
        Excitation { u, w, delta: 0.0 }
    }

    pub fn of_trial(trial: &TrialRecord) -> Self {
        Excitation {
            u: trial.u.clone(),
            w: trial.w.clone(),
            delta: trial.delta,
        }
    }

    fn lerp_into(&mut self, a: &Excitation, b: &Excitation, s: f64) {
        for ((x, xa), xb) in self.u.iter_mut().zip(&a.u).zip(&b.u) {
            *x = xb + s * (xa - xb);
        }
        for ((x, xa), xb) in self.w.iter_mut().zip(&a.w).zip(&b.w) {
            *x = xb + s * (xa - xb);
        }
        self.delta = b.delta + s * (a.delta - b.delta);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    /// Only `Θ`; `Υ` and `ϑ` are left out.
    InputOnly,
    /// `Θ`, `Υ` and `ϑ`.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecantOptions {
    pub nodes: usize,
    pub channels: Channels,
}

impl Default for SecantOptions {
    fn default() -> Self {
        SecantOptions {
            nodes: DEFAULT_NODES,
            channels: Channels::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecantLinearization {
    /// Input-to-output secant `Θ`.
    pub theta: LowerTriangular,
    /// Disturbance-to-output secant `Υ` (unit diagonal).
    pub upsilon: Option<LowerTriangular>,
    /// Initial-shift gains `ϑ_t`, one per output `y(t+1)`.
    pub vartheta: Option<Vec<f64>>,
    pub nodes: usize,
}

impl SecantLinearization {
    /// `ΘΔu + ΥΔw + ϑΔδ`, the predicted increment of `y(1..=T)`.
    pub fn predict(&self, du: &[f64], dw: &[f64], d_delta: f64) -> Vec<f64> {
        let mut out = self.theta.mul_vec(du);
        if let Some(upsilon) = &self.upsilon {
            for (o, x) in out.iter_mut().zip(upsilon.mul_vec(dw)) {
                *o += x;
            }
        }
        if let Some(vartheta) = &self.vartheta {
            for (o, g) in out.iter_mut().zip(vartheta) {
                *o += g * d_delta;
            }
        }
        out
    }

    /// Largest `|θ|` over all entries: the region-restricted empirical `β_θ`.
    pub fn empirical_theta_bound(&self) -> f64 {
        let mut bound = self.theta.max_abs();
        if let Some(u) = &self.upsilon {
            bound = bound.max(u.max_abs());
        }
        if let Some(v) = &self.vartheta {
            bound = v.iter().fold(bound, |acc, x| acc.max(x.abs()));
        }
        bound
    }
}

/// Quadrature rule on `[0, 1]`: midpoint for one node, composite Simpson for
/// odd counts, composite trapezoid for even counts. When the panel count is a
/// multiple of four, Simpson is Richardson-refined against its half-resolution
/// rule on the same nodes (composite Boole).
fn quadrature(nodes: usize) -> Result<Vec<(f64, f64)>> {
    match nodes {
        0 => Err(IlcError::invalid("nodes", "need at least one quadrature node")),
        1 => Ok(vec![(0.5, 1.0)]),
        n if n % 2 == 1 => {
            let fine = simpson_weights(n, 1);
            if (n - 1) % 4 != 0 {
                return Ok(with_nodes(n, fine));
            }
            let coarse = simpson_weights(n, 2);
            let refined = fine
                .iter()
                .zip(&coarse)
                .map(|(f, c)| (16.0 * f - c) / 15.0)
                .collect();
            Ok(with_nodes(n, refined))
        }
        n => {
            let h = 1.0 / (n - 1) as f64;
            let weights = (0..n)
                .map(|j| if j == 0 || j == n - 1 { 0.5 * h } else { h })
                .collect();
            Ok(with_nodes(n, weights))
        }
    }
}

/// Composite Simpson weights on `n` equispaced nodes using every `stride`-th.
fn simpson_weights(n: usize, stride: usize) -> Vec<f64> {
    let panels = (n - 1) / stride;
    let h = 1.0 / panels as f64;
    let mut weights = vec![0.0; n];
    for j in 0..=panels {
        let w = if j == 0 || j == panels {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        weights[j * stride] = w * h / 3.0;
    }
    weights
}

fn with_nodes(n: usize, weights: Vec<f64>) -> Vec<(f64, f64)> {
    let h = 1.0 / (n - 1) as f64;
    weights
        .into_iter()
        .enumerate()
        .map(|(j, w)| (j as f64 * h, w))
        .collect()
}

fn check_pair(plant: &PlantModel, a: &Excitation, b: &Excitation) -> Result<()> {
    let horizon = plant.horizon();
    for x in [a, b] {
        check_len("secant input", horizon, x.u.len())?;
        check_len("secant disturbance", horizon, x.w.len())?;
        let finite = x.u.iter().chain(&x.w).all(|v| v.is_finite()) && x.delta.is_finite();
        if !finite {
            return Err(IlcError::invalid("excitation", "trajectories must be finite"));
        }
    }
    Ok(())
}

/// Secant linearization between `a` and `b` (increments are `a - b`).
pub fn secant_jacobian(
    plant: &PlantModel,
    a: &Excitation,
    b: &Excitation,
    nodes: usize,
) -> Result<SecantLinearization> {
    secant_jacobian_with(
        plant,
        a,
        b,
        SecantOptions {
            nodes,
            channels: Channels::All,
        },
    )
}

pub fn secant_jacobian_with(
    plant: &PlantModel,
    a: &Excitation,
    b: &Excitation,
    options: SecantOptions,
) -> Result<SecantLinearization> {
    check_pair(plant, a, b)?;
    let rule = quadrature(options.nodes)?;
    let horizon = plant.horizon();
    let with_uncertainty = options.channels == Channels::All;

    let mut theta = LowerTriangular::zeros(horizon);
    let mut upsilon = with_uncertainty.then(|| LowerTriangular::zeros(horizon));
    let mut vartheta = with_uncertainty.then(|| vec![0.0; horizon]);

    let mut point = b.clone();
    let mut jac = PointJacobian::new(plant);
    for &(s, weight) in &rule {
        point.lerp_into(a, b, s);
        jac.linearize(plant, &point)?;
        for i in 0..horizon {
            jac.input_column(horizon, i, |t, d| {
                theta.row_mut(t)[i] += weight * d;
            });
        }
        if let (Some(upsilon), Some(vartheta)) = (upsilon.as_mut(), vartheta.as_mut()) {
            for i in 0..horizon {
                jac.disturbance_column(horizon, i, |t, d| {
                    upsilon.row_mut(t)[i] += weight * d;
                });
            }
            jac.shift_column(horizon, |t, d| {
                vartheta[t] += weight * d;
            });
        }
    }
    // w(t) enters y(t+1) additively, so the diagonal is one by structure
    if let Some(upsilon) = upsilon.as_mut() {
        for t in 0..horizon {
            upsilon.row_mut(t)[t] = 1.0;
        }
    }
    Ok(SecantLinearization {
        theta,
        upsilon,
        vartheta,
        nodes: options.nodes,
    })
}

/// Only the diagonal `θ_t(t)` of the input secant.
///
/// `y(t+1)` depends on `u(t)` through `f` alone, so the diagonal is the path
/// integral of the local input coupling `∂f/∂u(t)` and costs one simulation
/// per node.
pub fn secant_diagonal(
    plant: &PlantModel,
    a: &Excitation,
    b: &Excitation,
    nodes: usize,
) -> Result<Vec<f64>> {
    check_pair(plant, a, b)?;
    let rule = quadrature(nodes)?;
    let horizon = plant.horizon();
    let mut diag = vec![0.0; horizon];
    let mut point = b.clone();
    let mut scratch = Scratch::for_plant(plant);
    let mut d_ys = vec![0.0; plant.output_order() + 1];
    let mut d_us = vec![0.0; plant.input_order() + 1];
    for &(s, weight) in &rule {
        point.lerp_into(a, b, s);
        let y = plant.outputs(&point.u, Some(&point.w), point.delta)?;
        for (t, d) in diag.iter_mut().enumerate() {
            plant.local_partials(t, &point.u, &y, &mut scratch, &mut d_ys, &mut d_us);
            *d += weight * d_us[0];
        }
    }
    Ok(diag)
}

/// Jacobians of the whole input-to-output map at a point, obtained by
/// chaining the local partials of `f` through the recursion.
struct PointJacobian {
    y: Vec<f64>,
    /// `d_ys[t]`, `d_us[t]`: partials of `f` at step `t`.
    d_ys: Vec<Vec<f64>>,
    d_us: Vec<Vec<f64>>,
    sens: Vec<f64>,
    scratch: Scratch,
}

impl PointJacobian {
    fn new(plant: &PlantModel) -> Self {
        let horizon = plant.horizon();
        PointJacobian {
            y: vec![0.0; horizon + 1],
            d_ys: vec![vec![0.0; plant.output_order() + 1]; horizon],
            d_us: vec![vec![0.0; plant.input_order() + 1]; horizon],
            sens: vec![0.0; horizon + 1],
            scratch: Scratch::for_plant(plant),
        }
    }

    fn linearize(&mut self, plant: &PlantModel, x: &Excitation) -> Result<()> {
        self.y[0] = plant.initial_output() + x.delta;
        plant.propagate(0, &x.u, Some(&x.w), &mut self.y, &mut self.scratch)?;
        for t in 0..plant.horizon() {
            plant.local_partials(t, &x.u, &self.y, &mut self.scratch, &mut self.d_ys[t], &mut self.d_us[t]);
        }
        Ok(())
    }

    /// `Σ_j ∂f/∂y(t-j) · sens(t-j)`.
    fn carried(&self, t: usize) -> f64 {
        self.d_ys[t]
            .iter()
            .enumerate()
            .take(t + 1)
            .map(|(j, d)| d * self.sens[t - j])
            .sum()
    }

    /// Calls `sink(t, ∂y(t+1)/∂u(i))` for every `t ≥ i`.
    fn input_column(&mut self, horizon: usize, i: usize, mut sink: impl FnMut(usize, f64)) {
        self.sens[..=i].fill(0.0);
        for t in i..horizon {
            let direct = self.d_us[t].get(t - i).copied().unwrap_or(0.0);
            let d = self.carried(t) + direct;
            self.sens[t + 1] = d;
            sink(t, d);
        }
    }

    /// Calls `sink(t, ∂y(t+1)/∂w(i))` for every `t ≥ i`.
    fn disturbance_column(&mut self, horizon: usize, i: usize, mut sink: impl FnMut(usize, f64)) {
        self.sens[..=i].fill(0.0);
        for t in i..horizon {
            let d = self.carried(t) + if t == i { 1.0 } else { 0.0 };
            self.sens[t + 1] = d;
            sink(t, d);
        }
    }

    /// Calls `sink(t, ∂y(t+1)/∂δ)`.
    fn shift_column(&mut self, horizon: usize, mut sink: impl FnMut(usize, f64)) {
        self.sens[0] = 1.0;
        for t in 0..horizon {
            let d = self.carried(t);
            self.sens[t + 1] = d;
            sink(t, d);
        }
    }
}

/// How a secant between two trials is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecantMethod {
    /// Path integral of the Jacobian along the straight segment.
    PathIntegral { nodes: usize },
    /// Coordinate-wise mean-value construction: the excitation moves from
    /// `b` to `a` one coordinate at a time (`δ`, then `u(i)` and `w(i)` in
    /// time order) and each step's output change is attributed to that
    /// coordinate. The identity then holds to rounding error however
    /// sensitive the plant is.
    Sequential,
}

/// Increments below this (relative) size use a midpoint tangent instead of
/// a divided difference.
const TINY_INCREMENT: f64 = 1e-9;

fn is_tiny(dx: f64, xa: f64, xb: f64) -> bool {
    dx.abs() <= TINY_INCREMENT * (1.0 + xa.abs() + xb.abs())
}

pub fn secant_with_method(
    plant: &PlantModel,
    a: &Excitation,
    b: &Excitation,
    method: SecantMethod,
    channels: Channels,
) -> Result<SecantLinearization> {
    match method {
        SecantMethod::PathIntegral { nodes } => {
            secant_jacobian_with(plant, a, b, SecantOptions { nodes, channels })
        }
        SecantMethod::Sequential => sequential_secant(plant, a, b, channels),
    }
}

/// Diagonal `θ_t(t)` of the sequential secant.
///
/// When `u(t)` moves, the earlier coordinates already hold their `a` values,
/// so the diagonal is the mean of `∂f/∂u(t)` over `u(t) ∈ [b_t, a_t]` along
/// trajectory `a`.
pub fn sequential_diagonal(plant: &PlantModel, a: &Excitation, b: &Excitation) -> Result<Vec<f64>> {
    check_pair(plant, a, b)?;
    let y = plant.outputs(&a.u, Some(&a.w), a.delta)?;
    let rule = quadrature(DEFAULT_NODES)?;
    let mut coupling = CouplingMean::new(plant);
    let mut u = a.u.clone();
    Ok((0..plant.horizon())
        .map(|t| coupling.mean(plant, t, &mut u, &y, b.u[t], a.u[t], &rule))
        .collect())
}

/// Mean of the local input coupling over an interval of `u(t)`.
struct CouplingMean {
    scratch: Scratch,
    d_ys: Vec<f64>,
    d_us: Vec<f64>,
}

impl CouplingMean {
    fn new(plant: &PlantModel) -> Self {
        CouplingMean {
            scratch: Scratch::for_plant(plant),
            d_ys: vec![0.0; plant.output_order() + 1],
            d_us: vec![0.0; plant.input_order() + 1],
        }
    }

    /// `u[t]` is restored before returning.
    #[allow(clippy::too_many_arguments)]
    fn mean(
        &mut self,
        plant: &PlantModel,
        t: usize,
        u: &mut [f64],
        y: &[f64],
        from: f64,
        to: f64,
        rule: &[(f64, f64)],
    ) -> f64 {
        let saved = u[t];
        let mut total = 0.0;
        for &(s, weight) in rule {
            u[t] = from + s * (to - from);
            plant.local_partials(t, u, y, &mut self.scratch, &mut self.d_ys, &mut self.d_us);
            total += weight * self.d_us[0];
        }
        u[t] = saved;
        total
    }
}

/// The coordinate-wise secant; see [`SecantMethod::Sequential`].
pub fn sequential_secant(
    plant: &PlantModel,
    a: &Excitation,
    b: &Excitation,
    channels: Channels,
) -> Result<SecantLinearization> {
    check_pair(plant, a, b)?;
    let horizon = plant.horizon();
    let rule = quadrature(DEFAULT_NODES)?;
    let with_uncertainty = channels == Channels::All;
    let mut theta = LowerTriangular::zeros(horizon);
    let mut upsilon = with_uncertainty.then(|| LowerTriangular::zeros(horizon));
    let mut vartheta = with_uncertainty.then(|| vec![0.0; horizon]);

    let mut z = b.clone();
    let mut y = plant.outputs(&z.u, Some(&z.w), z.delta)?;
    let mut next = y.clone();
    let mut scratch = Scratch::for_plant(plant);
    let mut jac = PointJacobian::new(plant);
    let mut coupling = CouplingMean::new(plant);

    // initial shift
    let d_delta = a.delta - z.delta;
    if let Some(vartheta) = vartheta.as_mut() {
        if is_tiny(d_delta, a.delta, b.delta) {
            let mut mid = z.clone();
            mid.delta = 0.5 * (a.delta + b.delta);
            jac.linearize(plant, &mid)?;
            jac.shift_column(horizon, |t, d| vartheta[t] = d);
        }
    }
    if d_delta != 0.0 {
        z.delta = a.delta;
        next[0] = plant.initial_output() + z.delta;
        plant.propagate(0, &z.u, Some(&z.w), &mut next, &mut scratch)?;
        if let Some(vartheta) = vartheta.as_mut() {
            if !is_tiny(d_delta, a.delta, b.delta) {
                for t in 0..horizon {
                    vartheta[t] = (next[t + 1] - y[t + 1]) / d_delta;
                }
            }
        }
        y.copy_from_slice(&next);
    }

    for i in 0..horizon {
        // input coordinate
        let du = a.u[i] - z.u[i];
        let diag = coupling.mean(plant, i, &mut z.u, &y, b.u[i], a.u[i], &rule);
        theta.row_mut(i)[i] = diag;
        let tiny = is_tiny(du, a.u[i], b.u[i]);
        if tiny {
            let mut mid = z.clone();
            mid.u[i] = 0.5 * (a.u[i] + b.u[i]);
            jac.linearize(plant, &mid)?;
            jac.input_column(horizon, i, |t, d| {
                if t > i {
                    theta.row_mut(t)[i] = d;
                }
            });
        }
        if du != 0.0 {
            z.u[i] = a.u[i];
            plant.propagate(i, &z.u, Some(&z.w), &mut next, &mut scratch)?;
            if !tiny {
                for t in i + 1..horizon {
                    theta.row_mut(t)[i] = (next[t + 1] - y[t + 1]) / du;
                }
            }
            y[i + 1..].copy_from_slice(&next[i + 1..]);
        }

        // disturbance coordinate
        let dw = a.w[i] - z.w[i];
        let tiny = is_tiny(dw, a.w[i], b.w[i]);
        if let Some(upsilon) = upsilon.as_mut() {
            upsilon.row_mut(i)[i] = 1.0;
            if tiny {
                let mut mid = z.clone();
                mid.w[i] = 0.5 * (a.w[i] + b.w[i]);
                jac.linearize(plant, &mid)?;
                jac.disturbance_column(horizon, i, |t, d| {
                    if t > i {
                        upsilon.row_mut(t)[i] = d;
                    }
                });
            }
        }
        if dw != 0.0 {
            z.w[i] = a.w[i];
            plant.propagate(i, &z.u, Some(&z.w), &mut next, &mut scratch)?;
            if let Some(upsilon) = upsilon.as_mut() {
                if !tiny {
                    for t in i + 1..horizon {
                        upsilon.row_mut(t)[i] = (next[t + 1] - y[t + 1]) / dw;
                    }
                }
            }
            y[i + 1..].copy_from_slice(&next[i + 1..]);
        }
    }
    Ok(SecantLinearization {
        theta,
        upsilon,
        vartheta,
        nodes: DEFAULT_NODES,
    })
}

/// Increments `a − b` of a pair and the measured output increment.
struct PairIncrements {
    du: Vec<f64>,
    dw: Vec<f64>,
    d_delta: f64,
    dy: Vec<f64>,
}

impl PairIncrements {
    fn new(plant: &PlantModel, a: &Excitation, b: &Excitation) -> Result<Self> {
        let ya = plant.outputs(&a.u, Some(&a.w), a.delta)?;
        let yb = plant.outputs(&b.u, Some(&b.w), b.delta)?;
        Ok(PairIncrements {
            du: a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect(),
            dw: a.w.iter().zip(&b.w).map(|(x, y)| x - y).collect(),
            d_delta: a.delta - b.delta,
            dy: ya[1..].iter().zip(&yb[1..]).map(|(x, y)| x - y).collect(),
        })
    }

    fn uncertain(&self) -> bool {
        self.d_delta != 0.0 || self.dw.iter().any(|x| *x != 0.0)
    }

    fn residual(&self, secant: &SecantLinearization) -> f64 {
        secant
            .predict(&self.du, &self.dw, self.d_delta)
            .iter()
            .zip(&self.dy)
            .map(|(p, dy)| (dy - p).abs())
            .fold(0.0, f64::max)
    }
}

/// `max_t |Δy(t+1) − (ΘΔu + ΥΔw + ϑΔδ)(t+1)|` for the pair `(a, b)`.
///
/// The uncertainty channels are only integrated when `a` and `b` differ in
/// `w` or `δ`; otherwise their contribution is identically zero.
pub fn verify_linearization(
    plant: &PlantModel,
    a: &Excitation,
    b: &Excitation,
    nodes: usize,
) -> Result<f64> {
    check_pair(plant, a, b)?;
    let inc = PairIncrements::new(plant, a, b)?;
    let channels = if inc.uncertain() { Channels::All } else { Channels::InputOnly };
    let secant = secant_jacobian_with(plant, a, b, SecantOptions { nodes, channels })?;
    Ok(inc.residual(&secant))
}

/// A secant together with its identity residual.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSecant {
    pub secant: SecantLinearization,
    pub residual: f64,
}

/// Secant whose node count starts at `options.nodes` and is doubled (in
/// panels) until the identity residual is at most `tol`, or until
/// `max_nodes` would be exceeded. The best secant found is returned either
/// way.
pub fn secant_refined(
    plant: &PlantModel,
    a: &Excitation,
    b: &Excitation,
    options: SecantOptions,
    tol: f64,
    max_nodes: usize,
) -> Result<RefinedSecant> {
    check_pair(plant, a, b)?;
    let inc = PairIncrements::new(plant, a, b)?;
    let mut nodes = options.nodes;
    let mut best: Option<RefinedSecant> = None;
    loop {
        let secant = secant_jacobian_with(plant, a, b, SecantOptions { nodes, ..options })?;
        let residual = inc.residual(&secant);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(RefinedSecant { secant, residual });
        }
        let next = 2 * nodes - 1;
        if residual <= tol || nodes < 2 || next > max_nodes {
            return Ok(best.expect("at least one secant was computed"));
        }
        nodes = next;
    }
}

/// The a priori bound on secant entries obtained by propagating the partial
/// derivative bound `beta_f` through the recursion:
/// `β(0) = β_f`, `β(N) = (l+1)·β_f·max_{t<N} β(t) + β_f`.
///
/// It grows geometrically with the horizon and is reported next to the
/// empirical bound for comparison only.
pub fn recursive_theta_bound(output_order: usize, beta_f: f64, horizon: usize) -> f64 {
    let mut running_max = beta_f;
    for _ in 1..horizon {
        let next = (output_order as f64 + 1.0) * beta_f * running_max + beta_f;
        running_max = running_max.max(next);
    }
    running_max
}
