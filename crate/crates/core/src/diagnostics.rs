//! Runtime checks derived from the convergence analysis.
//!
//! The per-step quantities need the true secant parameters, which only the
//! linearization oracle can supply, so everything here works on recorded
//! runs.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::controller::LearningParams;
use crate::error::{check_len, IlcError, Result};
use crate::estimator::{apriori_bound, update_estimates, EstimateTable};
use crate::linearization::{secant_with_method, Channels, Excitation, SecantLinearization, SecantMethod};
use crate::output::{fmt_num, read_numeric_csv, write_atomic};
use crate::plant::{PlantModel, TrialRecord};
use crate::engine::RunHistory;
use crate::triangular::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionCheck {
    /// `γ₁ + γ₂ > Σ_{i≥3} γᵢ`.
    pub cond_a: bool,
    /// `λ > (γ₁² + γ₁γ₂)·β_f̄·β_θ̂`.
    pub cond_b: bool,
    /// `λ − (γ₁² + γ₁γ₂)·β_f̄·β_θ̂`.
    pub margin: f64,
}

impl SelectionCheck {
    pub fn holds(&self) -> bool {
        self.cond_a && self.cond_b
    }
}

/// The gain selection condition for given plant and estimate bounds.
pub fn check_selection(params: &LearningParams, beta_f_upper: f64, beta_theta_hat: f64) -> SelectionCheck {
    let g1 = params.gamma(1);
    let margin = params.lambda - (g1 * g1 + g1 * params.gamma(2)) * beta_f_upper * beta_theta_hat;
    SelectionCheck {
        cond_a: params.cond_a(),
        cond_b: margin > 0.0,
        margin,
    }
}

/// `(ζ, φ)` for one `(k, t)`.
///
/// `theta` is the true diagonal `θ_{k,k−1,t}(t)`, `theta_hat` the estimate
/// `θ̂_{k,k−1,t}(t)` and `theta_prev` the true diagonal `θ_{k−1,0,t}(t)`.
pub fn contraction_gaps(theta: f64, theta_hat: f64, theta_prev: f64, params: &LearningParams) -> (f64, f64) {
    let g1 = params.gamma(1);
    let den = params.lambda + g1 * g1 * theta_hat * theta_hat;
    let lead = g1 * g1 + g1 * params.gamma(2);
    let zeta = (1.0 - lead * theta * theta_hat / den).abs()
        + (3..=params.order())
            .map(|i| (g1 * params.gamma(i) * theta * theta_hat / den).abs())
            .sum::<f64>();
    let phi = (1.0 - lead * theta_hat * theta_prev / den).abs();
    (zeta, phi)
}

/// Companion matrix of the lifted high-order error recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedErrorMatrix {
    pub matrix: DMatrix<f64>,
    pub theta: f64,
    pub theta_hat: f64,
}

impl LiftedErrorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `p₁, …, p_{m−1}`.
    pub fn top_row(&self) -> Vec<f64> {
        self.matrix.row(0).iter().copied().collect()
    }
}

/// The `(m−1)×(m−1)` companion matrix with top row `p₁..p_{m−1}` and a unit
/// subdiagonal.
pub fn lifted_matrix(theta: f64, theta_hat: f64, params: &LearningParams) -> Result<LiftedErrorMatrix> {
    let m = params.order();
    if m < 2 {
        return Err(IlcError::invalid("gamma", "the lifted recursion needs order m >= 2"));
    }
    let g1 = params.gamma(1);
    let scale = theta * theta_hat / (params.lambda + g1 * g1 * theta_hat * theta_hat);
    let dim = m - 1;
    let mut matrix = DMatrix::zeros(dim, dim);
    matrix[(0, 0)] = 1.0 - (g1 * g1 + g1 * params.gamma(2)) * scale;
    for i in 2..=dim {
        matrix[(0, i - 1)] = -g1 * params.gamma(i + 1) * scale;
    }
    for r in 1..dim {
        matrix[(r, r - 1)] = 1.0;
    }
    Ok(LiftedErrorMatrix {
        matrix,
        theta,
        theta_hat,
    })
}

/// `‖|P_w|⋯|P_1|·1‖∞` for a window of `window` consecutive matrices, oldest
/// first.
pub fn window_product_norm(ps: &[LiftedErrorMatrix], window: usize) -> Result<f64> {
    check_len("window", window, ps.len())?;
    let Some(first) = ps.first() else {
        return Ok(1.0);
    };
    let dim = first.dim();
    let mut v = DVector::from_element(dim, 1.0);
    for p in ps {
        check_len("lifted matrix", dim, p.dim())?;
        v = p.matrix.abs() * v;
    }
    Ok(v.amax())
}

/// Closed-form upper bounds `(ζ̄, φ̄)` on the contraction gaps.
pub fn bound_formulas(params: &LearningParams, beta_f_lower: f64, beta_theta_hat: f64) -> (f64, f64) {
    let g1 = params.gamma(1);
    let g2 = params.gamma(2);
    let den = params.lambda + g1 * g1 * beta_theta_hat * beta_theta_hat;
    let floor = beta_f_lower * params.epsilon / den;
    let zeta_bar = 1.0 - g1 * (g1 + g2 - params.high_order_sum()) * floor;
    let phi_bar = 1.0 - (g1 * g1 + g1 * g2) * floor;
    (zeta_bar, phi_bar)
}

/// One `(k, t)` row of the analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub k: usize,
    pub t: usize,
    pub zeta: f64,
    pub phi: f64,
    /// NaN when fewer than `m − 1` lifted matrices are available.
    pub window_norm: f64,
    pub kappa: f64,
    pub psi: f64,
    pub consistency_err_e: f64,
    pub consistency_err_u: f64,
    /// Largest `ζ` over the window that produced `window_norm`.
    pub window_zeta_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub method: SecantMethod,
    /// Forces the uncertainty-aware identities. When `None` they are used
    /// whenever any trial carries a disturbance or initial shift.
    pub robust: Option<bool>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            method: SecantMethod::Sequential,
            robust: None,
        }
    }
}

/// Bounds observed over a run next to their a priori counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSummary {
    /// Largest and smallest true input coupling `θ_t(t)` seen by the oracle.
    pub beta_f_upper: f64,
    pub beta_f_lower: f64,
    /// Largest `|θ|` entry over all oracle secants.
    pub beta_theta: f64,
    /// Largest `|θ̂_t(t)|` over the run.
    pub beta_theta_hat: f64,
    pub max_est_row_norm: f64,
    /// A priori row-norm bound evaluated with the empirical `β_θ`.
    pub apriori_est_bound: f64,
    pub selection_empirical: SelectionCheck,
    pub selection_apriori: SelectionCheck,
    pub zeta_bar: f64,
    pub phi_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub robust: bool,
    pub rows: Vec<DiagnosticRow>,
    pub bounds: BoundSummary,
    pub max_zeta: f64,
    pub max_phi: f64,
    pub max_consistency_err_e: f64,
    pub max_consistency_err_u: f64,
    /// Windows whose product norm exceeds their largest `ζ` (only counted
    /// when that `ζ` is below one).
    pub window_violations: usize,
    pub sup_abs_input: f64,
    pub sup_abs_output: f64,
}

impl DiagnosticsReport {
    /// Gap bounds hold at every `(k, t)` whenever the empirical selection
    /// condition does. Vacuously true otherwise.
    pub fn gap_bounds_hold(&self) -> bool {
        !self.bounds.selection_empirical.holds()
            || (self.max_zeta <= self.bounds.zeta_bar && self.max_phi <= self.bounds.phi_bar)
    }

    pub fn consistency_holds(&self, tol: f64) -> bool {
        self.max_consistency_err_e <= tol && self.max_consistency_err_u <= tol
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "k,t,zeta_kt,phi_kt,window_norm,kappa,psi,consistency_err_e,consistency_err_u"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.k,
                r.t,
                fmt_num(r.zeta),
                fmt_num(r.phi),
                fmt_num(r.window_norm),
                fmt_num(r.kappa),
                fmt_num(r.psi),
                fmt_num(r.consistency_err_e),
                fmt_num(r.consistency_err_u)
            )?;
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_csv(w))
    }
}

/// `|lhs − rhs|` relative to the size of the terms forming `rhs`.
fn abs_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).abs()).sum()
}

fn relative_gap(lhs: f64, rhs: f64, scale: f64) -> f64 {
    let diff = (lhs - rhs).abs();
    let denom = lhs.abs().max(scale);
    if diff == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Runs every per-`(k, t)` check over a recorded history.
pub fn analyze(
    plant: &PlantModel,
    params: &LearningParams,
    history: &RunHistory,
    options: AnalysisOptions,
) -> Result<DiagnosticsReport> {
    params.validate()?;
    let horizon = plant.horizon();
    let trials = &history.trials;
    check_len("estimate history", trials.len(), history.estimates.len())?;
    if trials.is_empty() {
        return Err(IlcError::invalid("history", "no trials recorded"));
    }
    for trial in trials {
        check_len("trial horizon", horizon, trial.horizon())?;
    }
    let robust = options.robust.unwrap_or_else(|| {
        trials
            .iter()
            .any(|tr| tr.delta != 0.0 || tr.w.iter().any(|w| *w != 0.0))
    });
    let channels = if robust { Channels::All } else { Channels::InputOnly };
    let secant = |a: &Excitation, b: &Excitation| secant_with_method(plant, a, b, options.method, channels);
    let m = params.order();
    let g1 = params.gamma(1);
    let g12 = g1 + params.gamma(2);
    let window = m.saturating_sub(1);

    let first = &trials[0];
    let excitations: Vec<Excitation> = trials.iter().map(Excitation::of_trial).collect();
    // Θ_{k−1,0}; for k = 1 the increment is zero and the secant is the
    // Jacobian at trial 0.
    let mut to_first = secant(&excitations[0], &excitations[0])?;

    let mut rows = Vec::with_capacity(trials.len().saturating_sub(1) * horizon);
    let mut lifted: Vec<Vec<LiftedErrorMatrix>> = vec![Vec::new(); horizon];
    let mut zetas: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    let mut beta_f_upper = f64::NEG_INFINITY;
    let mut beta_f_lower = f64::INFINITY;
    let mut beta_theta = to_first.theta.max_abs();
    let mut max_zeta = f64::NEG_INFINITY;
    let mut max_phi = f64::NEG_INFINITY;
    let mut window_violations = 0;

    for k in 1..trials.len() {
        let cur = &trials[k];
        let prev = &trials[k - 1];
        let est = &history.estimates[k];
        let step = secant(&excitations[k], &excitations[k - 1])?;
        beta_theta = beta_theta.max(step.theta.max_abs());

        let du: Vec<f64> = cur.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
        let dw: Vec<f64> = cur.w.iter().zip(&prev.w).map(|(a, b)| a - b).collect();
        let d_delta = cur.delta - prev.delta;
        let w_drift: Vec<f64> = prev.w.iter().zip(&first.w).map(|(a, b)| a - b).collect();
        let delta_drift = prev.delta - first.delta;
        let output_scale = cur.max_abs_output() + prev.max_abs_output();
        let past_error = |lag: usize, t: usize| -> f64 {
            k.checked_sub(lag).map_or(0.0, |j| trials[j].e[t])
        };

        for t in 0..horizon {
            let theta_row = step.theta.row(t);
            let prev_row = to_first.theta.row(t);
            let hat_row = est.row(t);
            let theta = theta_row[t];
            let theta_prev = prev_row[t];
            let theta_hat = hat_row[t];
            beta_f_upper = beta_f_upper.max(theta).max(theta_prev);
            beta_f_lower = beta_f_lower.min(theta).min(theta_prev);
            let den = params.lambda + g1 * g1 * theta_hat * theta_hat;
            let (zeta, phi) = contraction_gaps(theta, theta_hat, theta_prev, params);
            max_zeta = max_zeta.max(zeta);
            max_phi = max_phi.max(phi);

            // error recursion
            let hat_coupling = dot(&hat_row[..t], &du[..t]);
            let lead = g1 * g1 * theta * theta_hat / den;
            let mut kappa = lead * hat_coupling - dot(&theta_row[..t], &du[..t]);
            // magnitude of the summands, the scale rounding acts on
            let mut kappa_mass = (lead * abs_dot(&hat_row[..t], &du[..t])).abs() + abs_dot(&theta_row[..t], &du[..t]);
            if robust {
                let upsilon = step.upsilon.as_ref().expect("robust secant has all channels");
                let vartheta = step.vartheta.as_ref().expect("robust secant has all channels");
                kappa -= dw[t] + dot(&upsilon.row(t)[..t], &dw[..t]) + vartheta[t] * d_delta;
                kappa_mass += dw[t].abs() + abs_dot(&upsilon.row(t)[..t], &dw[..t]) + (vartheta[t] * d_delta).abs();
            }
            let p1 = 1.0 - (g1 * g1 + g1 * params.gamma(2)) * theta * theta_hat / den;
            let mut predicted_e = p1 * past_error(1, t) + kappa;
            // e = y_d − y carries rounding at the scale of the outputs
            let mut scale_e = (p1 * past_error(1, t)).abs() + kappa_mass + output_scale;
            for i in 3..=m {
                let term = -g1 * params.gamma(i) * theta * theta_hat / den * past_error(i - 1, t);
                predicted_e += term;
                scale_e += term.abs();
            }
            let err_e = relative_gap(cur.e[t], predicted_e, scale_e);

            // input recursion
            let mut bracket = g12 * dot(&prev_row[..=t], &first.u[..=t])
                - g12 * dot(&prev_row[..t], &prev.u[..t])
                - g1 * hat_coupling
                + g12 * first.e[t];
            for i in 3..=m {
                bracket += params.gamma(i) * past_error(i - 1, t);
            }
            if robust {
                let upsilon = to_first.upsilon.as_ref().expect("robust secant has all channels");
                let vartheta = to_first.vartheta.as_ref().expect("robust secant has all channels");
                bracket -= g12
                    * (w_drift[t] + dot(&upsilon.row(t)[..t], &w_drift[..t]) + vartheta[t] * delta_drift);
            }
            let psi = g1 * theta_hat / den * bracket;
            let coeff = 1.0 - (g1 * g1 + g1 * params.gamma(2)) * theta_hat * theta_prev / den;
            let predicted_u = coeff * prev.u[t] + psi;
            let scale_u = (coeff * prev.u[t]).abs() + psi.abs() + prev.u[t].abs();
            let err_u = relative_gap(cur.u[t], predicted_u, scale_u);

            // window product over the trailing m−1 iterations
            zetas[t].push(zeta);
            let (window_norm, window_zeta_max) = if window >= 1 {
                lifted[t].push(lifted_matrix(theta, theta_hat, params)?);
                if lifted[t].len() >= window {
                    let ps = &lifted[t][lifted[t].len() - window..];
                    let zs = &zetas[t][zetas[t].len() - window..];
                    let norm = window_product_norm(ps, window)?;
                    let zmax = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if zmax < 1.0 && norm > zmax + 1e-12 {
                        window_violations += 1;
                    }
                    (norm, zmax)
                } else {
                    (f64::NAN, f64::NAN)
                }
            } else {
                (f64::NAN, f64::NAN)
            };
            if lifted[t].len() > window {
                lifted[t].remove(0);
                zetas[t].remove(0);
            }

            rows.push(DiagnosticRow {
                k,
                t,
                zeta,
                phi,
                window_norm,
                kappa,
                psi,
                consistency_err_e: err_e,
                consistency_err_u: err_u,
                window_zeta_max,
            });
        }
        to_first = secant(&excitations[k], &excitations[0])?;
        beta_theta = beta_theta.max(to_first.theta.max_abs());
    }

    let beta_theta_hat = history
        .estimates
        .iter()
        .flat_map(|e| e.table().diagonal())
        .fold(0.0, |acc: f64, d| acc.max(d.abs()));
    let max_est_row_norm = history.estimates.iter().map(EstimateTable::max_row_norm).fold(0.0, f64::max);
    let init = history.estimates[0].initial();
    let apriori_est_bound = apriori_bound(init.max_row_norm(), params.mu1, params.mu2, horizon, beta_theta);
    if rows.is_empty() {
        beta_f_upper = f64::NAN;
        beta_f_lower = f64::NAN;
    }
    let (zeta_bar, phi_bar) = bound_formulas(params, beta_f_lower, beta_theta_hat);
    let bounds = BoundSummary {
        beta_f_upper,
        beta_f_lower,
        beta_theta,
        beta_theta_hat,
        max_est_row_norm,
        apriori_est_bound,
        selection_empirical: check_selection(params, beta_f_upper, beta_theta_hat),
        selection_apriori: check_selection(params, beta_f_upper, apriori_est_bound),
        zeta_bar,
        phi_bar,
    };
    let max_err = |f: fn(&DiagnosticRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    Ok(DiagnosticsReport {
        robust,
        bounds,
        max_zeta,
        max_phi,
        max_consistency_err_e: max_err(|r| r.consistency_err_e),
        max_consistency_err_u: max_err(|r| r.consistency_err_u),
        window_violations,
        sup_abs_input: trials.iter().map(TrialRecord::max_abs_input).fold(0.0, f64::max),
        sup_abs_output: trials.iter().map(TrialRecord::max_abs_output).fold(0.0, f64::max),
        rows,
    })
}

/// Rebuilds the estimate tables of a run from its trials, reproducing the
/// engine's update sequence.
pub fn replay_history(
    trials: Vec<TrialRecord>,
    initial: EstimateTable,
    params: &LearningParams,
) -> Result<RunHistory> {
    let mut estimates = Vec::with_capacity(trials.len());
    let mut est = initial;
    for k in 0..trials.len() {
        if k >= 2 {
            let (cur, prev) = (&trials[k - 1], &trials[k - 2]);
            let du: Vec<f64> = cur.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
            let dy: Vec<f64> = (0..cur.horizon()).map(|t| cur.y[t + 1] - prev.y[t + 1]).collect();
            est = update_estimates(&est, &du, &dy, params.mu1, params.mu2)?;
        }
        estimates.push(est.clone());
    }
    Ok(RunHistory { trials, estimates })
}

/// Reads the `k,t,u,y,w,delta` trial log and scores it against `reference`.
pub fn read_trials(path: &Path, reference: &[f64]) -> Result<Vec<TrialRecord>> {
    let csv = read_numeric_csv(path)?;
    let expected = ["k", "t", "u", "y", "w", "delta"];
    if csv.header != expected {
        return Err(IlcError::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header {}", expected.join(",")),
        });
    }
    let horizon = reference.len() - 1;
    let bad = |line: usize, reason: &str| IlcError::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    if csv.rows.len() % (horizon + 1) != 0 {
        return Err(bad(csv.rows.len() + 1, "trial log does not match the horizon"));
    }
    let mut trials = Vec::new();
    for (k, chunk) in csv.rows.chunks(horizon + 1).enumerate() {
        let line = k * (horizon + 1) + 2;
        if chunk.iter().enumerate().any(|(t, r)| r[0] != k as f64 || r[1] != t as f64) {
            return Err(bad(line, "trials must be listed in order of k and t"));
        }
        let u: Vec<f64> = chunk[..horizon].iter().map(|r| r[2]).collect();
        let y: Vec<f64> = chunk.iter().map(|r| r[3]).collect();
        let w: Vec<f64> = chunk[..horizon].iter().map(|r| r[4]).collect();
        let e = (0..horizon).map(|t| reference[t + 1] - y[t + 1]).collect();
        trials.push(TrialRecord {
            iteration: k,
            u,
            y,
            e,
            w,
            delta: chunk[0][5],
        });
    }
    Ok(trials)
}

/// Largest absolute difference between an `estimates_<k>.csv` snapshot and
/// `table`.
pub fn compare_estimate_snapshot(path: &Path, table: &EstimateTable) -> Result<f64> {
    let csv = read_numeric_csv(path)?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (n, r) in csv.rows.iter().enumerate() {
        let (t, i) = (r[0] as usize, r[1] as usize);
        if t >= table.horizon() || i > t {
            return Err(IlcError::Parse {
                path: path.to_path_buf(),
                line: n + 2,
                reason: format!("entry ({t}, {i}) outside the table"),
            });
        }
        worst = worst.max((table.row(t)[i] - r[2]).abs());
        count += 1;
    }
    let expected = table.horizon() * (table.horizon() + 1) / 2;
    if count != expected {
        return Err(IlcError::Parse {
            path: path.to_path_buf(),
            line: count + 1,
            reason: format!("expected {expected} entries, found {count}"),
        });
    }
    Ok(worst)
}

/// Secant oracle between two recorded trials (increments `a − b`).
pub fn trial_secant(
    plant: &PlantModel,
    a: &TrialRecord,
    b: &TrialRecord,
    method: SecantMethod,
    channels: Channels,
) -> Result<SecantLinearization> {
    secant_with_method(plant, &Excitation::of_trial(a), &Excitation::of_trial(b), method, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LearningParams {
        LearningParams::benchmark()
    }

    #[test]
    fn selection_examples() {
        let p = params();
        let check = check_selection(&p, 1.0, 1.0);
        assert!(check.cond_a && check.cond_b);
        assert!((check.margin - 0.248).abs() < 1e-12);
        assert!(check_selection(&p, 1.0, 0.0).cond_b);
        assert!(!check_selection(&p, 1.0, 14_157.0).cond_b);
    }

    #[test]
    fn gap_examples() {
        let (zeta, phi) = contraction_gaps(0.9, 0.9, 0.9, &params());
        assert!((zeta - 0.624_446_786_090_622).abs() < 1e-6);
        assert!((phi - 0.598_840_885_142_255).abs() < 1e-6);
        assert_eq!(contraction_gaps(0.0, 0.9, 0.0, &params()), (1.0, 1.0));
    }

    #[test]
    fn lifted_matrix_examples() {
        let p = params();
        let lm = lifted_matrix(0.9, 0.9, &p).unwrap();
        let top = lm.top_row();
        assert!((top[0] - 0.598_840_885_142_255).abs() < 1e-6);
        assert!((top[1] + 0.025_605_900_948_367).abs() < 1e-6);
        assert_eq!(lm.matrix[(1, 0)], 1.0);
        assert_eq!(lm.matrix[(1, 1)], 0.0);
        let (zeta, _) = contraction_gaps(0.9, 0.9, 0.9, &p);
        assert!((top.iter().map(|x| x.abs()).sum::<f64>() - zeta).abs() < 1e-15);

        let m2 = LearningParams { gammas: vec![0.8, 0.14], ..p.clone() };
        assert_eq!(lifted_matrix(0.9, 0.9, &m2).unwrap().dim(), 1);
        let m1 = LearningParams { gammas: vec![0.8], ..p };
        assert!(matches!(lifted_matrix(0.9, 0.9, &m1), Err(IlcError::InvalidParams { .. })));
    }

    #[test]
    fn window_product_examples() {
        let p = params();
        let lm = lifted_matrix(0.9, 0.9, &p).unwrap();
        let norm = window_product_norm(&[lm.clone(), lm.clone()], 2).unwrap();
        assert!((norm - 0.624_446_786_090_622).abs() < 1e-6);
        let zero = LiftedErrorMatrix {
            matrix: DMatrix::zeros(2, 2),
            theta: 0.0,
            theta_hat: 0.0,
        };
        assert_eq!(window_product_norm(&[zero.clone(), zero], 2).unwrap(), 0.0);
        assert!(window_product_norm(&[lm], 2).is_err());
    }

    #[test]
    fn closed_form_bounds() {
        let p = params();
        let (zeta_bar, phi_bar) = bound_formulas(&p, 0.5, 1.0);
        assert!((zeta_bar - 0.997_853_658_536_585).abs() < 1e-6);
        assert!((phi_bar - 0.997_707_317_073_171).abs() < 1e-6);
        let tiny = LearningParams { epsilon: 1e-300, ..p };
        let (z, f) = bound_formulas(&tiny, 0.5, 1.0);
        assert_eq!((z, f), (1.0, 1.0));
    }
}
