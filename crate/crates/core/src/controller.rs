//! Optimization-based input update.
//!
//! At each time step the new input minimizes
//!
//! ```text
//! J = [γ₁·e_k(t+1) + Σ_{i≥2} γᵢ·e_{k−i+1}(t+1)]² + λ·Δu_k(t)²
//! ```
//!
//! with the unknown plant increment replaced by the current estimate table.

use std::collections::VecDeque;

use crate::error::{check_len, IlcError, Result};
use crate::estimator::EstimateTable;

#[derive(Debug, Clone, PartialEq)]
pub struct LearningParams {
    pub lambda: f64,
    /// `γ₁..γ_m`; the length is the order `m`.
    pub gammas: Vec<f64>,
    /// Reset floor for the estimate diagonal.
    pub epsilon: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl LearningParams {
    pub fn new(lambda: f64, gammas: Vec<f64>, epsilon: f64, mu1: f64, mu2: f64) -> Result<Self> {
        let params = LearningParams {
            lambda,
            gammas,
            epsilon,
            mu1,
            mu2,
        };
        params.validate()?;
        Ok(params)
    }

    /// Gains used in the benchmark study.
    pub fn benchmark() -> Self {
        LearningParams {
            lambda: 1.0,
            gammas: vec![0.8, 0.14, 0.06],
            epsilon: 0.01,
            mu1: 1.0,
            mu2: 0.001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(IlcError::invalid(name, format!("must be positive and finite, got {v}")))
            }
        }
        if self.gammas.is_empty() {
            return Err(IlcError::invalid("gamma", "order m must be at least 1"));
        }
        positive("lambda", self.lambda)?;
        for &g in &self.gammas {
            positive("gamma", g)?;
        }
        positive("epsilon", self.epsilon)?;
        positive("mu1", self.mu1)?;
        positive("mu2", self.mu2)
    }

    pub fn order(&self) -> usize {
        self.gammas.len()
    }

    /// `γᵢ` with 1-based `i`; zero beyond the order.
    pub fn gamma(&self, i: usize) -> f64 {
        assert!(i >= 1, "gains are indexed from 1");
        self.gammas.get(i - 1).copied().unwrap_or(0.0)
    }

    /// `Σ_{i≥3} γᵢ`.
    pub fn high_order_sum(&self) -> f64 {
        self.gammas.iter().skip(2).sum()
    }

    /// `γ₁ + γ₂ > Σ_{i≥3} γᵢ`.
    pub fn cond_a(&self) -> bool {
        self.gamma(1) + self.gamma(2) > self.high_order_sum()
    }

    /// The diagonal gain pair `(γ₁θ̂/den, γ₁²θ̂/den)` with `den = λ + γ₁²θ̂²`.
    pub(crate) fn gains_at(&self, theta_hat: f64) -> (f64, f64) {
        let g1 = self.gamma(1);
        let den = self.lambda + g1 * g1 * theta_hat * theta_hat;
        (g1 * theta_hat / den, g1 * g1 * theta_hat / den)
    }
}

/// The `m − 1` most recent error trajectories. Missing history reads as zero.
///
/// Each trajectory is indexed by `t` and holds `e(t+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorHistory {
    horizon: usize,
    capacity: usize,
    recent: VecDeque<Vec<f64>>,
    zeros: Vec<f64>,
}

impl ErrorHistory {
    /// History for order `m`. At least one trajectory is always kept since
    /// the update needs `e_{k−1}` even when `m = 1`.
    pub fn new(order: usize, horizon: usize) -> Self {
        let capacity = order.saturating_sub(1).max(1);
        ErrorHistory {
            horizon,
            capacity,
            recent: VecDeque::with_capacity(capacity),
            zeros: vec![0.0; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Records the error of the newest completed trial.
    pub fn push(&mut self, e: Vec<f64>) -> Result<()> {
        check_len("error trajectory", self.horizon, e.len())?;
        if self.recent.len() == self.capacity {
            self.recent.pop_back();
        }
        self.recent.push_front(e);
        Ok(())
    }

    /// `e_{k−lag}` for `lag ≥ 1`, relative to the iteration being computed.
    pub fn lag(&self, lag: usize) -> &[f64] {
        assert!(lag >= 1, "lag 0 is the trajectory being computed");
        self.recent.get(lag - 1).map_or(&self.zeros, Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }
}

/// Weighted error bracket `(γ₁+γ₂)e_{k−1}(t+1) + Σ_{i≥3} γᵢ e_{k−i+1}(t+1)`.
pub(crate) fn error_bracket(params: &LearningParams, history: &ErrorHistory, t: usize) -> f64 {
    let mut sum = (params.gamma(1) + params.gamma(2)) * history.lag(1)[t];
    for i in 3..=params.order() {
        sum += params.gamma(i) * history.lag(i - 1)[t];
    }
    sum
}

/// Computes `u_k` from `u_{k−1}`, the current estimates and the error
/// history, in a single forward pass over `t`.
pub fn update_input(
    u_prev: &[f64],
    est: &EstimateTable,
    history: &ErrorHistory,
    params: &LearningParams,
) -> Result<Vec<f64>> {
    let horizon = u_prev.len();
    check_len("estimate table", horizon, est.horizon())?;
    check_len("error history", horizon, history.horizon())?;
    params.validate()?;

    let mut u = u_prev.to_vec();
    let mut du = vec![0.0; horizon];
    for t in 0..horizon {
        let row = est.row(t);
        let (gain_e, gain_u) = params.gains_at(row[t]);
        let coupling: f64 = row[..t].iter().zip(&du[..t]).map(|(a, b)| a * b).sum();
        du[t] = -gain_u * coupling + gain_e * error_bracket(params, history, t);
        u[t] = u_prev[t] + du[t];
    }
    Ok(u)
}

/// The learning index `J` at one time step.
///
/// `past_errors` holds `e_{k−1}(t+1), e_{k−2}(t+1), …`; entries beyond the
/// order are ignored and missing ones count as zero.
pub fn j_index(du: f64, predicted_e: f64, past_errors: &[f64], params: &LearningParams) -> f64 {
    let mut tracking = params.gamma(1) * predicted_e;
    for (i, e) in (2..=params.order()).zip(past_errors) {
        tracking += params.gamma(i) * e;
    }
    tracking * tracking + params.lambda * du * du
}
