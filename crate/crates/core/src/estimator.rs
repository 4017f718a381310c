//! Data-driven estimation of the secant parameters.
//!
//! Row `t` of the table estimates `θ_t(0..=t)`, the coefficients relating
//! `Δy(t+1)` to `Δu(0..=t)` between consecutive trials. Each update is the
//! closed-form minimizer of
//!
//! ```text
//! H(θ̂) = [Δy − Δuᵀθ̂]² + μ₁‖θ̂ − θ̂_prev‖² + μ₂‖θ̂‖²
//! ```
//!
//! followed by a reset of the diagonal entry to its initial value whenever it
//! falls below the floor `ε`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, IlcError, Result};
use crate::output::fmt_num;
use crate::triangular::{dot, LowerTriangular};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    estimates: LowerTriangular,
    iteration: usize,
    floor: f64,
    initial: Arc<LowerTriangular>,
    resets: usize,
}

impl EstimateTable {
    /// The table in force before the first data-driven update, with every
    /// entry set to `value`. It is also the table resets restore from.
    pub fn filled(horizon: usize, value: f64, floor: f64) -> Result<Self> {
        EstimateTable::from_initial(LowerTriangular::filled(horizon, value), floor)
    }

    pub fn from_initial(initial: LowerTriangular, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(IlcError::invalid("epsilon", "reset floor must be positive"));
        }
        if let Some(t) = initial.diagonal().iter().position(|d| !(*d >= floor)) {
            return Err(IlcError::invalid(
                "initial_estimate",
                format!("diagonal entry at t = {t} is below the floor {floor}"),
            ));
        }
        Ok(EstimateTable {
            estimates: initial.clone(),
            iteration: 1,
            floor,
            initial: Arc::new(initial),
            resets: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.estimates.dim()
    }

    /// Iteration tag `k` of `θ̂_{k,k-1}`; the initial table carries `k = 1`.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Number of diagonal resets performed by the update that produced this
    /// table.
    pub fn resets(&self) -> usize {
        self.resets
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.estimates.row(t)
    }

    pub fn diagonal(&self, t: usize) -> f64 {
        self.estimates.row(t)[t]
    }

    pub fn table(&self) -> &LowerTriangular {
        &self.estimates
    }

    pub fn initial(&self) -> &LowerTriangular {
        &self.initial
    }

    pub fn max_row_norm(&self) -> f64 {
        self.estimates.max_row_norm()
    }

    /// Writes `t,i,theta_hat` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,i,theta_hat")?;
        for (t, row) in self.estimates.rows().enumerate() {
            for (i, v) in row.iter().enumerate() {
                writeln!(out, "{t},{i},{}", fmt_num(*v))?;
            }
        }
        Ok(())
    }
}

fn check_weights(mu1: f64, mu2: f64) -> Result<()> {
    if !(mu1 > 0.0 && mu1.is_finite()) {
        return Err(IlcError::invalid("mu1", "must be positive"));
    }
    if !(mu2 > 0.0 && mu2.is_finite()) {
        return Err(IlcError::invalid("mu2", "must be positive"));
    }
    Ok(())
}

/// One adaptive update from the increments of the two latest trials.
///
/// `du[i] = Δu(i)` and `dy[t] = Δy(t+1)`.
pub fn update_estimates(
    prev: &EstimateTable,
    du: &[f64],
    dy: &[f64],
    mu1: f64,
    mu2: f64,
) -> Result<EstimateTable> {
    let horizon = prev.horizon();
    check_len("input increment", horizon, du.len())?;
    check_len("output increment", horizon, dy.len())?;
    check_weights(mu1, mu2)?;

    let retain = mu1 / (mu1 + mu2);
    let mut next = prev.estimates.clone();
    let mut resets = 0;
    let mut energy = 0.0;
    for t in 0..horizon {
        energy += du[t] * du[t];
        let old = prev.estimates.row(t);
        let predicted = dot(old, &du[..=t]);
        let gain = (dy[t] - retain * predicted) / (mu1 + mu2 + energy);
        let row = next.row_mut(t);
        for i in 0..=t {
            row[i] = retain * old[i] + du[i] * gain;
        }
        if row[t] < prev.floor {
            row[t] = prev.initial.row(t)[t];
            resets += 1;
        }
    }
    Ok(EstimateTable {
        estimates: next,
        iteration: prev.iteration + 1,
        floor: prev.floor,
        initial: Arc::clone(&prev.initial),
        resets,
    })
}

/// `Q = I − Δu Δuᵀ / (μ₁ + μ₂ + ‖Δu‖²)`, the map applied to the previous
/// estimate row (scaled by `μ₁/(μ₁+μ₂)`).
pub fn q_matrix(du: &[f64], mu1: f64, mu2: f64) -> DMatrix<f64> {
    let v = DVector::from_column_slice(du);
    let denom = mu1 + mu2 + v.norm_squared();
    DMatrix::identity(du.len(), du.len()) - (&v * v.transpose()) / denom
}

/// Upper bound on every row norm of every estimate table over a run.
///
/// Holds for any input update law; the learning gains do not enter.
pub fn apriori_bound(max_init_norm: f64, mu1: f64, mu2: f64, horizon: usize, beta_theta: f64) -> f64 {
    max_init_norm + (mu1 + mu2) / mu2 * (horizon as f64).sqrt() * beta_theta
}

/// The estimation index `H` for one row.
pub fn h_index(
    theta_hat: &[f64],
    theta_prev: &[f64],
    du: &[f64],
    dy: f64,
    mu1: f64,
    mu2: f64,
) -> Result<f64> {
    check_len("previous estimate", theta_hat.len(), theta_prev.len())?;
    check_len("input increment", theta_hat.len(), du.len())?;
    let fit = dy - dot(du, theta_hat);
    let drift: f64 = theta_hat
        .iter()
        .zip(theta_prev)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let size: f64 = theta_hat.iter().map(|a| a * a).sum();
    Ok(fit * fit + mu1 * drift + mu2 * size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_increment_shrinks_by_retention() {
        let prev = EstimateTable::filled(4, 0.9, 0.01).unwrap();
        let next = update_estimates(&prev, &[0.0; 4], &[0.0; 4], 1.0, 0.001).unwrap();
        for t in 0..4 {
            for &v in next.row(t) {
                assert!((v - 0.899_100_899_100_899).abs() < 1e-6);
            }
        }
        assert_eq!(next.resets(), 0);
        assert_eq!(next.iteration(), 2);
    }

    #[test]
    fn scalar_update_matches_regularized_minimizer() {
        // (Δu·Δy + μ₁·prev)/(Δu² + μ₁ + μ₂) = 2.9/2.001
        let prev = EstimateTable::filled(1, 0.9, 0.01).unwrap();
        let next = update_estimates(&prev, &[1.0], &[2.0], 1.0, 0.001).unwrap();
        assert!((next.row(0)[0] - 1.449_275_362_318_840_6).abs() < 1e-6);
    }

    #[test]
    fn reset_restores_only_the_diagonal() {
        let prev = EstimateTable::filled(2, 0.9, 0.01).unwrap();
        // strongly negative Δy drives both rows down
        let next = update_estimates(&prev, &[1.0, 1.0], &[-10.0, -10.0], 1.0, 0.001).unwrap();
        assert_eq!(next.resets(), 2);
        assert_eq!(next.diagonal(0), 0.9);
        assert_eq!(next.diagonal(1), 0.9);
        assert!(next.row(1)[0] < 0.0, "off-diagonal keeps its updated value");
    }

    #[test]
    fn reset_restores_the_frozen_initial_table() {
        let init = LowerTriangular::from_rows(vec![vec![0.7], vec![0.1, 0.8]]).unwrap();
        let mut table = EstimateTable::from_initial(init, 0.05).unwrap();
        for _ in 0..5 {
            table = update_estimates(&table, &[0.5, -0.2], &[0.3, 0.1], 1.0, 0.001).unwrap();
        }
        let crushed = update_estimates(&table, &[1.0, 0.0], &[-50.0, 0.0], 1.0, 0.001).unwrap();
        assert_eq!(crushed.diagonal(0), 0.7);
        assert!(crushed.resets() >= 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let prev = EstimateTable::filled(3, 0.9, 0.01).unwrap();
        assert!(matches!(
            update_estimates(&prev, &[0.0; 2], &[0.0; 3], 1.0, 0.001),
            Err(IlcError::DimensionMismatch { .. })
        ));
        assert!(update_estimates(&prev, &[0.0; 3], &[0.0; 3], 1.0, 0.0).is_err());
        assert!(EstimateTable::filled(3, 0.005, 0.01).is_err());
        assert!(EstimateTable::filled(3, 0.9, 0.0).is_err());
    }

    #[test]
    fn q_matrix_examples() {
        assert_eq!(q_matrix(&[0.0, 0.0], 1.0, 0.001), DMatrix::identity(2, 2));
        let q = q_matrix(&[1.0], 1.0, 0.001);
        assert!((q[(0, 0)] - 0.500_249_875_062_468_8).abs() < 1e-6);
        let q = q_matrix(&[1.0, -2.0, 0.5], 1.0, 0.001);
        assert_eq!(q, q.transpose());
        let eig = q.symmetric_eigen().eigenvalues;
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apriori_bound_examples() {
        assert_eq!(apriori_bound(1.3, 1.0, 0.001, 50, 0.0), 1.3);
        // 1 + 1001·√50·2
        let b = apriori_bound(1.0, 1.0, 0.001, 50, 2.0);
        assert!((b - 14_157.277_759_354_68).abs() < 0.1);
    }

    #[test]
    fn h_index_examples() {
        assert_eq!(h_index(&[0.0], &[0.0], &[0.0], 0.0, 1.0, 0.001).unwrap(), 0.0);
        assert_eq!(h_index(&[0.0], &[0.0], &[1.0], 2.0, 1.0, 0.001).unwrap(), 4.0);
        assert!(h_index(&[0.0, 1.0], &[0.0], &[1.0, 1.0], 2.0, 1.0, 0.001).is_err());
    }

    #[test]
    fn csv_snapshot_layout() {
        let table = EstimateTable::filled(2, 0.9, 0.01).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,i,theta_hat");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("1,1,"));
        let v: f64 = lines[3].rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(v, 0.9);
    }
}
