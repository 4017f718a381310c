/// Square lower-triangular matrix stored row by row; row `t` holds the
/// `t + 1` entries `(t, 0..=t)`. Entries above the diagonal read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    rows: Vec<Vec<f64>>,
}

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        LowerTriangular {
            rows: (0..dim).map(|t| vec![0.0; t + 1]).collect(),
        }
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        LowerTriangular {
            rows: (0..dim).map(|t| vec![value; t + 1]).collect(),
        }
    }

    /// Builds from explicit rows; row `t` must have length `t + 1`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Option<Self> {
        rows.iter()
            .enumerate()
            .all(|(t, r)| r.len() == t + 1)
            .then_some(LowerTriangular { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col > row {
            0.0
        } else {
            self.rows[row][col]
        }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.rows[t]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.rows.iter().enumerate().map(|(t, r)| r[t]).collect()
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    /// Largest Euclidean row norm.
    pub fn max_row_norm(&self) -> f64 {
        self.rows.iter().map(|r| norm2(r)).fold(0.0, f64::max)
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
