use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmg::ROW_SUM_TOL;
use crate::error::{Error, Result};
use crate::graph::{outside_class_of_zero, period, support_adjacency};

/// Tolerance on `||d^T P - d^T||_inf`.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;
/// Relative tolerance on the row-independence of Kemeny's constant.
pub const KEMENY_TOL: f64 = 1e-8;

/// Row-major `n x n` transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ChainMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("transition matrix", n * n, data.len()));
        }
        if n == 0 {
            return Err(Error::analysis("empty chain"));
        }
        for i in 0..n {
            let row = &data[i * n..(i + 1) * n];
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::analysis(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::analysis(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    /// Errors unless the chain is irreducible and aperiodic.
    pub fn check_ergodic(&self) -> Result<()> {
        let adj = support_adjacency(self.n, |i, j| self.get(i, j));
        let outside = outside_class_of_zero(&adj);
        if !outside.is_empty() {
            return Err(Error::analysis(format!(
                "reducible chain: states {outside:?} are not in the communicating class of state 0"
            )));
        }
        let p = period(&adj);
        if p != 1 {
            return Err(Error::analysis(format!("periodic chain with period {p}")));
        }
        Ok(())
    }
}

/// Solve `d^T P = d^T`, `sum d = 1` directly.
pub fn stationary_distribution(p: &ChainMatrix) -> Result<Vec<f64>> {
    p.check_ergodic()?;
    let n = p.len();
    let mut a = p.matrix().transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let d = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::analysis("singular stationary system"))?;
    let d: Vec<f64> = d.iter().copied().collect();
    let residual = (0..n)
        .map(|j| ((0..n).map(|i| d[i] * p.get(i, j)).sum::<f64>() - d[j]).abs())
        .fold(0.0, f64::max);
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(Error::analysis(format!("stationary residual {residual:e} too large")));
    }
    Ok(d)
}

/// Fundamental matrix `Z = (I - P + 1 d^T)^{-1}`.
pub fn fundamental_matrix(p: &ChainMatrix, d: &[f64]) -> Result<DMatrix<f64>> {
    let n = p.len();
    let mut a = DMatrix::identity(n, n) - p.matrix();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] += d[j];
        }
    }
    a.try_inverse().ok_or_else(|| Error::analysis("singular fundamental matrix"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kemeny {
    /// `sum_j d_j m_ij`, with `m_jj = 0`.
    pub kappa: f64,
    /// The same sum evaluated from every starting state.
    pub per_state: Vec<f64>,
    pub convention: String,
}

pub const KEMENY_CONVENTION: &str = "m_jj = 0; kappa = sum_j d_j m_ij (no +1)";

/// Mean first-passage times `m[i][j]` with `m_jj = 0`.
pub fn mean_first_passage(p: &ChainMatrix) -> Result<Vec<Vec<f64>>> {
    p.check_ergodic()?;
    let n = p.len();
    let mut m = vec![vec![0.0; n]; n];
    for j in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| k != j).collect();
        if others.is_empty() {
            continue;
        }
        let r = others.len();
        let mut a = DMatrix::identity(r, r);
        for (x, &i) in others.iter().enumerate() {
            for (y, &k) in others.iter().enumerate() {
                a[(x, y)] -= p.get(i, k);
            }
        }
        let sol = a
            .lu()
            .solve(&DVector::from_element(r, 1.0))
            .ok_or_else(|| Error::analysis(format!("singular first-passage system for target {j}")))?;
        for (x, &i) in others.iter().enumerate() {
            m[i][j] = sol[x];
        }
    }
    Ok(m)
}

pub fn kemeny_constant(p: &ChainMatrix) -> Result<Kemeny> {
    let d = stationary_distribution(p)?;
    let m = mean_first_passage(p)?;
    let per_state: Vec<f64> = m
        .iter()
        .map(|row| row.iter().zip(&d).map(|(m, d)| m * d).sum())
        .collect();
    let kappa = per_state[0];
    let spread = per_state.iter().map(|k| (k - kappa).abs()).fold(0.0, f64::max);
    if spread > KEMENY_TOL * kappa.abs().max(1.0) {
        return Err(Error::analysis(format!(
            "Kemeny sum depends on the starting state (spread {spread:e}); chain is ill-conditioned"
        )));
    }
    Ok(Kemeny {
        kappa,
        per_state,
        convention: KEMENY_CONVENTION.to_string(),
    })
}
