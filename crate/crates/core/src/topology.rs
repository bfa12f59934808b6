//! Communication graphs and their mixing matrices.
//!
//! A [`MixingMatrix`] is symmetric, doubly stochastic and nonnegative, with
//! second-largest absolute eigenvalue `lambda < 1`. One gossip round is
//! [`mix`].

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::ParamVec;

/// Tolerance on constructed weights (row/column sums, symmetry).
pub const WEIGHT_TOL: f64 = 1e-12;

/// Default ring self-weight.
pub const DEFAULT_SELF_WEIGHT: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("ring needs at least 3 workers, got {0}")]
    RingTooSmall(usize),
    #[error("need at least one worker")]
    Empty,
    #[error("self weight {0} outside (0,1)")]
    SelfWeight(f64),
    #[error("weight matrix is {rows}x{cols}, not square")]
    NotSquare { rows: usize, cols: usize },
    #[error("weights not symmetric at ({row},{col})")]
    Asymmetric { row: usize, col: usize },
    #[error("negative weight at ({row},{col})")]
    Negative { row: usize, col: usize },
    #[error("row sum ≠ 1: row {row} sums to {sum}")]
    RowSum { row: usize, sum: f64 },
    #[error("column sum ≠ 1: column {col} sums to {sum}")]
    ColumnSum { col: usize, sum: f64 },
    #[error("lambda ≥ 1 (lambda = {0}); the graph is not connected enough to mix")]
    NoSpectralGap(f64),
    #[error("non-finite weight at ({row},{col})")]
    NonFinite { row: usize, col: usize },
    #[error("mix: expected {expected} vectors, got {got}")]
    WorkerCount { expected: usize, got: usize },
    #[error("mix: vector {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error("weights file {path}: {msg}")]
    File { path: String, msg: String },
}

/// Symmetric doubly stochastic gossip weights with cached `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    lambda: f64,
}

impl MixingMatrix {
    /// Ring with `self_weight` on the diagonal and `(1 - self_weight)/2` to
    /// each neighbour.
    pub fn ring(k: usize, self_weight: f64) -> Result<Self, TopologyError> {
        if k < 3 {
            return Err(TopologyError::RingTooSmall(k));
        }
        if !(self_weight > 0.0 && self_weight < 1.0) {
            return Err(TopologyError::SelfWeight(self_weight));
        }
        let side = (1.0 - self_weight) / 2.0;
        let mut w = DMatrix::zeros(k, k);
        for i in 0..k {
            w[(i, i)] = self_weight;
            w[(i, (i + 1) % k)] = side;
            w[(i, (i + k - 1) % k)] = side;
        }
        Self::validated(w)
    }

    /// [`ring`](Self::ring) extended to `K < 3`: with `K = 2` both neighbours
    /// are the same worker, which receives `1 - self_weight`; `K = 1` is `[1]`.
    pub fn cycle(k: usize, self_weight: f64) -> Result<Self, TopologyError> {
        match k {
            0 => Err(TopologyError::Empty),
            1 => Self::complete(1),
            2 => {
                if !(self_weight > 0.0 && self_weight < 1.0) {
                    return Err(TopologyError::SelfWeight(self_weight));
                }
                let o = 1.0 - self_weight;
                Self::validated(DMatrix::from_row_slice(2, 2, &[self_weight, o, o, self_weight]))
            }
            _ => Self::ring(k, self_weight),
        }
    }

    /// Fully connected averaging: every entry `1/K`, `lambda = 0`.
    pub fn complete(k: usize) -> Result<Self, TopologyError> {
        if k == 0 {
            return Err(TopologyError::Empty);
        }
        Ok(Self {
            weights: DMatrix::from_element(k, k, 1.0 / k as f64),
            lambda: 0.0,
        })
    }

    /// Validate user-supplied weights.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, TopologyError> {
        Self::validated(weights)
    }

    /// Parse a whitespace-separated K×K matrix, one row per line. Blank lines
    /// and `#` comments are ignored.
    pub fn parse_weights(text: &str) -> Result<DMatrix<f64>, String> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| format!("line {}: cannot parse {tok:?}", n + 1))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let k = rows.len();
        if k == 0 {
            return Err("no rows".into());
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != k) {
            return Err(format!("row {} has {} entries, expected {k}", i + 1, r.len()));
        }
        Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
    }

    pub fn from_file(path: &Path) -> Result<Self, TopologyError> {
        let file_err = |msg: String| TopologyError::File {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let w = Self::parse_weights(&text).map_err(file_err)?;
        Self::from_weights(w)
    }

    fn validated(w: DMatrix<f64>) -> Result<Self, TopologyError> {
        let (rows, cols) = w.shape();
        if rows != cols {
            return Err(TopologyError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(TopologyError::Empty);
        }
        let k = rows;
        for i in 0..k {
            for j in 0..k {
                let v = w[(i, j)];
                if !v.is_finite() {
                    return Err(TopologyError::NonFinite { row: i, col: j });
                }
                if v < 0.0 {
                    return Err(TopologyError::Negative { row: i, col: j });
                }
                if (v - w[(j, i)]).abs() > WEIGHT_TOL {
                    return Err(TopologyError::Asymmetric { row: i, col: j });
                }
            }
        }
        for i in 0..k {
            let sum: f64 = w.row(i).iter().sum();
            if (sum - 1.0).abs() > WEIGHT_TOL {
                return Err(TopologyError::RowSum { row: i, sum });
            }
            let sum: f64 = w.column(i).iter().sum();
            if (sum - 1.0).abs() > WEIGHT_TOL {
                return Err(TopologyError::ColumnSum { col: i, sum });
            }
        }
        // exact symmetry from here on
        let w = DMatrix::from_fn(k, k, |i, j| {
            if i <= j {
                w[(i, j)]
            } else {
                w[(j, i)]
            }
        });
        let lambda = second_abs_eigenvalue(&w);
        if lambda >= 1.0 - WEIGHT_TOL {
            return Err(TopologyError::NoSpectralGap(lambda));
        }
        Ok(Self { weights: w, lambda })
    }

    pub fn workers(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, k: usize, j: usize) -> f64 {
        self.weights[(k, j)]
    }

    /// Second-largest absolute eigenvalue.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `1 - lambda`.
    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.lambda
    }
}

/// Second-largest absolute eigenvalue of a symmetric matrix; 0 for 1×1.
fn second_abs_eigenvalue(w: &DMatrix<f64>) -> f64 {
    if w.nrows() == 1 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(w.clone());
    let mut abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| b.total_cmp(a));
    abs[1]
}

/// One synchronous gossip round: output `k` is `Σ_j w_kj · values_j`.
///
/// Evaluated as `v_k + Σ_{j≠k} w_kj (v_j − v_k)`, which is the same sum for a
/// row-stochastic `W` and returns the input bit-for-bit when all inputs agree.
pub fn mix(w: &MixingMatrix, values: &[ParamVec]) -> Result<Vec<ParamVec>, TopologyError> {
    let k = w.workers();
    if values.len() != k {
        return Err(TopologyError::WorkerCount {
            expected: k,
            got: values.len(),
        });
    }
    let dim = values[0].len();
    if let Some((index, v)) = values.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(TopologyError::Dimension {
            index,
            expected: dim,
            got: v.len(),
        });
    }
    Ok((0..k)
        .map(|i| {
            let mut out = values[i].clone();
            for (j, vj) in values.iter().enumerate() {
                let wij = w.weights[(i, j)];
                if j == i || wij == 0.0 {
                    continue;
                }
                for (o, (a, b)) in out.iter_mut().zip(vj.iter().zip(values[i].iter())) {
                    *o += wij * (a - b);
                }
            }
            out
        })
        .collect())
}
