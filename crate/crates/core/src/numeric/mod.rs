//! Dense numeric primitives: matrices, activation functions, flat parameter
//! vectors and a reverse-mode tape.
//!
//! Everything is `f64`. Matrices are row-major and deliberately minimal —
//! models in this crate only ever need matrix-vector products, so no general
//! linear-algebra dependency is pulled in.

pub mod fdiff;
pub mod param;
pub mod tape;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer. The buffer length must be
    /// `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dim {
                op: "Mat::from_vec",
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `W x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dim {
                op: "matvec",
                expected: format!("vector of length {}", self.cols),
                got: format!("{}", x.len()),
            });
        }
        Ok(matvec_raw(&self.data, self.rows, self.cols, x))
    }

    /// `W x + b`.
    pub fn affine(&self, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.rows {
            return Err(Error::Dim {
                op: "affine",
                expected: format!("bias of length {}", self.rows),
                got: format!("{}", b.len()),
            });
        }
        let mut y = self.matvec(x)?;
        for (yi, bi) in y.iter_mut().zip(b) {
            *yi += bi;
        }
        Ok(y)
    }
}

/// Unchecked row-major matrix-vector product over a flat buffer.
pub(crate) fn matvec_raw(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows];
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        y[i] = acc;
    }
    y
}

/// Pointwise activation functions used by the layer equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    Identity,
    Tanh,
    /// Logistic sigmoid 1 / (1 + e^{-x}).
    Logistic,
}

impl Act {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Act::Identity => x,
            Act::Tanh => x.tanh(),
            Act::Logistic => logistic(x),
        }
    }

    /// Derivative expressed through the *output* value `y = f(x)`.
    pub fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Act::Identity => 1.0,
            Act::Tanh => 1.0 - y * y,
            Act::Logistic => y * (1.0 - y),
        }
    }

    /// Output range, used to bound learned initial states.
    /// `Identity` has no intrinsic range; callers substitute a configured cap.
    pub fn range(self) -> Option<(f64, f64)> {
        match self {
            Act::Identity => None,
            Act::Tanh => Some((-1.0, 1.0)),
            Act::Logistic => Some((0.0, 1.0)),
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Max-norm distance between two equal-length slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_zero_matrix_returns_bias() {
        let w = Mat::zeros(2, 3);
        let y = w.affine(&[1.0, 2.0, 3.0], &[4.0, -1.0]).unwrap();
        assert_eq!(y, vec![4.0, -1.0]);
    }

    #[test]
    fn affine_identity_returns_input() {
        let w = Mat::identity(3);
        let y = w.affine(&[1.5, -2.0, 0.25], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn affine_small_fixture() {
        // [[1,2],[3,4]] * [1,1] + [1,0] = [4,7]
        let w = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = w.affine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(y, vec![4.0, 7.0]);
    }

    #[test]
    fn affine_dim_mismatch_is_error_not_panic() {
        let w = Mat::zeros(2, 3);
        assert!(matches!(
            w.affine(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::Dim { .. })
        ));
        assert!(matches!(
            w.affine(&[1.0, 2.0, 3.0], &[0.0]),
            Err(Error::Dim { .. })
        ));
    }

    #[test]
    fn activation_fixed_points() {
        assert_eq!(Act::Tanh.apply(0.0), 0.0);
        assert_eq!(Act::Logistic.apply(0.0), 0.5);
        assert_eq!(Act::Tanh.apply(1.0), 0.7615941559557649);
        assert_eq!(Act::Identity.apply(-3.25), -3.25);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let eps = 1e-6;
        for act in [Act::Identity, Act::Tanh, Act::Logistic] {
            for &x in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
                let num = (act.apply(x + eps) - act.apply(x - eps)) / (2.0 * eps);
                let ana = act.deriv_from_output(act.apply(x));
                assert!(
                    (num - ana).abs() < 1e-8,
                    "{act:?} at {x}: numeric {num} vs analytic {ana}"
                );
            }
        }
    }
}
