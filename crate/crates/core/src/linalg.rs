//! Cholesky factorization with escalating diagonal jitter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Jitter always added to the diagonal before the first attempt.
pub const JITTER_START: f64 = 1e-8;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// A Cholesky factor of `A + jitter·I`.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl JitteredCholesky {
    /// Factorizes `matrix + jitter·I`, starting at [`JITTER_START`] and
    /// multiplying the jitter by ten on each failure up to [`JITTER_MAX`].
    pub fn new(matrix: &DMatrix<f64>, context: &str) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape(format!(
                "cannot factor a {}x{} matrix",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(context, "matrix has non-finite entries"));
        }
        let mut jitter = JITTER_START;
        loop {
            let mut m = matrix.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                let pivots_ok = chol.l_dirty().diagonal().iter().all(|&d| d > 0.0 && d.is_finite());
                if pivots_ok {
                    return Ok(Self { chol, jitter });
                }
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(Error::numeric(
                    context,
                    format!("Cholesky failed with jitter up to {JITTER_MAX:e}"),
                ));
            }
        }
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_spd_with_minimal_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let c = JitteredCholesky::new(&a, "t").unwrap();
        assert_eq!(c.jitter(), JITTER_START);
        let x = c.solve(&DVector::from_vec(vec![1.0, 2.0]));
        let r = &a * &x;
        assert!((r[0] - 1.0).abs() < 1e-7 && (r[1] - 2.0).abs() < 1e-7);
        assert!((c.log_det() - (8.0f64 + 7e-8).ln()).abs() < 1e-6);
    }

    #[test]
    fn escalates_on_singular_psd() {
        // rank one, needs jitter to be positive definite
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let c = JitteredCholesky::new(&a, "t").unwrap();
        assert!(c.jitter() >= JITTER_START && c.jitter() <= JITTER_MAX);
    }

    #[test]
    fn indefinite_matrix_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = JitteredCholesky::new(&a, "task-7").unwrap_err();
        assert!(err.to_string().contains("task-7"));
    }
}
