//! Covariance functions on embedded feature vectors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Rbf,
    Linear,
}

/// Log-parameterized kernel hyperparameters. The linear kernel ignores the
/// lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub kind: KernelKind,
    pub log_amplitude: f64,
    pub log_lengthscale: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self::rbf(1.0, 1.0)
    }
}

/// Partial derivatives of a single kernel evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrads {
    pub d_z: Vec<f64>,
    pub d_z2: Vec<f64>,
    pub d_log_amplitude: f64,
    pub d_log_lengthscale: f64,
}

impl KernelParams {
    pub fn rbf(amplitude: f64, lengthscale: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            log_amplitude: amplitude.ln(),
            log_lengthscale: lengthscale.ln(),
        }
    }

    pub fn linear(amplitude: f64) -> Self {
        Self {
            kind: KernelKind::Linear,
            log_amplitude: amplitude.ln(),
            log_lengthscale: 0.0,
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.log_amplitude.exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn eval(&self, z: &[f64], z2: &[f64]) -> Result<f64> {
        check_dims(z, z2)?;
        Ok(self.eval_unchecked(z, z2))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, z: &[f64], z2: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let ell2 = (2.0 * self.log_lengthscale).exp();
                (self.log_amplitude - 0.5 * sq_dist(z, z2) / ell2).exp()
            }
            KernelKind::Linear => self.amplitude() * dot(z, z2),
        }
    }

    pub fn grads(&self, z: &[f64], z2: &[f64]) -> Result<KernelGrads> {
        check_dims(z, z2)?;
        let k = self.eval_unchecked(z, z2);
        Ok(match self.kind {
            KernelKind::Rbf => {
                let ell2 = (2.0 * self.log_lengthscale).exp();
                let d_z: Vec<f64> = z.iter().zip(z2).map(|(a, b)| -k * (a - b) / ell2).collect();
                let d_z2 = d_z.iter().map(|v| -v).collect();
                KernelGrads {
                    d_z,
                    d_z2,
                    d_log_amplitude: k,
                    d_log_lengthscale: k * sq_dist(z, z2) / ell2,
                }
            }
            KernelKind::Linear => {
                let a = self.amplitude();
                KernelGrads {
                    d_z: z2.iter().map(|v| a * v).collect(),
                    d_z2: z.iter().map(|v| a * v).collect(),
                    d_log_amplitude: k,
                    d_log_lengthscale: 0.0,
                }
            }
        })
    }

    /// `K[i, j] = k(Z_i, Z2_j)` over the rows of both matrices.
    pub fn matrix(&self, z: &DMatrix<f64>, z2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != z2.ncols() {
            return Err(Error::Shape(format!(
                "kernel inputs have {} and {} columns",
                z.ncols(),
                z2.ncols()
            )));
        }
        let rows = row_vecs(z);
        let rows2 = row_vecs(z2);
        Ok(DMatrix::from_fn(rows.len(), rows2.len(), |i, j| {
            self.eval_unchecked(&rows[i], &rows2[j])
        }))
    }

    /// Symmetric Gram matrix of the rows of `z`; the lower triangle mirrors the upper.
    pub fn gram(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let rows = row_vecs(z);
        let n = rows.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval_unchecked(&rows[i], &rows[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// `k(z, z)` for every row.
    pub fn diag(&self, z: &DMatrix<f64>) -> Vec<f64> {
        row_vecs(z).iter().map(|r| self.eval_unchecked(r, r)).collect()
    }
}

/// Rows of a matrix as owned contiguous vectors.
pub(crate) fn row_vecs(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_dims(z: &[f64], z2: &[f64]) -> Result<()> {
    if z.len() != z2.len() {
        return Err(Error::Shape(format!(
            "kernel arguments have lengths {} and {}",
            z.len(),
            z2.len()
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rbf_closed_forms() {
        let p = KernelParams::rbf(1.0, 3.7);
        assert_eq!(p.eval(&[0.2, -1.0], &[0.2, -1.0]).unwrap(), 1.0);
        let p = KernelParams::rbf(1.0, 1.0);
        let v = p.eval(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn linear_is_scaled_dot() {
        let p = KernelParams::linear(1.0);
        assert_eq!(p.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn dimension_mismatch() {
        let p = KernelParams::default();
        assert!(matches!(p.eval(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(2, 2);
        assert!(p.matrix(&a, &b).is_err());
    }

    #[test]
    fn gram_diagonal_and_symmetry() {
        let p = KernelParams::rbf(2.5, 0.7);
        let z = DMatrix::from_fn(6, 3, |i, j| ((i * 3 + j) as f64).sin() * 2.0);
        let k = p.gram(&z);
        for i in 0..6 {
            assert!((k[(i, i)] - 2.5).abs() < 1e-14);
            for j in 0..6 {
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        assert_eq!(k, p.matrix(&z, &z).unwrap());
    }

    #[test]
    fn rbf_stationary_gradient_at_equal_points() {
        let p = KernelParams::rbf(1.3, 0.9);
        let g = p.grads(&[0.4, 1.1], &[0.4, 1.1]).unwrap();
        assert!(g.d_z.iter().all(|&v| v == 0.0));
        assert_eq!(g.d_log_amplitude, p.eval(&[0.4, 1.1], &[0.4, 1.1]).unwrap());
    }

    fn fd_check(p: KernelParams, z: Vec<f64>, z2: Vec<f64>) {
        let g = p.grads(&z, &z2).unwrap();
        let h = 1e-6;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-3);
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (p.eval(&zp, &z2).unwrap() - p.eval(&zm, &z2).unwrap()) / (2.0 * h);
            assert!(close(g.d_z[i], fd), "d_z[{i}] {} vs {fd}", g.d_z[i]);
            let mut zp = z2.clone();
            let mut zm = z2.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (p.eval(&z, &zp).unwrap() - p.eval(&z, &zm).unwrap()) / (2.0 * h);
            assert!(close(g.d_z2[i], fd), "d_z2[{i}] {} vs {fd}", g.d_z2[i]);
        }
        let mut pp = p;
        let mut pm = p;
        pp.log_amplitude += h;
        pm.log_amplitude -= h;
        let fd = (pp.eval(&z, &z2).unwrap() - pm.eval(&z, &z2).unwrap()) / (2.0 * h);
        assert!(close(g.d_log_amplitude, fd));
        let mut pp = p;
        let mut pm = p;
        pp.log_lengthscale += h;
        pm.log_lengthscale -= h;
        let fd = (pp.eval(&z, &z2).unwrap() - pm.eval(&z, &z2).unwrap()) / (2.0 * h);
        assert!(close(g.d_log_lengthscale, fd), "{} vs {fd}", g.d_log_lengthscale);
    }

    proptest! {
        #[test]
        fn rbf_grads_match_finite_differences(
            la in -1.0f64..1.0,
            ll in -0.5f64..1.0,
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..5),
        ) {
            let z: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let z2: Vec<f64> = pts.iter().map(|p| p.1).collect();
            fd_check(KernelParams { kind: KernelKind::Rbf, log_amplitude: la, log_lengthscale: ll }, z, z2);
        }

        #[test]
        fn linear_grads_match_finite_differences(
            la in -1.0f64..1.0,
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..5),
        ) {
            let z: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let z2: Vec<f64> = pts.iter().map(|p| p.1).collect();
            fd_check(KernelParams::linear(la.exp()), z, z2);
        }

        #[test]
        fn rbf_symmetric_and_bounded(
            la in -2.0f64..2.0,
            ll in -1.0f64..1.0,
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..8),
        ) {
            let p = KernelParams { kind: KernelKind::Rbf, log_amplitude: la, log_lengthscale: ll };
            let z: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let z2: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let a = p.eval(&z, &z2).unwrap();
            prop_assert_eq!(a, p.eval(&z2, &z).unwrap());
            prop_assert!(a >= 0.0 && a <= la.exp());
            if z != z2 {
                prop_assert!(a < la.exp() || sq_dist(&z, &z2) < 1e-12);
            }
        }
    }
}
