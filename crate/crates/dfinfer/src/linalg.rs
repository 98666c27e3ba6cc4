//! Small dense symmetric solves for least-squares style fits.

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Gram matrix is declared singular.
const PIVOT_TOL: f64 = 1e-10;

/// Cholesky factor `L` (row-major, lower triangular) of a symmetric matrix.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    d: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub(crate) fn new(a: &[f64], d: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), d * d);
        let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut s = a[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if s <= PIVOT_TOL * scale {
                        return Err(Error::RankDeficient { dim: d });
                    }
                    l[i * d + i] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        Ok(Self { d, l })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut y = b.to_vec();
        for i in 0..d {
            for k in 0..i {
                y[i] -= self.l[i * d + k] * y[k];
            }
            y[i] /= self.l[i * d + i];
        }
        for i in (0..d).rev() {
            for k in i + 1..d {
                y[i] -= self.l[k * d + i] * y[k];
            }
            y[i] /= self.l[i * d + i];
        }
        y
    }
}

/// `X^T X + ridge * I` for rows of equal length `d`.
pub(crate) fn gram<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize, ridge: f64) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let ri = r[i];
            for j in 0..=i {
                g[i * d + j] += ri * r[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            g[j * d + i] = g[i * d + j];
        }
        g[i * d + i] += ridge;
    }
    g
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
