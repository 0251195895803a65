use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Jitter added to the diagonal of the standardized Gram matrix so collinear
/// or constant columns still give a unique solution.
pub const RIDGE_JITTER: f64 = 1e-8;

/// Multiple linear regression fitted on z-scored features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub n_features: usize,
    /// Input columns used, in coefficient order.
    pub features: Vec<usize>,
    /// Intercept in standardized space; equals the (weighted) target mean.
    pub intercept: f64,
    /// One coefficient per used column, in standardized space.
    pub coefficients: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .features
                .iter()
                .zip(&self.coefficients)
                .zip(self.mean.iter().zip(&self.scale))
                .map(|((&c, b), (m, s))| b * (row[c] - m) / s)
                .sum::<f64>()
    }

    /// Intercept and slopes in the original feature units.
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        let slopes: Vec<f64> = self
            .coefficients
            .iter()
            .zip(&self.scale)
            .map(|(b, s)| b / s)
            .collect();
        let intercept = self.intercept
            - slopes
                .iter()
                .zip(&self.mean)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        (intercept, slopes)
    }
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major, p x p).
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Data("normal equations are not positive definite".into()));
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|k| l[i * p + k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| l[k * p + i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i * p + i];
    }
    Ok(x)
}

pub(crate) fn fit(x: &Matrix, y: &[f64], w: &[f64], features: &[usize]) -> Result<LinearModel> {
    let active: Vec<usize> = (0..x.rows()).filter(|&i| w[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::Data("linear regression needs at least one row".into()));
    }
    if active
        .iter()
        .any(|&i| !y[i].is_finite() || features.iter().any(|&c| !x.get(i, c).is_finite()))
    {
        return Err(Error::Data("linear regression inputs must be finite".into()));
    }
    let p = features.len();
    let total: f64 = active.iter().map(|&i| w[i]).sum();
    let y_mean = active.iter().map(|&i| w[i] * y[i]).sum::<f64>() / total;

    let mut mean = vec![0.0; p];
    for &i in &active {
        for (m, &c) in mean.iter_mut().zip(features) {
            *m += w[i] * x.get(i, c);
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut scale = vec![0.0; p];
    for &i in &active {
        for ((s, &c), m) in scale.iter_mut().zip(features).zip(&mean) {
            let d = x.get(i, c) - m;
            *s += w[i] * d * d;
        }
    }
    scale.iter_mut().for_each(|s| {
        let sd = (*s / total).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    });

    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut z = vec![0.0; p];
    for &i in &active {
        for (k, &c) in features.iter().enumerate() {
            z[k] = (x.get(i, c) - mean[k]) / scale[k];
        }
        let dy = y[i] - y_mean;
        for a in 0..p {
            rhs[a] += w[i] * z[a] * dy;
            for b in 0..=a {
                gram[a * p + b] += w[i] * z[a] * z[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[b * p + a] = gram[a * p + b];
        }
        gram[a * p + a] += RIDGE_JITTER;
    }
    let coefficients = if p == 0 {
        Vec::new()
    } else {
        // iterative refinement removes the jitter bias on well-posed systems
        let mut beta = cholesky_solve(&gram, &rhs, p)?;
        for _ in 0..3 {
            let resid: Vec<f64> = (0..p)
                .map(|a| {
                    let gb: f64 = (0..p)
                        .map(|b| {
                            let g = gram[a * p + b] - if a == b { RIDGE_JITTER } else { 0.0 };
                            g * beta[b]
                        })
                        .sum();
                    rhs[a] - gb
                })
                .collect();
            let step = cholesky_solve(&gram, &resid, p)?;
            beta.iter_mut().zip(step).for_each(|(b, d)| *b += d);
        }
        beta
    };
    Ok(LinearModel {
        n_features: x.cols(),
        features: features.to_vec(),
        intercept: y_mean,
        coefficients,
        mean,
        scale,
    })
}

/// Ordinary least squares on every column of `x`.
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    if y.len() != x.rows() {
        return Err(Error::Data(format!(
            "{} targets for {} rows",
            y.len(),
            x.rows()
        )));
    }
    let features: Vec<usize> = (0..x.cols()).collect();
    fit(x, y, &vec![1.0; x.rows()], &features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.5, 7.0];
        let x = Matrix::new(5, 1, xs.to_vec()).unwrap();
        let y: Vec<f64> = xs.iter().map(|v| 3.0 + 2.0 * v).collect();
        let m = ols_fit(&x, &y).unwrap();
        let (b0, b) = m.raw_coefficients();
        assert!((b0 - 3.0).abs() < 1e-8, "{b0}");
        assert!((b[0] - 2.0).abs() < 1e-8, "{}", b[0]);
    }

    #[test]
    fn constant_target() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [2.0, -1.0], [4.0, 0.0]]).unwrap();
        let m = ols_fit(&x, &[4.0, 4.0, 4.0]).unwrap();
        assert!(m.coefficients.iter().all(|b| b.abs() < 1e-12));
        assert_eq!(m.intercept, 4.0);
        // the standardized zero vector is the column-mean row
        assert_eq!(m.predict_row(&m.mean.clone()), 4.0);
    }

    #[test]
    fn collinear_columns_survive() {
        let rows: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 2.0 * i as f64, 1.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let m = ols_fit(&x, &y).unwrap();
        for (r, t) in x.iter_rows().zip(&y) {
            assert!((m.predict_row(r) - t).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(ols_fit(&Matrix::zeros(0, 1), &[]).is_err());
        let x = Matrix::from_rows(&[[f64::NAN], [1.0]]).unwrap();
        assert!(ols_fit(&x, &[1.0, 2.0]).is_err());
    }
}
