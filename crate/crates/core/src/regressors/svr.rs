//! Epsilon-insensitive support vector regression trained with an SMO solver
//! (maximal-gain second-order working-set selection) on the standard dual.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeding;

pub const DEFAULT_ROW_CAP: usize = 5000;
/// Stopping tolerance on the maximal KKT violation.
pub const KKT_TOLERANCE: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    /// RBF spread; ignored by the linear kernel.
    pub gamma: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    /// Larger training sets are replaced by a seeded uniform subsample.
    #[serde(default = "default_cap")]
    pub row_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_ROW_CAP
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Hyperparameter("SVR needs C > 0".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Hyperparameter("SVR needs epsilon >= 0".into()));
        }
        if self.kernel == Kernel::Rbf && !(self.gamma > 0.0) {
            return Err(Error::Hyperparameter("RBF kernel needs gamma > 0".into()));
        }
        if self.row_cap < 2 {
            return Err(Error::Hyperparameter("SVR row cap must be >= 2".into()));
        }
        Ok(())
    }
}

pub fn kernel_value(kernel: Kernel, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match kernel {
        Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        Kernel::Rbf => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-gamma * d2).exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub n_features: usize,
    pub features: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub kernel: Kernel,
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha - alpha*` per support vector; bounded by C in magnitude.
    pub dual_coef: Vec<f64>,
    /// Position of each support vector among the rows the solver saw.
    pub support_indices: Vec<usize>,
    /// Rows (of the input matrix) the solver was trained on.
    pub training_rows: Vec<usize>,
    pub bias: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvrModel {
    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        self.features
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&c, (m, s))| (row[c] - m) / s)
            .collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let z = self.standardize(row);
        self.bias
            + self
                .support_vectors
                .iter()
                .zip(&self.dual_coef)
                .map(|(sv, a)| a * kernel_value(self.kernel, self.gamma, sv, &z))
                .sum::<f64>()
    }
}

/// Solution of the epsilon-SVR dual over `2n` variables `[alpha; alpha*]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    /// Decision function is `sum coef_i k(x_i, x) - rho`.
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DualSolution {
    pub fn coef(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.alpha_star)
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// Minimizes `1/2 (a-a*)' K (a-a*) + eps sum(a+a*) - y'(a-a*)` subject to
/// `sum(a-a*) = 0` and `0 <= a, a* <= C`, given the full kernel matrix.
pub fn solve_dual(k: &Matrix, y: &[f64], c: f64, epsilon: f64, tol: f64, max_iter: usize) -> DualSolution {
    let n = y.len();
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let kk = |a: usize, b: usize| k.get(a % n, b % n);
    let p: Vec<f64> = (0..l)
        .map(|t| if t < n { epsilon - y[t] } else { epsilon + y[t - n] })
        .collect();
    let qd: Vec<f64> = (0..l).map(|t| kk(t, t)).collect();
    let mut alpha = vec![0.0; l];
    let mut grad = p.clone();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // working set selection
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..l {
            if sign(t) > 0.0 {
                if alpha[t] < c && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = t;
                }
            } else if alpha[t] > 0.0 && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_diff_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let ki = k.row(i_sel % n);
            let qi = qd[i_sel];
            // y_t y_i Q_it = K on both halves, so quad = Q_ii + Q_tt - 2 K
            for t in 0..n {
                if alpha[t] > 0.0 {
                    let g = grad[t];
                    if g >= gmax2 {
                        gmax2 = g;
                    }
                    let grad_diff = gmax + g;
                    if grad_diff > 0.0 {
                        let mut quad = qi + qd[t] - 2.0 * ki[t];
                        if quad <= 0.0 {
                            quad = TAU;
                        }
                        let obj = -(grad_diff * grad_diff) / quad;
                        if obj <= obj_diff_min {
                            j_sel = t;
                            obj_diff_min = obj;
                        }
                    }
                }
            }
            for t in n..l {
                if alpha[t] < c {
                    let g = grad[t];
                    if -g >= gmax2 {
                        gmax2 = -g;
                    }
                    let grad_diff = gmax - g;
                    if grad_diff > 0.0 {
                        let mut quad = qi + qd[t] - 2.0 * ki[t - n];
                        if quad <= 0.0 {
                            quad = TAU;
                        }
                        let obj = -(grad_diff * grad_diff) / quad;
                        if obj <= obj_diff_min {
                            j_sel = t;
                            obj_diff_min = obj;
                        }
                    }
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax + gmax2 < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (yi, yj) = (sign(i), sign(j));
        let q_ij = yi * yj * kk(i, j);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        if yi != yj {
            let mut quad = qd[i] + qd[j] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        let (ki, kj) = (k.row(i % n), k.row(j % n));
        let (ci, cj) = (yi * dai, yj * daj);
        let (upper, lower) = grad.split_at_mut(n);
        for t in 0..n {
            let v = ki[t] * ci + kj[t] * cj;
            upper[t] += v;
            lower[t] -= v;
        }
    }

    // bias from free variables, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if alpha[t] >= c {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    };
    let objective = 0.5 * (0..l).map(|t| alpha[t] * (grad[t] + p[t])).sum::<f64>();
    DualSolution {
        alpha_star: alpha.split_off(n),
        alpha,
        rho,
        objective,
        iterations,
        converged,
    }
}

pub(crate) fn fit(x: &Matrix, y: &[f64], w: &[f64], features: &[usize], params: &SvrParams, seed: u64) -> Result<SvrModel> {
    params.validate()?;
    let mut rows: Vec<usize> = (0..x.rows()).filter(|&i| w[i] > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::Data("SVR needs at least one training row".into()));
    }
    if rows.len() > params.row_cap {
        let mut rng = seeding::rng(seed);
        let mut picked: Vec<usize> = sample(&mut rng, rows.len(), params.row_cap)
            .into_iter()
            .map(|k| rows[k])
            .collect();
        picked.sort_unstable();
        rows = picked;
    }
    let sub = x.select_rows(&rows).select_columns(features);
    let targets: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    if !sub.is_finite() || targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("SVR inputs must be finite".into()));
    }
    let std = crate::matrix::Standardizer::fit(&sub);
    let z = std.transform(&sub);
    let n = rows.len();
    let mut k = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let v = kernel_value(params.kernel, params.gamma, z.row(a), z.row(b));
            k.set(a, b, v);
            k.set(b, a, v);
        }
    }
    // test error plateaus well before the tolerance is met on large-C linear fits
    let max_iter = (25 * n).max(10_000);
    let sol = solve_dual(&k, &targets, params.c, params.epsilon, KKT_TOLERANCE, max_iter);
    let coef = sol.coef();
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    let mut support_indices = Vec::new();
    for (i, &a) in coef.iter().enumerate() {
        if a != 0.0 {
            support_vectors.push(z.row(i).to_vec());
            dual_coef.push(a);
            support_indices.push(i);
        }
    }
    Ok(SvrModel {
        n_features: x.cols(),
        features: features.to_vec(),
        mean: std.mean,
        scale: std.scale,
        kernel: params.kernel,
        gamma: params.gamma,
        c: params.c,
        epsilon: params.epsilon,
        support_vectors,
        dual_coef,
        support_indices,
        training_rows: rows,
        bias: -sol.rho,
        dual_objective: sol.objective,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Fits an SVR on every column of `x`.
pub fn svr_fit(x: &Matrix, y: &[f64], params: &SvrParams, seed: u64) -> Result<SvrModel> {
    if y.len() != x.rows() {
        return Err(Error::Data(format!("{} targets for {} rows", y.len(), x.rows())));
    }
    let features: Vec<usize> = (0..x.cols()).collect();
    fit(x, y, &vec![1.0; x.rows()], &features, params, seed)
}
